#include "kdf/continual.hpp"
#include "kdf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kdf::continual {

namespace {

using data::PlaceSample;

// Same-domain neighbours within the domain's positive training radius.
std::vector<std::vector<std::size_t>> positive_lists(std::span<const PlaceSample> samples,
                                                     std::span<const data::PairPolicy> policies) {
    std::vector<std::vector<std::size_t>> lists(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double radius = policies[static_cast<std::size_t>(samples[i].domain_id)].pos_train;
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            if (samples[j].domain_id == samples[i].domain_id &&
                (samples[i].pose - samples[j].pose).norm() < radius) {
                lists[i].push_back(j);
                lists[j].push_back(i);
            }
        }
    }
    return lists;
}

void check_policies(std::span<const PlaceSample> samples, std::span<const data::PairPolicy> policies) {
    for (const auto& s : samples) {
        if (s.domain_id < 0 || static_cast<std::size_t>(s.domain_id) >= policies.size()) {
            throw ConfigError("no pair policy for domain " + std::to_string(s.domain_id));
        }
    }
}

// Appends `anchor` and, when room remains, one unused positive of it.
void take_pair(std::size_t anchor, const std::vector<std::vector<std::size_t>>& positives,
               std::vector<char>& used, std::size_t room, Rng& rng, std::vector<std::size_t>& out) {
    used[anchor] = 1;
    out.push_back(anchor);
    if (out.size() >= room) {
        return;
    }
    std::vector<std::size_t> free;
    for (std::size_t p : positives[anchor]) {
        if (!used[p]) {
            free.push_back(p);
        }
    }
    if (!free.empty()) {
        const std::size_t p = free[rng.index(free.size())];
        used[p] = 1;
        out.push_back(p);
    }
}

struct Batch {
    std::vector<std::size_t> fresh;  // indices into the new-domain samples
    std::vector<std::size_t> replay; // indices into the buffer
};

// One epoch of batches: every new sample appears once; replay exemplars are
// drawn per batch without repetition inside the batch.
std::vector<Batch> plan_epoch(std::size_t n_fresh, const std::vector<std::vector<std::size_t>>& fresh_pos,
                              std::size_t n_replay, const std::vector<std::vector<std::size_t>>& replay_pos,
                              std::size_t batch_size, double replay_fraction, Rng& rng) {
    std::size_t replay_slots = 0;
    if (n_replay > 0 && batch_size >= 4) {
        replay_slots = static_cast<std::size_t>(std::lround(static_cast<double>(batch_size) * replay_fraction));
        replay_slots = std::clamp<std::size_t>(replay_slots, 1, std::min(n_replay, batch_size - 2));
    }
    const std::size_t fresh_slots = batch_size - replay_slots;

    std::vector<std::size_t> order(n_fresh);
    for (std::size_t i = 0; i < n_fresh; ++i) {
        order[i] = i;
    }
    rng.shuffle(order);

    std::vector<Batch> batches;
    std::vector<char> used(n_fresh, 0);
    std::size_t cursor = 0;
    while (cursor < n_fresh) {
        Batch b;
        while (b.fresh.size() < fresh_slots && cursor < n_fresh) {
            const std::size_t a = order[cursor++];
            if (!used[a]) {
                take_pair(a, fresh_pos, used, fresh_slots, rng, b.fresh);
            }
        }
        if (b.fresh.size() < 2) {
            break;
        }
        if (replay_slots > 0) {
            std::vector<char> in_batch(n_replay, 0);
            std::size_t guard = 0;
            while (b.replay.size() < replay_slots && guard++ < 8 * n_replay) {
                const std::size_t a = rng.index(n_replay);
                if (!in_batch[a]) {
                    take_pair(a, replay_pos, in_batch, replay_slots, rng, b.replay);
                }
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

} // namespace

void StepPlan::validate() const {
    if (step_index < 0) {
        throw ConfigError("plan.step_index must be >= 0");
    }
    if (epochs < 1) {
        throw ConfigError("plan.epochs must be >= 1");
    }
    if (!(lr > 0.0)) {
        throw ConfigError("plan.lr must be positive");
    }
    if (lr_decay_epoch < 0 || !(lr_decay > 0.0)) {
        throw ConfigError("plan.lr_decay_epoch must be >= 0 and plan.lr_decay positive");
    }
    if (weight_decay < 0.0) {
        throw ConfigError("plan.weight_decay must be >= 0");
    }
    if (batch_start < 2) {
        throw ConfigError("plan.batch_start must be >= 2");
    }
    if (batch_start > batch_cap) {
        throw ConfigError("plan.batch_start must not exceed plan.batch_cap");
    }
    if (!(expansion_rate > 1.0)) {
        throw ConfigError("plan.expansion_rate must exceed 1");
    }
    if (objective.margin < 0.0) {
        throw ConfigError("plan.margin must be >= 0");
    }
    if (!(objective.tau > 0.0)) {
        throw ConfigError("plan.tau must be positive");
    }
    if (!(objective.temp > 0.0)) {
        throw ConfigError("plan.temp must be positive");
    }
    if (!objective.toggles.pr && !objective.toggles.rkd && !objective.toggles.dkd) {
        throw ConfigError("plan.toggles: at least one loss term must be on");
    }
    if (!(buffer_fraction > 0.0 && buffer_fraction < 1.0)) {
        throw ConfigError("plan.buffer_fraction must be in (0, 1)");
    }
    schedule().validate();
}

std::size_t maybe_expand_batch(std::size_t size, double active_fraction, const StepPlan& plan) {
    if (active_fraction >= plan.expansion_threshold) {
        return size;
    }
    // The small offset keeps products like 10 * 1.4 = 14.000000000000002 from rounding up.
    const double grown = std::ceil(static_cast<double>(size) * plan.expansion_rate - 1e-9);
    return std::min(static_cast<std::size_t>(grown), plan.batch_cap);
}

StepResult train_step(const nn::EncoderParams& init, const nn::ModelSnapshot* teacher, const StepData& data,
                      const MemoryBuffer* buffer, const StepPlan& plan, bool normalize, std::uint64_t seed,
                      const std::string& config_digest) {
    plan.validate();
    if (data.train.size() < 2) {
        throw ConfigError("training data for step " + std::to_string(plan.step_index) + " has fewer than 2 samples");
    }
    check_policies(data.train, data.policy_by_domain);
    const bool replay = buffer != nullptr && !buffer->empty();
    if (replay) {
        check_policies(buffer->entries(), data.policy_by_domain);
    }
    if (teacher != nullptr && (teacher->hidden() != init.hidden() || teacher->dim() != init.dim())) {
        throw UsageError("teacher snapshot and working model differ in shape");
    }

    loss::ObjectiveConfig objective = plan.objective;
    if (teacher == nullptr) {
        objective.toggles.rkd = false;
        objective.toggles.dkd = false;
        objective.toggles.pr = true;
    }
    const bool distill = teacher != nullptr && objective.toggles.distills();

    const auto fresh_pos = positive_lists(data.train, data.policy_by_domain);
    const std::span<const PlaceSample> replay_samples =
        replay ? std::span<const PlaceSample>(buffer->entries()) : std::span<const PlaceSample>();
    const auto replay_pos = positive_lists(replay_samples, data.policy_by_domain);

    StepResult result{nn::ModelSnapshot::freeze(init, plan.step_index, config_digest, normalize), {}, 0, {}, {}};
    if (teacher != nullptr) {
        result.teacher_hash_before = teacher->hash();
    }

    nn::EncoderParams params = init;
    nn::AdamState adam = nn::AdamState::for_params(params);
    const loss::RelaxationSchedule schedule = plan.schedule();
    std::size_t batch_size = plan.batch_start;

    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        Rng rng(derive_seed(seed, {0xe90c, static_cast<std::uint64_t>(epoch)}));
        const auto batches = plan_epoch(data.train.size(), fresh_pos, replay_samples.size(), replay_pos, batch_size,
                                        plan.buffer_fraction, rng);
        EpochRecord rec;
        rec.step = plan.step_index;
        rec.epoch = epoch;
        rec.lr = plan.lr_at(epoch);
        rec.batch_size = batch_size;
        double lambda = 0.0;
        if (teacher != nullptr) {
            lambda = loss::lambda_at(schedule, static_cast<double>(epoch));
            ++result.lambda_queries;
            rec.lambda = lambda;
        }

        int batch_index = 0;
        for (const Batch& b : batches) {
            std::vector<const PlaceSample*> members;
            members.reserve(b.fresh.size() + b.replay.size());
            for (std::size_t i : b.fresh) {
                members.push_back(&data.train[i]);
            }
            for (std::size_t i : b.replay) {
                members.push_back(&replay_samples[i]);
            }
            const auto relation = data::label_mixed(members, data.policy_by_domain);
            const auto scans = nn::scan_refs(std::span<const PlaceSample* const>(members));

            nn::ForwardCache cache;
            const nn::EmbeddingBatch current = nn::encode(params, scans, normalize, nn::Producer::New, &cache);
            Matrix previous;
            if (distill) {
                previous = teacher->encode(scans, nn::Producer::Old).values;
            }
            const loss::TotalLossValue l = loss::total_loss(previous, current.values, relation, objective, lambda);
            if (!std::isfinite(l.value) || !l.grad_new.allFinite()) {
                throw TrainingError("non-finite loss at step " + std::to_string(plan.step_index) + ", epoch " +
                                        std::to_string(epoch) + ", batch " + std::to_string(batch_index),
                                    plan.step_index, epoch, batch_index);
            }
            const nn::GradientBundle grads = nn::backward(params, cache, l.grad_new);
            try {
                nn::adam_step(params, grads, adam, rec.lr, plan.weight_decay);
            } catch (const TrainingError&) {
                throw TrainingError("non-finite gradient at step " + std::to_string(plan.step_index) + ", epoch " +
                                        std::to_string(epoch) + ", batch " + std::to_string(batch_index),
                                    plan.step_index, epoch, batch_index);
            }
            rec.loss_pr += l.pr;
            rec.loss_rkd += l.rkd;
            rec.loss_dkd += l.dkd;
            rec.active_fraction += l.active_fraction;
            ++batch_index;
        }
        if (batch_index > 0) {
            const double inv = 1.0 / batch_index;
            rec.loss_pr *= inv;
            rec.loss_rkd *= inv;
            rec.loss_dkd *= inv;
            rec.active_fraction *= inv;
        }
        result.log.push_back(rec);
        batch_size = maybe_expand_batch(batch_size, rec.active_fraction, plan);
    }

    result.snapshot = nn::ModelSnapshot::freeze(params, plan.step_index, config_digest, normalize);
    if (teacher != nullptr) {
        result.teacher_hash_after = teacher->hash();
    }
    return result;
}

StepResult train_first_step(const StepData& data, const StepPlan& plan, const nn::EncoderConfig& encoder,
                            std::uint64_t seed, const std::string& config_digest) {
    encoder.validate();
    if (plan.step_index != 0) {
        throw UsageError("train_first_step: plan.step_index must be 0");
    }
    const nn::EncoderParams init = nn::init_params(derive_seed(seed, {0x1a17}), encoder.hidden, encoder.dim);
    return train_step(init, nullptr, data, nullptr, plan, encoder.normalize, seed, config_digest);
}

StepResult train_continual_step(const nn::ModelSnapshot& old, const StepData& data, const MemoryBuffer& buffer,
                                const StepPlan& plan, std::uint64_t seed, const std::string& config_digest) {
    if (plan.step_index < 1) {
        throw UsageError("train_continual_step: plan.step_index must be >= 1");
    }
    if (plan.use_buffer && buffer.empty()) {
        throw ConfigError("replay buffer is empty at step " + std::to_string(plan.step_index));
    }
    return train_step(old.params(), &old, data, plan.use_buffer ? &buffer : nullptr, plan, old.normalize(), seed,
                      config_digest);
}

} // namespace kdf::continual
