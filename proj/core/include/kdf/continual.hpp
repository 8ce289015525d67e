#ifndef KDF_CONTINUAL_HPP
#define KDF_CONTINUAL_HPP

#include "kdf/data.hpp"
#include "kdf/diffnet.hpp"
#include "kdf/losses.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

/**
 * @file continual.hpp
 *
 * Sequential training over a list of domains. Step 0 trains a fresh encoder
 * with the triplet objective only. Every later step copies the previous
 * snapshot into a new working model, keeps the previous snapshot frozen as
 * the teacher, and trains on the new domain plus replayed exemplars with the
 * combined objective.
 */

namespace kdf::continual {

/// Fixed-capacity replay store split equally over the domains seen so far.
class MemoryBuffer {
public:
    explicit MemoryBuffer(std::size_t capacity = 256) : capacity_(capacity) {}

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<data::PlaceSample>& entries() const noexcept { return entries_; }

    /// Domains in the order they were added.
    const std::vector<int>& domains() const noexcept { return domains_; }
    std::size_t count_for(int domain_id) const;

    /// Human-readable notes for domains that were smaller than their quota.
    const std::vector<std::string>& shortfalls() const noexcept { return shortfalls_; }

private:
    friend MemoryBuffer update_buffer(const MemoryBuffer&, std::span<const data::PlaceSample>, int,
                                      std::uint64_t);

    std::size_t capacity_;
    std::vector<data::PlaceSample> entries_; // grouped by domain, in insertion order
    std::vector<int> domains_;
    std::vector<std::string> shortfalls_;
};

/// Equal split of `capacity` over `domains` slots; the remainder goes to the earliest.
std::vector<std::size_t> buffer_quotas(std::size_t capacity, std::size_t domains);

/// Adds a completed domain: existing per-domain groups are subsampled to the
/// new quota and the new domain contributes a uniform random sample of its own.
MemoryBuffer update_buffer(const MemoryBuffer& buffer, std::span<const data::PlaceSample> completed,
                           int domain_id, std::uint64_t seed);

struct StepPlan {
    int step_index = 0;
    int epochs = 60;
    double lr = 1e-4;
    int lr_decay_epoch = 30; ///< epochs before this index use lr, the rest lr * lr_decay
    double lr_decay = 0.1;
    double weight_decay = 1e-3;
    std::size_t batch_start = 16;
    std::size_t batch_cap = 256;
    double expansion_rate = 1.4;
    double expansion_threshold = 0.7; ///< expand while the active-triplet fraction is below this
    loss::ObjectiveConfig objective;
    loss::LambdaVariant lambda_variant = loss::LambdaVariant::Literal;
    bool use_buffer = true;
    double buffer_fraction = 0.25; ///< share of each batch drawn from the replay buffer

    void validate() const;

    /// Learning rate for a zero-based epoch index.
    double lr_at(int epoch) const noexcept { return epoch < lr_decay_epoch ? lr : lr * lr_decay; }

    loss::RelaxationSchedule schedule() const {
        return {static_cast<double>(epochs), lambda_variant};
    }
};

/// ceil(size * rate) capped at batch_cap when the fraction is below the
/// threshold; otherwise unchanged.
std::size_t maybe_expand_batch(std::size_t size, double active_fraction, const StepPlan& plan);

struct EpochRecord {
    int step = 0;
    int epoch = 0;
    double lr = 0.0;
    std::optional<double> lambda; ///< absent at step 0
    std::size_t batch_size = 0;
    double loss_pr = 0.0;
    double loss_rkd = 0.0;
    double loss_dkd = 0.0;
    double active_fraction = 0.0;
};

struct StepResult {
    nn::ModelSnapshot snapshot;
    std::vector<EpochRecord> log;
    int lambda_queries = 0;                  ///< times the relaxation schedule was evaluated
    std::optional<std::uint64_t> teacher_hash_before;
    std::optional<std::uint64_t> teacher_hash_after;
};

/// What a training step learns from: the new domain's samples and a pair
/// policy per domain id (indexes must cover every domain in data and buffer).
struct StepData {
    std::span<const data::PlaceSample> train;
    std::span<const data::PairPolicy> policy_by_domain;
};

StepResult train_first_step(const StepData& data, const StepPlan& plan, const nn::EncoderConfig& encoder,
                            std::uint64_t seed, const std::string& config_digest);

StepResult train_continual_step(const nn::ModelSnapshot& old, const StepData& data, const MemoryBuffer& buffer,
                                const StepPlan& plan, std::uint64_t seed, const std::string& config_digest);

/// Shared training loop. With no teacher, distillation terms are skipped and
/// lambda is never evaluated; with no buffer, batches hold only new samples.
StepResult train_step(const nn::EncoderParams& init, const nn::ModelSnapshot* teacher, const StepData& data,
                      const MemoryBuffer* buffer, const StepPlan& plan, bool normalize, std::uint64_t seed,
                      const std::string& config_digest);

// ---------------------------------------------------------------------------
// Protocol

struct DomainEntry {
    std::string name;
    data::DomainSpec spec;
    data::PairPolicy policy;
    double train_fraction = 2.0 / 3.0;
    double split_gap = 25.0; ///< metres of trajectory left out between train and test regions
};

struct ProtocolConfig {
    int points_per_scan = 256;
    nn::EncoderConfig encoder;
    std::vector<DomainEntry> domains;
    StepPlan plan;
    std::size_t buffer_capacity = 256;
    std::string digest; ///< recorded in every snapshot

    void validate() const;
};

struct PreparedDomain {
    DomainEntry entry;
    data::DomainSplit split;
};

/// Generates and splits every domain of the protocol.
std::vector<PreparedDomain> prepare_domains(const ProtocolConfig& config);

struct ProtocolRun {
    std::vector<std::string> domain_names;
    std::vector<StepPlan> plans;
    std::vector<nn::ModelSnapshot> snapshots;
    std::vector<StepResult> steps;
    std::vector<double> step_seconds;
};

/// Called after each completed step; useful for progress output and snapshot writing.
using StepCallback = std::function<void(const ProtocolRun&, int step)>;

/// Trains domain 0, then each later domain in order.
ProtocolRun run_protocol(const ProtocolConfig& config, std::span<const PreparedDomain> domains,
                         std::uint64_t seed, const StepCallback& on_step = {});

} // namespace kdf::continual

#endif
