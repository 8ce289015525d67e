#include "kdf/continual.hpp"
#include "kdf/rng.hpp"

#include <chrono>
#include <string>

namespace kdf::continual {

void ProtocolConfig::validate() const {
    if (points_per_scan < 1) {
        throw ConfigError("points_per_scan must be >= 1");
    }
    encoder.validate();
    if (domains.empty()) {
        throw ConfigError("domains: at least one domain is required");
    }
    for (std::size_t i = 0; i < domains.size(); ++i) {
        const auto& d = domains[i];
        const std::string field = "domains[" + std::to_string(i) + "]";
        try {
            d.spec.validate();
            d.policy.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(field + ": " + e.what());
        }
        if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) {
            throw ConfigError(field + ".train_fraction must be in (0, 1)");
        }
        if (d.split_gap < 0.0) {
            throw ConfigError(field + ".split_gap must be >= 0");
        }
        for (std::size_t j = 0; j < i; ++j) {
            const auto& o = domains[j].spec;
            if (o.seed == d.spec.seed && o.style.plane_weight == d.spec.style.plane_weight &&
                o.style.box_weight == d.spec.style.box_weight &&
                o.style.clutter_weight == d.spec.style.clutter_weight &&
                o.style.noise_scale == d.spec.style.noise_scale &&
                o.style.height_scale == d.spec.style.height_scale) {
                throw ConfigError(field + " repeats the seed and style of domains[" + std::to_string(j) + "]");
            }
        }
    }
    plan.validate();
    if (plan.use_buffer && buffer_capacity == 0) {
        throw ConfigError("buffer.capacity must be positive when the buffer is on");
    }
}

std::vector<PreparedDomain> prepare_domains(const ProtocolConfig& config) {
    config.validate();
    std::vector<PreparedDomain> out;
    out.reserve(config.domains.size());
    for (std::size_t i = 0; i < config.domains.size(); ++i) {
        PreparedDomain d{config.domains[i], {}};
        d.entry.spec.domain_id = static_cast<int>(i);
        const auto samples = data::generate_domain(d.entry.spec, d.entry.policy, config.points_per_scan);
        d.split = data::split_domain(samples, d.entry.spec, d.entry.train_fraction, d.entry.split_gap);
        if (d.split.train.size() < 2 || d.split.database.empty() || d.split.queries.empty()) {
            throw ConfigError("domain '" + d.entry.name + "' has an empty train or test split");
        }
        out.push_back(std::move(d));
    }
    return out;
}

ProtocolRun run_protocol(const ProtocolConfig& config, std::span<const PreparedDomain> domains,
                         std::uint64_t seed, const StepCallback& on_step) {
    config.validate();
    if (domains.size() != config.domains.size()) {
        throw UsageError("run_protocol: prepared domains do not match the configuration");
    }
    std::vector<data::PairPolicy> policies;
    for (const auto& d : domains) {
        policies.push_back(d.entry.policy);
    }

    ProtocolRun run;
    for (const auto& d : domains) {
        run.domain_names.push_back(d.entry.name);
    }
    MemoryBuffer buffer(config.buffer_capacity);
    for (std::size_t t = 0; t < domains.size(); ++t) {
        const auto started = std::chrono::steady_clock::now();
        StepPlan plan = config.plan;
        plan.step_index = static_cast<int>(t);
        const StepData data{domains[t].split.train, policies};
        const std::uint64_t step_seed = derive_seed(seed, {0x57e9, t});
        StepResult step = t == 0 ? train_first_step(data, plan, config.encoder, step_seed, config.digest)
                                 : train_continual_step(run.snapshots.back(), data, buffer, plan, step_seed,
                                                        config.digest);
        if (plan.use_buffer) {
            buffer = update_buffer(buffer, domains[t].split.train, static_cast<int>(t),
                                   derive_seed(seed, {0xb0ff, t}));
        }
        run.plans.push_back(plan);
        run.snapshots.push_back(step.snapshot);
        run.steps.push_back(std::move(step));
        run.step_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
        if (on_step) {
            on_step(run, static_cast<int>(t));
        }
    }
    return run;
}

} // namespace kdf::continual
