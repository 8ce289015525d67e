#include "kdf/continual.hpp"
#include "kdf/rng.hpp"

#include <algorithm>
#include <string>

namespace kdf::continual {

std::size_t MemoryBuffer::count_for(int domain_id) const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const auto& s) {
        return s.domain_id == domain_id;
    }));
}

std::vector<std::size_t> buffer_quotas(std::size_t capacity, std::size_t domains) {
    if (domains == 0) {
        return {};
    }
    std::vector<std::size_t> q(domains, capacity / domains);
    for (std::size_t i = 0; i < capacity % domains; ++i) {
        ++q[i];
    }
    return q;
}

MemoryBuffer update_buffer(const MemoryBuffer& buffer, std::span<const data::PlaceSample> completed,
                           int domain_id, std::uint64_t seed) {
    if (std::find(buffer.domains_.begin(), buffer.domains_.end(), domain_id) != buffer.domains_.end()) {
        throw UsageError("update_buffer: domain " + std::to_string(domain_id) + " is already buffered");
    }
    for (const auto& s : completed) {
        if (s.domain_id != domain_id) {
            throw UsageError("update_buffer: completed data contains domain " + std::to_string(s.domain_id) +
                             ", expected " + std::to_string(domain_id));
        }
    }
    MemoryBuffer out(buffer.capacity_);
    out.domains_ = buffer.domains_;
    out.domains_.push_back(domain_id);
    out.shortfalls_ = buffer.shortfalls_;
    const auto quotas = buffer_quotas(buffer.capacity_, out.domains_.size());
    const auto round = static_cast<std::uint64_t>(out.domains_.size());

    for (std::size_t d = 0; d + 1 < out.domains_.size(); ++d) {
        const int id = out.domains_[d];
        std::vector<const data::PlaceSample*> group;
        for (const auto& s : buffer.entries_) {
            if (s.domain_id == id) {
                group.push_back(&s);
            }
        }
        if (group.size() <= quotas[d]) {
            for (const auto* s : group) {
                out.entries_.push_back(*s);
            }
            continue;
        }
        Rng rng(derive_seed(seed, {0xb0ff, round, static_cast<std::uint64_t>(id)}));
        for (std::size_t i : rng.sample_indices(group.size(), quotas[d])) {
            out.entries_.push_back(*group[i]);
        }
    }

    const std::size_t quota = quotas.back();
    if (completed.size() <= quota) {
        if (completed.size() < quota) {
            out.shortfalls_.push_back("domain " + std::to_string(domain_id) + ": " +
                                      std::to_string(completed.size()) + " samples for a quota of " +
                                      std::to_string(quota));
        }
        out.entries_.insert(out.entries_.end(), completed.begin(), completed.end());
    } else {
        Rng rng(derive_seed(seed, {0xb0ff, round, static_cast<std::uint64_t>(domain_id)}));
        for (std::size_t i : rng.sample_indices(completed.size(), quota)) {
            out.entries_.push_back(completed[i]);
        }
    }
    return out;
}

} // namespace kdf::continual
