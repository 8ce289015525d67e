#include "kdf/data.hpp"

#include <algorithm>
#include <string>

namespace kdf::data {

void PairRelation::set(std::size_t i, std::size_t j, PairLabel label) {
    if (i == j) {
        return;
    }
    labels_[i * n_ + j] = label;
    labels_[j * n_ + i] = label;
}

namespace {

PairLabel classify(double distance, const PairPolicy& policy, PairMode mode) {
    if (mode == PairMode::Train) {
        if (distance < policy.pos_train) {
            return PairLabel::Positive;
        }
        return distance > policy.neg_train ? PairLabel::Negative : PairLabel::Unlabeled;
    }
    return distance < policy.pos_test ? PairLabel::Positive : PairLabel::Negative;
}

} // namespace

PairRelation label_pairs(std::span<const PlaceSample> samples, const PairPolicy& policy, PairMode mode) {
    policy.validate();
    for (const auto& s : samples) {
        if (s.domain_id != samples.front().domain_id) {
            throw UsageError("label_pairs: samples span domains " + std::to_string(samples.front().domain_id) +
                             " and " + std::to_string(s.domain_id));
        }
    }
    PairRelation rel(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            rel.set(i, j, classify((samples[i].pose - samples[j].pose).norm(), policy, mode));
        }
    }
    return rel;
}

PairRelation label_mixed(std::span<const PlaceSample* const> samples,
                         std::span<const PairPolicy> policy_by_domain) {
    PairRelation rel(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int di = samples[i]->domain_id;
        if (di < 0 || static_cast<std::size_t>(di) >= policy_by_domain.size()) {
            throw UsageError("label_mixed: no pair policy for domain " + std::to_string(di));
        }
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            if (samples[j]->domain_id != di) {
                rel.set(i, j, PairLabel::Negative);
                continue;
            }
            const double d = (samples[i]->pose - samples[j]->pose).norm();
            rel.set(i, j, classify(d, policy_by_domain[static_cast<std::size_t>(di)], PairMode::Train));
        }
    }
    return rel;
}

double landmark_overlap(const PlaceSample& a, const PlaceSample& b) {
    if (a.landmarks.empty() || b.landmarks.empty()) {
        return 0.0;
    }
    std::vector<std::uint32_t> common;
    std::set_intersection(a.landmarks.begin(), a.landmarks.end(), b.landmarks.begin(), b.landmarks.end(),
                          std::back_inserter(common));
    return static_cast<double>(common.size()) /
           static_cast<double>(std::min(a.landmarks.size(), b.landmarks.size()));
}

} // namespace kdf::data
