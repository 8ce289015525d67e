#ifndef KDF_DATA_HPP
#define KDF_DATA_HPP

#include "kdf/common.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

/**
 * @file data.hpp
 *
 * Place-recognition corpora: a deterministic multi-domain scan generator,
 * an on-disk corpus reader/writer, and distance-based pair labelling.
 */

namespace kdf::data {

/// One scan: N x 3 points in normalized coordinates, every value in [-1, 1].
struct PointScan {
    Matrix points;

    std::size_t count() const noexcept { return static_cast<std::size_t>(points.rows()); }
};

/// A scan together with where it was taken.
struct PlaceSample {
    PointScan scan;
    Vec2 pose = Vec2::Zero(); ///< planar position, metres
    int domain_id = 0;
    std::int64_t sample_id = 0;
    int session = 0;
    /// Arc length along the generating trajectory; NaN for corpora read from disk.
    double arc = std::numeric_limits<double>::quiet_NaN();
    /// Sorted ids of generator landmarks contributing points (empty when loaded).
    std::vector<std::uint32_t> landmarks;
};

/// Distance thresholds (metres) that turn pose distance into pair labels.
struct PairPolicy {
    double pos_train = 10.0;
    double neg_train = 50.0;
    double pos_test = 25.0;

    void validate() const;

    static PairPolicy oxford() { return {10.0, 50.0, 25.0}; }
    static PairPolicy mulran() { return {10.0, 20.0, 10.0}; }
};

/// Structural mixture that distinguishes one environment from another.
struct DomainStyle {
    double plane_weight = 0.4;   ///< vertical walls
    double box_weight = 0.3;     ///< building blocks, parked vehicles
    double clutter_weight = 0.3; ///< vegetation, poles
    double noise_scale = 0.05;   ///< Gaussian jitter, metres
    double height_scale = 1.0;   ///< multiplies landmark heights
    double landmark_spacing = 3.0; ///< metres of trajectory per landmark
    double transient_fraction = 0.1; ///< share of points from per-scan transient blobs
    double sensor_tilt = 0.0;        ///< mounting pitch in radians, rotates scans about the x axis
};

struct DomainSpec {
    std::uint64_t seed = 0;
    int n_places = 600;
    double trajectory_length = 1200.0;
    int sessions = 2;
    int domain_id = 0;
    /// Sensor range in metres; 0 selects 3 x pos_train of the pair policy.
    double visibility_radius = 0.0;
    DomainStyle style;

    void validate() const;
};

/// Builds n_places samples spread over `sessions` traversals of one trajectory.
///
/// Landmarks are planes, boxes and clutter blobs scattered along a smooth
/// planar path. A scan at a pose is drawn from the points of landmarks inside
/// the visibility radius, plus transient blobs and jitter, expressed relative
/// to the pose and divided by the radius. Pure function of its arguments.
std::vector<PlaceSample> generate_domain(const DomainSpec& spec, const PairPolicy& policy,
                                         int points_per_scan);

/// Geographically disjoint train / test partition of one generated domain.
struct DomainSplit {
    std::vector<PlaceSample> train;
    std::vector<PlaceSample> database; ///< test region, session 0
    std::vector<PlaceSample> queries;  ///< test region, sessions >= 1
};

/// Samples with arc < train_fraction * length - gap/2 train; those beyond
/// train_fraction * length + gap/2 are test. Requires generator metadata.
DomainSplit split_domain(std::span<const PlaceSample> samples, const DomainSpec& spec,
                         double train_fraction, double gap);

/// Reads `poses.csv` plus one `.f32` scan per row from `dir`.
std::vector<PlaceSample> load_corpus(const std::filesystem::path& dir, const PairPolicy& policy,
                                     int domain_id = 0);

/// Writes samples in the format read by load_corpus. Creates `dir` if needed.
void write_corpus(const std::filesystem::path& dir, std::span<const PlaceSample> samples);

enum class PairLabel : std::int8_t { Negative = -1, Unlabeled = 0, Positive = 1 };
enum class PairMode { Train, Test };

/// Symmetric, irreflexive label table over a list of samples.
class PairRelation {
public:
    PairRelation() = default;
    explicit PairRelation(std::size_t n) : n_(n), labels_(n * n, PairLabel::Unlabeled) {}

    std::size_t size() const noexcept { return n_; }
    PairLabel at(std::size_t i, std::size_t j) const { return labels_[i * n_ + j]; }
    bool positive(std::size_t i, std::size_t j) const { return at(i, j) == PairLabel::Positive; }
    bool negative(std::size_t i, std::size_t j) const { return at(i, j) == PairLabel::Negative; }

    /// Sets both (i, j) and (j, i). Diagonal writes are ignored.
    void set(std::size_t i, std::size_t j, PairLabel label);

private:
    std::size_t n_ = 0;
    std::vector<PairLabel> labels_;
};

/// Train mode: positive below pos_train, negative above neg_train, otherwise
/// unlabeled. Test mode: positive below pos_test, negative otherwise.
/// All samples must come from one domain.
PairRelation label_pairs(std::span<const PlaceSample> samples, const PairPolicy& policy,
                         PairMode mode);

/// Train-mode labels for a batch that may mix domains. Same-domain pairs use
/// that domain's policy; pairs from different domains are negative.
PairRelation label_mixed(std::span<const PlaceSample* const> samples,
                         std::span<const PairPolicy> policy_by_domain);

/// |A ∩ B| / min(|A|, |B|) over retained landmark ids; 0 when either is empty.
double landmark_overlap(const PlaceSample& a, const PlaceSample& b);

} // namespace kdf::data

#endif
