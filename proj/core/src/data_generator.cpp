#include "kdf/data.hpp"
#include "kdf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace kdf::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kTrajectoryStep = 1.0; // metres between polyline vertices

enum class LandmarkKind { Plane, Box, Clutter };

struct Landmark {
    Vec2 center;
    Matrix points; // K x 3, world frame
};

struct Trajectory {
    std::vector<Vec2> vertices;
    std::vector<Vec2> headings; // unit tangent per vertex

    // Linear interpolation at arc length s (clamped to the path).
    void at(double s, Vec2& position, Vec2& tangent) const {
        const double max_s = static_cast<double>(vertices.size() - 1) * kTrajectoryStep;
        s = std::clamp(s, 0.0, max_s);
        auto i = static_cast<std::size_t>(s / kTrajectoryStep);
        if (i >= vertices.size() - 1) {
            i = vertices.size() - 2;
        }
        const double f = s / kTrajectoryStep - static_cast<double>(i);
        position = (1.0 - f) * vertices[i] + f * vertices[i + 1];
        tangent = headings[i];
    }
};

Trajectory make_trajectory(Rng& rng, double length) {
    // Heading is a sum of slow sinusoids so the path bends but rarely loops.
    constexpr int kModes = 3;
    const double wavelengths[kModes] = {900.0, 400.0, 150.0};
    double amp[kModes];
    double phase[kModes];
    for (int k = 0; k < kModes; ++k) {
        amp[k] = rng.uniform(0.2, 0.6) * (k == 0 ? 1.0 : 0.6);
        phase[k] = rng.uniform(0.0, kTwoPi);
    }
    const double heading0 = rng.uniform(0.0, kTwoPi);

    const auto n = static_cast<std::size_t>(std::ceil(length / kTrajectoryStep)) + 1;
    Trajectory traj;
    traj.vertices.reserve(n);
    traj.headings.reserve(n);
    Vec2 p = Vec2::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(i) * kTrajectoryStep;
        double theta = heading0;
        for (int k = 0; k < kModes; ++k) {
            theta += amp[k] * std::sin(kTwoPi * s / wavelengths[k] + phase[k]);
        }
        const Vec2 dir(std::cos(theta), std::sin(theta));
        traj.vertices.push_back(p);
        traj.headings.push_back(dir);
        p += kTrajectoryStep * dir;
    }
    return traj;
}

LandmarkKind pick_kind(Rng& rng, const DomainStyle& style) {
    const double total = style.plane_weight + style.box_weight + style.clutter_weight;
    const double u = rng.uniform() * total;
    if (u < style.plane_weight) {
        return LandmarkKind::Plane;
    }
    if (u < style.plane_weight + style.box_weight) {
        return LandmarkKind::Box;
    }
    return LandmarkKind::Clutter;
}

Matrix plane_points(Rng& rng, const Vec2& center, double height_scale) {
    constexpr int kPoints = 40;
    const double length = rng.uniform(4.0, 16.0);
    const double height = rng.uniform(2.0, 8.0) * height_scale;
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const Vec2 dir(std::cos(angle), std::sin(angle));
    Matrix pts(kPoints, 3);
    for (int k = 0; k < kPoints; ++k) {
        const double t = rng.uniform(-0.5, 0.5) * length;
        const Vec2 xy = center + t * dir;
        pts(k, 0) = xy.x();
        pts(k, 1) = xy.y();
        pts(k, 2) = rng.uniform(0.0, height);
    }
    return pts;
}

Matrix box_points(Rng& rng, const Vec2& center, double height_scale) {
    constexpr int kPoints = 40;
    const double sx = rng.uniform(2.0, 6.0);
    const double sy = rng.uniform(2.0, 6.0);
    const double sz = rng.uniform(1.5, 5.0) * height_scale;
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    // Side faces and roof, chosen in proportion to their area.
    const double side_x = sx * sz;
    const double side_y = sy * sz;
    const double roof = sx * sy;
    const double total = 2.0 * side_x + 2.0 * side_y + roof;
    Matrix pts(kPoints, 3);
    for (int k = 0; k < kPoints; ++k) {
        double u = rng.uniform() * total;
        double lx = 0.0;
        double ly = 0.0;
        double lz = 0.0;
        if (u < 2.0 * side_x) {
            lx = rng.uniform(-0.5, 0.5) * sx;
            ly = (u < side_x ? -0.5 : 0.5) * sy;
            lz = rng.uniform(0.0, sz);
        } else if ((u -= 2.0 * side_x) < 2.0 * side_y) {
            lx = (u < side_y ? -0.5 : 0.5) * sx;
            ly = rng.uniform(-0.5, 0.5) * sy;
            lz = rng.uniform(0.0, sz);
        } else {
            lx = rng.uniform(-0.5, 0.5) * sx;
            ly = rng.uniform(-0.5, 0.5) * sy;
            lz = sz;
        }
        pts(k, 0) = center.x() + c * lx - s * ly;
        pts(k, 1) = center.y() + s * lx + c * ly;
        pts(k, 2) = lz;
    }
    return pts;
}

Matrix clutter_points(Rng& rng, const Vec2& center, double height_scale) {
    constexpr int kPoints = 24;
    const double radius = rng.uniform(0.5, 2.0);
    const double height = rng.uniform(0.5, 4.0) * height_scale;
    Matrix pts(kPoints, 3);
    for (int k = 0; k < kPoints; ++k) {
        pts(k, 0) = center.x() + rng.normal(0.0, radius);
        pts(k, 1) = center.y() + rng.normal(0.0, radius);
        pts(k, 2) = std::abs(rng.normal(0.0, height));
    }
    return pts;
}

std::vector<Landmark> make_landmarks(Rng& rng, const Trajectory& traj, const DomainSpec& spec,
                                     double radius) {
    const auto& style = spec.style;
    const double span = spec.trajectory_length + 2.0 * radius;
    const auto count = static_cast<std::size_t>(std::ceil(span / style.landmark_spacing));
    std::vector<Landmark> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double s = rng.uniform(-radius, spec.trajectory_length + radius);
        Vec2 pos;
        Vec2 tangent;
        traj.at(s, pos, tangent);
        // Extrapolate past the ends along the end tangents.
        if (s < 0.0) {
            pos += s * tangent;
        } else if (s > spec.trajectory_length) {
            pos += (s - spec.trajectory_length) * tangent;
        }
        const Vec2 normal(-tangent.y(), tangent.x());
        const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double lateral = side * rng.uniform(3.0, 0.9 * radius);
        const Vec2 center = pos + lateral * normal;

        Landmark lm;
        lm.center = center;
        switch (pick_kind(rng, style)) {
        case LandmarkKind::Plane:
            lm.points = plane_points(rng, center, style.height_scale);
            break;
        case LandmarkKind::Box:
            lm.points = box_points(rng, center, style.height_scale);
            break;
        case LandmarkKind::Clutter:
            lm.points = clutter_points(rng, center, style.height_scale);
            break;
        }
        out.push_back(std::move(lm));
    }
    return out;
}

PointScan render_scan(Rng& rng, const std::vector<Landmark>& landmarks, const Vec2& pose,
                      double radius, const DomainStyle& style, int points_per_scan,
                      std::vector<std::uint32_t>& visible_ids) {
    struct PoolEntry {
        std::uint32_t landmark;
        Eigen::Index row;
    };
    std::vector<PoolEntry> pool;
    visible_ids.clear();
    const double r2 = radius * radius;
    for (std::size_t id = 0; id < landmarks.size(); ++id) {
        const auto& lm = landmarks[id];
        if ((lm.center - pose).squaredNorm() >= r2) {
            continue;
        }
        bool contributed = false;
        for (Eigen::Index k = 0; k < lm.points.rows(); ++k) {
            const double dx = lm.points(k, 0) - pose.x();
            const double dy = lm.points(k, 1) - pose.y();
            if (dx * dx + dy * dy < r2) {
                pool.push_back({static_cast<std::uint32_t>(id), k});
                contributed = true;
            }
        }
        if (contributed) {
            visible_ids.push_back(static_cast<std::uint32_t>(id));
        }
    }

    const auto n = static_cast<Eigen::Index>(points_per_scan);
    auto n_transient = static_cast<Eigen::Index>(std::floor(style.transient_fraction * points_per_scan));
    if (pool.empty()) {
        n_transient = n;
    }

    PointScan scan;
    scan.points.resize(n, 3);
    const double z_offset = 0.25 * radius;
    Eigen::Index row = 0;
    for (; row < n - n_transient; ++row) {
        const auto& e = pool[rng.index(pool.size())];
        const auto& p = landmarks[e.landmark].points;
        scan.points(row, 0) = p(e.row, 0) - pose.x() + rng.normal(0.0, style.noise_scale);
        scan.points(row, 1) = p(e.row, 1) - pose.y() + rng.normal(0.0, style.noise_scale);
        scan.points(row, 2) = p(e.row, 2) - z_offset + rng.normal(0.0, style.noise_scale);
    }
    if (n_transient > 0) {
        // Vehicles and pedestrians: a few blobs unique to this scan.
        const int blobs = 1 + static_cast<int>(rng.index(3));
        Matrix centers(blobs, 2);
        for (int b = 0; b < blobs; ++b) {
            const double rho = radius * std::sqrt(rng.uniform()) * 0.8;
            const double phi = rng.uniform(0.0, kTwoPi);
            centers(b, 0) = rho * std::cos(phi);
            centers(b, 1) = rho * std::sin(phi);
        }
        for (; row < n; ++row) {
            const auto b = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(blobs)));
            scan.points(row, 0) = centers(b, 0) + rng.normal(0.0, 1.0);
            scan.points(row, 1) = centers(b, 1) + rng.normal(0.0, 1.0);
            scan.points(row, 2) = std::abs(rng.normal(0.0, 1.0)) - z_offset;
        }
    }
    if (style.sensor_tilt != 0.0) {
        const double c = std::cos(style.sensor_tilt);
        const double s = std::sin(style.sensor_tilt);
        const Eigen::VectorXd y = scan.points.col(1);
        const Eigen::VectorXd z = scan.points.col(2);
        scan.points.col(1) = c * y - s * z;
        scan.points.col(2) = s * y + c * z;
    }
    scan.points /= radius;
    scan.points = scan.points.cwiseMax(-1.0).cwiseMin(1.0);
    return scan;
}

} // namespace

void DomainSpec::validate() const {
    if (n_places < 2) {
        throw ConfigError("domain.n_places must be >= 2 (got " + std::to_string(n_places) + ")");
    }
    if (!(trajectory_length > 0.0)) {
        throw ConfigError("domain.trajectory_length must be positive");
    }
    if (sessions < 1 || sessions > n_places) {
        throw ConfigError("domain.sessions must be in [1, n_places]");
    }
    if (domain_id < 0) {
        throw ConfigError("domain.domain_id must be >= 0");
    }
    if (visibility_radius < 0.0) {
        throw ConfigError("domain.visibility_radius must be >= 0");
    }
    const auto& s = style;
    if (s.plane_weight < 0.0 || s.box_weight < 0.0 || s.clutter_weight < 0.0 ||
        s.plane_weight + s.box_weight + s.clutter_weight <= 0.0) {
        throw ConfigError("domain.style weights must be non-negative with a positive sum");
    }
    if (s.noise_scale < 0.0) {
        throw ConfigError("domain.style.noise_scale must be >= 0");
    }
    if (!(s.height_scale > 0.0)) {
        throw ConfigError("domain.style.height_scale must be positive");
    }
    if (!(s.landmark_spacing > 0.0)) {
        throw ConfigError("domain.style.landmark_spacing must be positive");
    }
    if (s.transient_fraction < 0.0 || s.transient_fraction >= 1.0) {
        throw ConfigError("domain.style.transient_fraction must be in [0, 1)");
    }
    if (!std::isfinite(s.sensor_tilt)) {
        throw ConfigError("domain.style.sensor_tilt must be finite");
    }
}

void PairPolicy::validate() const {
    if (!(pos_train > 0.0)) {
        throw ConfigError("policy.pos_train must be positive");
    }
    if (!(neg_train > pos_train)) {
        throw ConfigError("policy.neg_train must exceed policy.pos_train");
    }
    if (!(pos_test > 0.0)) {
        throw ConfigError("policy.pos_test must be positive");
    }
}

std::vector<PlaceSample> generate_domain(const DomainSpec& spec, const PairPolicy& policy,
                                         int points_per_scan) {
    spec.validate();
    policy.validate();
    if (points_per_scan < 1) {
        throw ConfigError("points_per_scan must be >= 1");
    }
    const double radius = spec.visibility_radius > 0.0 ? spec.visibility_radius : 3.0 * policy.pos_train;

    Rng world_rng(derive_seed(spec.seed, {0x77}));
    const Trajectory traj = make_trajectory(world_rng, spec.trajectory_length);
    const std::vector<Landmark> landmarks = make_landmarks(world_rng, traj, spec, radius);

    std::vector<PlaceSample> out;
    out.reserve(static_cast<std::size_t>(spec.n_places));
    const int base = spec.n_places / spec.sessions;
    const int extra = spec.n_places % spec.sessions;
    std::int64_t next_id = static_cast<std::int64_t>(spec.domain_id) * 1000000;
    for (int session = 0; session < spec.sessions; ++session) {
        const int count = base + (session < extra ? 1 : 0);
        Rng pose_rng(derive_seed(spec.seed, {0x5e55, static_cast<std::uint64_t>(session)}));
        for (int i = 0; i < count; ++i) {
            // Stratified arc positions keep coverage even along the path.
            const double s = (static_cast<double>(i) + pose_rng.uniform()) * spec.trajectory_length /
                             static_cast<double>(count);
            Vec2 pos;
            Vec2 tangent;
            traj.at(s, pos, tangent);
            const Vec2 normal(-tangent.y(), tangent.x());
            pos += pose_rng.normal(0.0, 1.0) * normal;

            PlaceSample sample;
            sample.pose = pos;
            sample.arc = s;
            sample.domain_id = spec.domain_id;
            sample.session = session;
            sample.sample_id = next_id++;
            Rng scan_rng(derive_seed(spec.seed, {0x5ca7, static_cast<std::uint64_t>(session),
                                                 static_cast<std::uint64_t>(i)}));
            sample.scan = render_scan(scan_rng, landmarks, pos, radius, spec.style, points_per_scan,
                                      sample.landmarks);
            out.push_back(std::move(sample));
        }
    }
    return out;
}

DomainSplit split_domain(std::span<const PlaceSample> samples, const DomainSpec& spec,
                         double train_fraction, double gap) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train_fraction must be in (0, 1)");
    }
    if (gap < 0.0) {
        throw ConfigError("split gap must be >= 0");
    }
    const double boundary = train_fraction * spec.trajectory_length;
    DomainSplit split;
    for (const auto& s : samples) {
        if (std::isnan(s.arc)) {
            throw UsageError("split_domain needs generator metadata (sample " +
                             std::to_string(s.sample_id) + " has none)");
        }
        if (s.arc < boundary - 0.5 * gap) {
            split.train.push_back(s);
        } else if (s.arc > boundary + 0.5 * gap) {
            (s.session == 0 ? split.database : split.queries).push_back(s);
        }
    }
    return split;
}

} // namespace kdf::data
