#include "kdf/diffnet.hpp"
#include "kdf/rng.hpp"

#include <cmath>
#include <string>

namespace kdf::nn {

namespace {

void fill_uniform(Matrix& m, Rng& rng, double limit) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = rng.uniform(-limit, limit);
        }
    }
}

struct Workspace {
    Matrix a1;
    Matrix a2;
};

// Forward pass for one scan; returns the pre-normalization embedding.
RowVector forward_scan(const EncoderParams& p, const Matrix& x, Workspace& ws, ScanCache* cache) {
    const Eigen::Index h = p.w1.cols();
    ws.a1.noalias() = x * p.w1;
    ws.a1.rowwise() += p.b1.row(0);
    ws.a1 = ws.a1.cwiseMax(0.0);
    ws.a2.noalias() = ws.a1 * p.w2;
    ws.a2.rowwise() += p.b2.row(0);

    // Strict '>' keeps the lowest index on ties.
    std::vector<int> argmax(static_cast<std::size_t>(h), 0);
    RowVector pooled(h);
    for (Eigen::Index c = 0; c < h; ++c) {
        int best = 0;
        double best_value = ws.a2(0, c);
        for (Eigen::Index r = 1; r < ws.a2.rows(); ++r) {
            if (ws.a2(r, c) > best_value) {
                best_value = ws.a2(r, c);
                best = static_cast<int>(r);
            }
        }
        argmax[static_cast<std::size_t>(c)] = best;
        // max of rectified values equals rectified max
        pooled(c) = best_value > 0.0 ? best_value : 0.0;
    }
    RowVector z = pooled * p.w3;
    z += p.b3.row(0);

    if (cache != nullptr) {
        cache->winner_x.resize(h, 3);
        cache->winner_h1.resize(h, h);
        cache->winner_mask1.resize(h, h);
        std::uint64_t sig = 0xcbf29ce484222325ULL;
        for (Eigen::Index c = 0; c < h; ++c) {
            const int r = argmax[static_cast<std::size_t>(c)];
            cache->winner_x.row(c) = x.row(r);
            cache->winner_h1.row(c) = ws.a1.row(r);
            for (Eigen::Index k = 0; k < h; ++k) {
                // a1 is already rectified, so > 0 is exactly the open half-line.
                const bool on = ws.a1(r, k) > 0.0;
                cache->winner_mask1(c, k) = on ? 1.0 : 0.0;
                const unsigned char bit = on ? 1 : 0;
                sig = fnv1a64(&bit, 1, sig);
            }
            const unsigned char pooled_on = pooled(c) > 0.0 ? 1 : 0;
            sig = fnv1a64(&pooled_on, 1, sig);
            sig = fnv1a64(&r, sizeof(r), sig);
        }
        cache->argmax = std::move(argmax);
        cache->pooled = pooled;
        cache->projected = z;
        cache->activation_signature = sig;
    }
    return z;
}

void check_params(const EncoderParams& p) {
    if (p.w1.rows() != 3 || p.b1.rows() != 1 || p.b1.cols() != p.w1.cols() || p.w2.rows() != p.w1.cols() ||
        p.w2.cols() != p.w1.cols() || p.b2.rows() != 1 || p.b2.cols() != p.w1.cols() ||
        p.w3.rows() != p.w1.cols() || p.b3.rows() != 1 || p.b3.cols() != p.w3.cols() || p.w1.cols() < 1 ||
        p.w3.cols() < 1) {
        throw UsageError("encoder parameters have inconsistent shapes");
    }
}

} // namespace

void EncoderConfig::validate() const {
    if (hidden < 1) {
        throw ConfigError("encoder.hidden must be >= 1");
    }
    if (dim < 1) {
        throw ConfigError("encoder.dim must be >= 1");
    }
}

EncoderParams init_params(std::uint64_t seed, int hidden, int dim) {
    if (hidden < 1 || dim < 1) {
        throw ConfigError("init_params: hidden and dim must be >= 1 (got h=" + std::to_string(hidden) +
                          ", D=" + std::to_string(dim) + ")");
    }
    Rng rng(derive_seed(seed, {0x1417}));
    EncoderParams p = EncoderParams::zeros(hidden, dim);
    fill_uniform(p.w1, rng, std::sqrt(6.0 / 3.0));
    fill_uniform(p.w2, rng, std::sqrt(6.0 / hidden));
    fill_uniform(p.w3, rng, std::sqrt(6.0 / (hidden + dim)));
    return p;
}

std::uint64_t param_hash(const EncoderParams& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Matrix* t : params.tensors()) {
        for (Eigen::Index i = 0; i < t->size(); ++i) {
            const float f = static_cast<float>(t->data()[i]);
            h = fnv1a64(&f, sizeof(f), h);
        }
    }
    return h;
}

std::vector<const data::PointScan*> scan_refs(std::span<const data::PlaceSample> samples) {
    std::vector<const data::PointScan*> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        out.push_back(&s.scan);
    }
    return out;
}

std::vector<const data::PointScan*> scan_refs(std::span<const data::PlaceSample* const> samples) {
    std::vector<const data::PointScan*> out;
    out.reserve(samples.size());
    for (const auto* s : samples) {
        out.push_back(&s->scan);
    }
    return out;
}

EmbeddingBatch encode(const EncoderParams& params, ScanRefs scans, bool normalize, Producer producer,
                      ForwardCache* cache) {
    check_params(params);
    if (!scans.empty()) {
        const auto n = scans.front()->points.rows();
        for (const auto* s : scans) {
            if (s->points.rows() != n || s->points.cols() != 3) {
                throw UsageError("encode: ragged batch (scans must share one point count)");
            }
        }
        if (n < 1) {
            throw UsageError("encode: scans must contain at least one point");
        }
    }
    EmbeddingBatch out;
    out.values.resize(static_cast<Eigen::Index>(scans.size()), params.dim());
    out.producer = producer;
    out.normalized = normalize;
    if (cache != nullptr) {
        cache->scans.assign(scans.size(), ScanCache{});
        cache->normalize = normalize;
    }
    Workspace ws;
    for (std::size_t b = 0; b < scans.size(); ++b) {
        RowVector z = forward_scan(params, scans[b]->points, ws, cache ? &cache->scans[b] : nullptr);
        if (normalize) {
            const double norm = z.norm();
            if (norm > 0.0) {
                z /= norm;
            }
        }
        out.values.row(static_cast<Eigen::Index>(b)) = z;
    }
    return out;
}

GradientBundle backward(const EncoderParams& params, const ForwardCache& cache, const Matrix& upstream) {
    check_params(params);
    const Eigen::Index h = params.w1.cols();
    const Eigen::Index dim = params.w3.cols();
    if (upstream.rows() != static_cast<Eigen::Index>(cache.scans.size()) || upstream.cols() != dim) {
        throw UsageError("backward: upstream is " + std::to_string(upstream.rows()) + "x" +
                         std::to_string(upstream.cols()) + ", expected " + std::to_string(cache.scans.size()) +
                         "x" + std::to_string(dim));
    }
    GradientBundle g = GradientBundle::zeros(static_cast<int>(h), static_cast<int>(dim));
    RowVector dz(dim);
    RowVector dpool(h);
    RowVector dh1(h);
    for (std::size_t b = 0; b < cache.scans.size(); ++b) {
        const ScanCache& sc = cache.scans[b];
        dz = upstream.row(static_cast<Eigen::Index>(b));
        if (cache.normalize) {
            const double norm = sc.projected.norm();
            if (norm > 0.0) {
                const RowVector e = sc.projected / norm;
                dz = (dz - e * e.dot(dz)) / norm;
            } else {
                dz.setZero();
            }
        }
        g.w3.noalias() += sc.pooled.transpose() * dz;
        g.b3 += dz;
        dpool.noalias() = dz * params.w3.transpose();
        for (Eigen::Index c = 0; c < h; ++c) {
            const double d = dpool(c);
            if (sc.pooled(c) <= 0.0 || d == 0.0) {
                continue;
            }
            g.w2.col(c) += d * sc.winner_h1.row(c).transpose();
            g.b2(0, c) += d;
            dh1 = d * params.w2.col(c).transpose();
            dh1 = dh1.cwiseProduct(sc.winner_mask1.row(c));
            g.w1.noalias() += sc.winner_x.row(c).transpose() * dh1;
            g.b1 += dh1;
        }
    }
    return g;
}

GradientBundle backward(const EncoderParams& params, ScanRefs scans, bool normalize, const Matrix& upstream) {
    ForwardCache cache;
    encode(params, scans, normalize, Producer::Unspecified, &cache);
    return backward(params, cache, upstream);
}

std::uint64_t kink_signature(const ForwardCache& cache) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& sc : cache.scans) {
        h = fnv1a64(&sc.activation_signature, sizeof(sc.activation_signature), h);
    }
    return h;
}

} // namespace kdf::nn
