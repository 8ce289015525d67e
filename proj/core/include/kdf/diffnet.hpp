#ifndef KDF_DIFFNET_HPP
#define KDF_DIFFNET_HPP

#include "kdf/common.hpp"
#include "kdf/data.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

/**
 * @file diffnet.hpp
 *
 * Point-set encoder: shared per-point MLP (3 -> h -> h, rectifier), max pool
 * over points, linear projection (h -> D), optional L2 row normalization.
 * Forward and backward are explicit; there is no autograd tape.
 */

namespace kdf::nn {

/// Six tensors laid out as [point1.weight, point1.bias, point2.weight,
/// point2.bias, proj.weight, proj.bias]. Weights are fan_in x fan_out,
/// biases 1 x fan_out. The tag keeps parameters and gradients apart.
template <typename Tag>
struct TensorSet {
    static constexpr std::size_t kCount = 6;
    static constexpr std::array<std::string_view, kCount> kNames = {
        "point1.weight", "point1.bias", "point2.weight", "point2.bias", "proj.weight", "proj.bias"};

    Matrix w1, b1, w2, b2, w3, b3;

    static TensorSet zeros(int hidden, int dim) {
        TensorSet t;
        t.w1 = Matrix::Zero(3, hidden);
        t.b1 = Matrix::Zero(1, hidden);
        t.w2 = Matrix::Zero(hidden, hidden);
        t.b2 = Matrix::Zero(1, hidden);
        t.w3 = Matrix::Zero(hidden, dim);
        t.b3 = Matrix::Zero(1, dim);
        return t;
    }

    int hidden() const noexcept { return static_cast<int>(w1.cols()); }
    int dim() const noexcept { return static_cast<int>(w3.cols()); }

    std::array<Matrix*, kCount> tensors() noexcept { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    std::array<const Matrix*, kCount> tensors() const noexcept { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

    template <typename Other>
    bool same_shape(const TensorSet<Other>& other) const noexcept {
        const auto a = tensors();
        const auto b = other.tensors();
        for (std::size_t i = 0; i < kCount; ++i) {
            if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) {
                return false;
            }
        }
        return true;
    }

    bool all_finite() const noexcept {
        for (const Matrix* t : tensors()) {
            if (!t->allFinite()) {
                return false;
            }
        }
        return true;
    }

    std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const Matrix* t : tensors()) {
            n += static_cast<std::size_t>(t->size());
        }
        return n;
    }

    TensorSet& operator+=(const TensorSet& other) {
        auto a = tensors();
        const auto b = other.tensors();
        for (std::size_t i = 0; i < kCount; ++i) {
            *a[i] += *b[i];
        }
        return *this;
    }

    TensorSet& operator*=(double s) {
        for (Matrix* t : tensors()) {
            *t *= s;
        }
        return *this;
    }

    bool operator==(const TensorSet& other) const {
        const auto a = tensors();
        const auto b = other.tensors();
        for (std::size_t i = 0; i < kCount; ++i) {
            if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) {
                return false;
            }
        }
        return true;
    }
};

struct ParamTag {};
struct GradTag {};

using EncoderParams = TensorSet<ParamTag>;
using GradientBundle = TensorSet<GradTag>;

/// Architecture knobs shared by training and evaluation.
struct EncoderConfig {
    int hidden = 64;
    int dim = 32;
    bool normalize = true;

    void validate() const;
};

/// Deterministic initialization: He-uniform for the rectified point layers,
/// Glorot-uniform for the projection, zero biases.
EncoderParams init_params(std::uint64_t seed, int hidden, int dim);

/// FNV-1a over the float32 image of every tensor, in declaration order.
std::uint64_t param_hash(const EncoderParams& params);

enum class Producer { Unspecified, Old, New };

struct EmbeddingBatch {
    Matrix values; ///< N_b x D
    Producer producer = Producer::Unspecified;
    bool normalized = false;

    Eigen::Index size() const noexcept { return values.rows(); }
    Eigen::Index dim() const noexcept { return values.cols(); }
};

using ScanRefs = std::span<const data::PointScan* const>;

/// Pointers to the scans of `samples`, in order.
std::vector<const data::PointScan*> scan_refs(std::span<const data::PlaceSample> samples);
std::vector<const data::PointScan*> scan_refs(std::span<const data::PlaceSample* const> samples);

/// Per-scan state retained by the forward pass for the backward pass.
///
/// Max pooling routes the gradient of channel c to a single point (its
/// argmax, lowest index on ties), so only those rows are kept.
struct ScanCache {
    std::vector<int> argmax;      ///< h entries: winning point per channel
    Matrix winner_x;              ///< h x 3: input of each winner
    Matrix winner_h1;             ///< h x h: first-layer activations of each winner
    Matrix winner_mask1;          ///< h x h: 1 where the winner's first pre-activation > 0
    RowVector pooled;             ///< h: max-pooled second-layer activations
    RowVector projected;          ///< D: pre-normalization embedding
    /// Hash of every rectifier on/off state; differs across a ReLU kink.
    std::uint64_t activation_signature = 0;
};

struct ForwardCache {
    std::vector<ScanCache> scans;
    bool normalize = false;
};

/// Embeds every scan. All scans must have the same point count.
EmbeddingBatch encode(const EncoderParams& params, ScanRefs scans, bool normalize,
                      Producer producer = Producer::Unspecified, ForwardCache* cache = nullptr);

/// Gradient of a scalar loss w.r.t. every parameter, given dLoss/dEmbedding.
GradientBundle backward(const EncoderParams& params, const ForwardCache& cache, const Matrix& upstream);

/// Convenience form that recomputes the forward pass.
GradientBundle backward(const EncoderParams& params, ScanRefs scans, bool normalize, const Matrix& upstream);

/// Combined hash of argmax choices and activation signatures, for locating kinks.
std::uint64_t kink_signature(const ForwardCache& cache);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    GradientBundle m;
    GradientBundle v;
    std::int64_t steps = 0;

    static AdamState for_params(const EncoderParams& params) {
        return {GradientBundle::zeros(params.hidden(), params.dim()),
                GradientBundle::zeros(params.hidden(), params.dim()), 0};
    }
};

/// One Adam update with decoupled weight decay (params *= 1 - lr * wd first).
/// Throws TrainingError on a non-finite gradient without touching params or state.
void adam_step(EncoderParams& params, const GradientBundle& grads, AdamState& state, double lr,
               double weight_decay, const AdamConfig& config = {});

/// Frozen encoder parameters of one completed protocol step.
///
/// Parameters are rounded to float32 at freeze time so that the on-disk
/// image reproduces them exactly. Copies share the same immutable storage.
class ModelSnapshot {
public:
    static ModelSnapshot freeze(const EncoderParams& params, int step_index, std::string config_digest,
                                bool normalize);

    const EncoderParams& params() const noexcept { return *params_; }
    int step_index() const noexcept { return step_index_; }
    const std::string& config_digest() const noexcept { return digest_; }
    bool normalize() const noexcept { return normalize_; }
    int hidden() const noexcept { return params_->hidden(); }
    int dim() const noexcept { return params_->dim(); }
    std::uint64_t hash() const { return param_hash(*params_); }

    EmbeddingBatch encode(ScanRefs scans, Producer producer = Producer::Unspecified) const {
        return nn::encode(*params_, scans, normalize_, producer);
    }

private:
    ModelSnapshot() = default;

    std::shared_ptr<const EncoderParams> params_;
    int step_index_ = 0;
    std::string digest_;
    bool normalize_ = true;
};

inline constexpr char kSnapshotMagic[8] = {'K', 'D', 'F', 'S', 'N', 'A', 'P', '\0'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

std::vector<unsigned char> serialize(const ModelSnapshot& snapshot);
ModelSnapshot deserialize(std::span<const unsigned char> bytes, const std::string& source = "<memory>");

void save_snapshot(const ModelSnapshot& snapshot, const std::filesystem::path& file);
ModelSnapshot load_snapshot(const std::filesystem::path& file);

} // namespace kdf::nn

#endif
