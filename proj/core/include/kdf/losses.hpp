#ifndef KDF_LOSSES_HPP
#define KDF_LOSSES_HPP

#include "kdf/common.hpp"
#include "kdf/data.hpp"

#include <string>
#include <string_view>
#include <vector>

/**
 * @file losses.hpp
 *
 * Metric-learning and distillation objectives on embedding batches.
 *
 * Every loss returns its value together with the exact gradient w.r.t. the
 * new-model embeddings. Old-model embeddings are treated as constants.
 * Embedding batches are N_b x D matrices, one row per sample.
 */

namespace kdf::loss {

struct LossValue {
    double value = 0.0;
    Matrix grad_new; ///< dL/dE_new, same shape as E_new
};

// ---------------------------------------------------------------------------
// Similarity and soft ranking

/// S(i, j) = -||e_i - e_j||_2. Larger means closer.
Matrix similarity_matrix(const Matrix& embeddings);

/// Pulls dL/dS back to dL/dE. Zero-distance pairs contribute nothing.
Matrix similarity_backward(const Matrix& embeddings, const Matrix& grad_similarity);

/// Logistic 1 / (1 + exp(-x / tau)); saturates to exactly 0 or 1 without overflow.
double sigmoid(double x, double tau);

/// Soft ranks of a list of similarities:
///   R_i = 1 + sum_{j != i} sigmoid(s_j - s_i; tau).
/// Entries lie in (1, n) and sum to n + n(n-1)/2.
RowVector soft_rank_row(const RowVector& similarities, double tau);

/// Row q of the ranking matrix of S (the query itself is one of the ranked samples).
RowVector soft_rank(const Matrix& similarity, Eigen::Index query, double tau);

/// All rows: R(q, i) for every query q in the batch.
Matrix soft_rank_matrix(const Matrix& similarity, double tau);

/// Pulls dL/dR back to dL/dS through the soft-rank relaxation.
Matrix soft_rank_backward(const Matrix& similarity, double tau, const Matrix& grad_rank);

enum class RkdNorm { Cubic, Quadratic };

/// Ranking distillation: sum_q sum_i |R_new(q,i) - R_old(q,i)| / N_b^3
/// (or N_b^2 with RkdNorm::Quadratic). The absolute value uses subgradient 0 at 0.
LossValue rkd_loss(const Matrix& old_embeddings, const Matrix& new_embeddings, double tau,
                   RkdNorm norm = RkdNorm::Cubic);

// ---------------------------------------------------------------------------
// Distribution distillation

inline constexpr double kProbabilityFloor = 1e-12;

enum class Divergence { Skl, Kl, Js };

Divergence parse_divergence(std::string_view name);
std::string_view to_string(Divergence d) noexcept;

/// Softmax of the coordinates at temperature `temp`.
Vector to_distribution(const RowVector& embedding, double temp);

/// Natural-log KL(p || q); entries below kProbabilityFloor are clamped.
double kl_divergence(const Vector& p, const Vector& q);
/// 0.5 * (KL(p||q) + KL(q||p)); symmetric bit-for-bit.
double skl_divergence(const Vector& p, const Vector& q);
/// Jensen-Shannon with natural log; bounded by ln 2.
double js_divergence(const Vector& p, const Vector& q);

double divergence(Divergence kind, const Vector& p, const Vector& q);

/// Sum over batch rows of divergence(softmax(old_i), softmax(new_i)).
/// The kl variant measures KL(old || new).
LossValue dkd_loss(const Matrix& old_embeddings, const Matrix& new_embeddings, double temp,
                   Divergence kind = Divergence::Skl);

// ---------------------------------------------------------------------------
// Metric learning

struct TripletValue {
    double value = 0.0;
    RowVector grad_anchor;
    RowVector grad_positive;
    RowVector grad_negative;
};

/// max(||a - p|| - ||a - n|| + margin, 0); zero gradient when inactive or exactly at the hinge.
TripletValue triplet_loss(const RowVector& anchor, const RowVector& positive, const RowVector& negative,
                          double margin);

struct MinedTriplet {
    Eigen::Index anchor = 0;
    Eigen::Index positive = 0;
    Eigen::Index negative = 0;
    bool active = false;
};

struct BatchTripletValue : LossValue {
    double active_fraction = 0.0;
    int valid_anchors = 0;
    bool no_valid_anchor = false; ///< warning: nothing to mine in this batch
    std::vector<MinedTriplet> mined;
};

/// Batch-hard mining: per anchor the farthest positive and nearest negative
/// (lowest batch index on ties); mean triplet loss over anchors that have both.
BatchTripletValue batch_triplet_loss(const Matrix& embeddings, const data::PairRelation& relation,
                                     double margin);

// ---------------------------------------------------------------------------
// Relaxation schedule and combined objective

enum class LambdaVariant { Literal, InCloud };

LambdaVariant parse_lambda_variant(std::string_view name);
std::string_view to_string(LambdaVariant v) noexcept;

struct RelaxationSchedule {
    double beta = 60.0; ///< total epochs
    LambdaVariant variant = LambdaVariant::Literal;

    void validate() const;
};

/// Literal:  1 / (1 + exp(10 * gamma / (beta - 0.5)))
/// InCloud:  1 / (1 + exp(10 * (gamma / beta - 0.5)))
double lambda_at(const RelaxationSchedule& schedule, double gamma);

struct LossToggles {
    bool pr = true;
    bool rkd = true;
    bool dkd = true;

    bool distills() const noexcept { return rkd || dkd; }
};

struct ObjectiveConfig {
    double margin = 0.2;
    double tau = 0.01;
    double temp = 1.0;
    Divergence divergence = Divergence::Skl;
    RkdNorm rkd_norm = RkdNorm::Cubic;
    LossToggles toggles;
};

struct TotalLossValue : LossValue {
    double pr = 0.0;
    double rkd = 0.0;
    double dkd = 0.0;
    double active_fraction = 0.0;
    bool no_valid_anchor = false;
};

/// L = L_PR + lambda * (L_RKD + L_DKD), terms gated by the toggles.
/// `old_embeddings` may be empty when no distillation term is enabled.
TotalLossValue total_loss(const Matrix& old_embeddings, const Matrix& new_embeddings,
                          const data::PairRelation& relation, const ObjectiveConfig& config, double lambda);

} // namespace kdf::loss

#endif
