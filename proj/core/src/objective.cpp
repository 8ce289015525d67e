#include "kdf/losses.hpp"

#include <cmath>
#include <string>

namespace kdf::loss {

LambdaVariant parse_lambda_variant(std::string_view name) {
    if (name == "literal") {
        return LambdaVariant::Literal;
    }
    if (name == "incloud") {
        return LambdaVariant::InCloud;
    }
    throw ConfigError("lambda variant must be literal|incloud (got '" + std::string(name) + "')");
}

std::string_view to_string(LambdaVariant v) noexcept {
    return v == LambdaVariant::Literal ? "literal" : "incloud";
}

void RelaxationSchedule::validate() const {
    if (!(beta >= 1.0)) {
        throw ConfigError("schedule.beta must be >= 1 (got " + std::to_string(beta) + ")");
    }
    if (variant == LambdaVariant::Literal && beta <= 0.5) {
        throw ConfigError("schedule.beta must exceed 0.5 for the literal variant");
    }
}

double lambda_at(const RelaxationSchedule& schedule, double gamma) {
    schedule.validate();
    if (gamma < 0.0 || gamma > schedule.beta) {
        throw UsageError("lambda_at: epoch " + std::to_string(gamma) + " outside [0, " +
                         std::to_string(schedule.beta) + "]");
    }
    const double exponent = schedule.variant == LambdaVariant::Literal
                                ? 10.0 * gamma / (schedule.beta - 0.5)
                                : 10.0 * (gamma / schedule.beta - 0.5);
    return 1.0 / (1.0 + std::exp(exponent));
}

TotalLossValue total_loss(const Matrix& old_e, const Matrix& new_e, const data::PairRelation& relation,
                          const ObjectiveConfig& config, double lambda) {
    const auto& t = config.toggles;
    if (!t.pr && !t.rkd && !t.dkd) {
        throw ConfigError("total_loss: every loss term is toggled off");
    }
    if (t.distills() && (old_e.rows() != new_e.rows() || old_e.cols() != new_e.cols())) {
        throw UsageError("total_loss: distillation needs old and new batches of equal shape");
    }
    TotalLossValue out;
    out.grad_new = Matrix::Zero(new_e.rows(), new_e.cols());
    if (t.pr) {
        BatchTripletValue pr = batch_triplet_loss(new_e, relation, config.margin);
        out.pr = pr.value;
        out.active_fraction = pr.active_fraction;
        out.no_valid_anchor = pr.no_valid_anchor;
        out.grad_new += pr.grad_new;
    }
    // lambda == 0 skips the distillation work entirely; the result is identical.
    if (t.rkd && lambda != 0.0) {
        LossValue rkd = rkd_loss(old_e, new_e, config.tau, config.rkd_norm);
        out.rkd = rkd.value;
        out.grad_new += lambda * rkd.grad_new;
    }
    if (t.dkd && lambda != 0.0) {
        LossValue dkd = dkd_loss(old_e, new_e, config.temp, config.divergence);
        out.dkd = dkd.value;
        out.grad_new += lambda * dkd.grad_new;
    }
    out.value = out.pr + lambda * (out.rkd + out.dkd);
    return out;
}

} // namespace kdf::loss
