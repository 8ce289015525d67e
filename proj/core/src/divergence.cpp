#include "kdf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kdf::loss {

namespace {

double clamp_p(double p) { return std::max(p, kProbabilityFloor); }

void require_same_support(const Vector& p, const Vector& q) {
    if (p.size() != q.size() || p.size() == 0) {
        throw UsageError("divergence: distributions differ in length");
    }
}

// dDivergence(p, q)/dq for fixed p.
Vector divergence_grad_q(Divergence kind, const Vector& p, const Vector& q) {
    const Eigen::Index n = q.size();
    Vector g(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double pk = clamp_p(p(k));
        const double qk = clamp_p(q(k));
        switch (kind) {
        case Divergence::Kl: // KL(p || q)
            g(k) = -pk / qk;
            break;
        case Divergence::Skl:
            g(k) = 0.5 * (-pk / qk + std::log(qk) + 1.0 - std::log(pk));
            break;
        case Divergence::Js: {
            const double mk = 0.5 * (pk + qk);
            g(k) = 0.5 * std::log(qk / mk);
            break;
        }
        }
    }
    return g;
}

} // namespace

Divergence parse_divergence(std::string_view name) {
    if (name == "skl") {
        return Divergence::Skl;
    }
    if (name == "kl") {
        return Divergence::Kl;
    }
    if (name == "js") {
        return Divergence::Js;
    }
    throw ConfigError("divergence must be one of skl|kl|js (got '" + std::string(name) + "')");
}

std::string_view to_string(Divergence d) noexcept {
    switch (d) {
    case Divergence::Skl:
        return "skl";
    case Divergence::Kl:
        return "kl";
    case Divergence::Js:
        return "js";
    }
    return "?";
}

Vector to_distribution(const RowVector& e, double temp) {
    if (!(temp > 0.0)) {
        throw UsageError("to_distribution: temperature must be positive (got " + std::to_string(temp) + ")");
    }
    if (e.size() == 0) {
        throw UsageError("to_distribution: empty embedding");
    }
    const double shift = e.maxCoeff();
    Vector p = ((e.array() - shift) / temp).exp().matrix().transpose();
    p /= p.sum();
    return p;
}

double kl_divergence(const Vector& p, const Vector& q) {
    require_same_support(p, q);
    double sum = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        const double pk = clamp_p(p(k));
        sum += pk * (std::log(pk) - std::log(clamp_p(q(k))));
    }
    return sum;
}

double skl_divergence(const Vector& p, const Vector& q) {
    // Addition commutes exactly, so swapping arguments is bit-identical.
    return 0.5 * (kl_divergence(p, q) + kl_divergence(q, p));
}

double js_divergence(const Vector& p, const Vector& q) {
    require_same_support(p, q);
    Vector m(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        m(k) = 0.5 * (clamp_p(p(k)) + clamp_p(q(k)));
    }
    return 0.5 * (kl_divergence(p, m) + kl_divergence(q, m));
}

double divergence(Divergence kind, const Vector& p, const Vector& q) {
    switch (kind) {
    case Divergence::Skl:
        return skl_divergence(p, q);
    case Divergence::Kl:
        return kl_divergence(p, q);
    case Divergence::Js:
        return js_divergence(p, q);
    }
    return 0.0;
}

LossValue dkd_loss(const Matrix& old_e, const Matrix& new_e, double temp, Divergence kind) {
    if (old_e.rows() != new_e.rows() || old_e.cols() != new_e.cols()) {
        throw UsageError("dkd_loss: old batch is " + std::to_string(old_e.rows()) + "x" +
                         std::to_string(old_e.cols()) + ", new batch is " + std::to_string(new_e.rows()) + "x" +
                         std::to_string(new_e.cols()));
    }
    LossValue out;
    out.grad_new = Matrix::Zero(new_e.rows(), new_e.cols());
    for (Eigen::Index i = 0; i < new_e.rows(); ++i) {
        const Vector p = to_distribution(old_e.row(i), temp);
        const Vector q = to_distribution(new_e.row(i), temp);
        // Rounding can leave a -1e-17 residue on identical rows.
        out.value += std::max(0.0, divergence(kind, p, q));
        // Softmax Jacobian: dz = q * (g - <q, g>) / temp.
        const Vector g = divergence_grad_q(kind, p, q);
        const Vector dz = q.cwiseProduct((g.array() - q.dot(g)).matrix()) / temp;
        out.grad_new.row(i) = dz.transpose();
    }
    return out;
}

} // namespace kdf::loss
