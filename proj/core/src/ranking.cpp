#include "kdf/losses.hpp"

#include <cmath>
#include <string>

namespace kdf::loss {

namespace {

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_tau(double tau) {
    if (!(tau > 0.0)) {
        throw UsageError("temperature tau must be positive (got " + std::to_string(tau) + ")");
    }
}

// G(i, j) = sigmoid(s_j - s_i; tau) for one similarity row.
void pairwise_sigmoid(const RowVector& s, double tau, Array& g) {
    const Eigen::Index n = s.size();
    g.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        g.row(i) = (s.array() - s(i)) / tau;
    }
    // exp overflow gives +inf and thus G = 0, which is the saturated limit.
    g = (1.0 + (-g).exp()).inverse();
}

// Soft ranks from a filled G: 1 + row sums minus the diagonal sigmoid(0) = 0.5.
RowVector ranks_from(const Array& g) {
    return (g.rowwise().sum() + 0.5).matrix().transpose();
}

// dL/ds for one row, given dL/dR and G.
RowVector rank_row_backward(const Array& g, double tau, const RowVector& grad_rank) {
    const Array w = g * (1.0 - g) / tau;
    const RowVector col = grad_rank * w.matrix();
    const RowVector diag = grad_rank.array() * w.rowwise().sum().transpose();
    return col - diag;
}

} // namespace

Matrix similarity_matrix(const Matrix& e) {
    const Eigen::Index n = e.rows();
    Matrix s = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = (e.row(i) - e.row(j)).norm();
            s(i, j) = -d;
            s(j, i) = -d;
        }
    }
    return s;
}

Matrix similarity_backward(const Matrix& e, const Matrix& grad_s) {
    const Eigen::Index n = e.rows();
    if (grad_s.rows() != n || grad_s.cols() != n) {
        throw UsageError("similarity_backward: gradient shape does not match the batch");
    }
    // dE_i = sum_j c_ij (e_i - e_j) with c_ij = -(dS_ij + dS_ji) / d_ij.
    Matrix c = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = (e.row(i) - e.row(j)).norm();
            if (d > 0.0) {
                const double v = -(grad_s(i, j) + grad_s(j, i)) / d;
                c(i, j) = v;
                c(j, i) = v;
            }
        }
    }
    Matrix out = c.rowwise().sum().asDiagonal() * e;
    out.noalias() -= c * e;
    return out;
}

double sigmoid(double x, double tau) {
    require_tau(tau);
    const double t = x / tau;
    if (t >= 0.0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    const double z = std::exp(t);
    return z / (1.0 + z);
}

RowVector soft_rank_row(const RowVector& s, double tau) {
    require_tau(tau);
    Array g;
    pairwise_sigmoid(s, tau, g);
    return ranks_from(g);
}

RowVector soft_rank(const Matrix& similarity, Eigen::Index query, double tau) {
    if (query < 0 || query >= similarity.rows()) {
        throw UsageError("soft_rank: query index out of range");
    }
    return soft_rank_row(similarity.row(query), tau);
}

Matrix soft_rank_matrix(const Matrix& similarity, double tau) {
    require_tau(tau);
    const Eigen::Index n = similarity.rows();
    Matrix r(n, n);
    Array g;
    for (Eigen::Index q = 0; q < n; ++q) {
        pairwise_sigmoid(similarity.row(q), tau, g);
        r.row(q) = ranks_from(g);
    }
    return r;
}

Matrix soft_rank_backward(const Matrix& similarity, double tau, const Matrix& grad_rank) {
    require_tau(tau);
    const Eigen::Index n = similarity.rows();
    if (grad_rank.rows() != n || grad_rank.cols() != n) {
        throw UsageError("soft_rank_backward: gradient shape does not match the ranking matrix");
    }
    Matrix out(n, n);
    Array g;
    for (Eigen::Index q = 0; q < n; ++q) {
        pairwise_sigmoid(similarity.row(q), tau, g);
        out.row(q) = rank_row_backward(g, tau, grad_rank.row(q));
    }
    return out;
}

LossValue rkd_loss(const Matrix& old_e, const Matrix& new_e, double tau, RkdNorm norm) {
    require_tau(tau);
    if (old_e.rows() != new_e.rows() || old_e.cols() != new_e.cols()) {
        throw UsageError("rkd_loss: old batch is " + std::to_string(old_e.rows()) + "x" +
                         std::to_string(old_e.cols()) + ", new batch is " + std::to_string(new_e.rows()) + "x" +
                         std::to_string(new_e.cols()));
    }
    const Eigen::Index n = new_e.rows();
    LossValue out;
    out.grad_new = Matrix::Zero(n, new_e.cols());
    if (n < 2) {
        return out;
    }
    const double nd = static_cast<double>(n);
    const double scale = norm == RkdNorm::Cubic ? 1.0 / (nd * nd * nd) : 1.0 / (nd * nd);

    const Matrix s_old = similarity_matrix(old_e);
    const Matrix s_new = similarity_matrix(new_e);
    Matrix grad_s(n, n);
    Array g_old;
    Array g_new;
    double total = 0.0;
    for (Eigen::Index q = 0; q < n; ++q) {
        pairwise_sigmoid(s_old.row(q), tau, g_old);
        pairwise_sigmoid(s_new.row(q), tau, g_new);
        const RowVector diff = ranks_from(g_new) - ranks_from(g_old);
        total += diff.cwiseAbs().sum();
        // sign() is 0 at exact equality: the chosen subgradient.
        const RowVector grad_rank = diff.array().sign().matrix() * scale;
        grad_s.row(q) = rank_row_backward(g_new, tau, grad_rank);
    }
    out.value = total * scale;
    out.grad_new = similarity_backward(new_e, grad_s);
    return out;
}

} // namespace kdf::loss
