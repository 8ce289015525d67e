#include "kdf/losses.hpp"

#include <limits>
#include <string>

namespace kdf::loss {

namespace {

// d||x - y|| / dx, with the zero subgradient at x == y.
RowVector unit_diff(const RowVector& x, const RowVector& y, double distance) {
    if (distance > 0.0) {
        return (x - y) / distance;
    }
    return RowVector::Zero(x.size());
}

} // namespace

TripletValue triplet_loss(const RowVector& a, const RowVector& p, const RowVector& n, double margin) {
    if (a.size() != p.size() || a.size() != n.size()) {
        throw UsageError("triplet_loss: anchor, positive and negative differ in dimension");
    }
    if (margin < 0.0) {
        throw UsageError("triplet_loss: margin must be >= 0");
    }
    TripletValue out;
    out.grad_anchor = RowVector::Zero(a.size());
    out.grad_positive = RowVector::Zero(a.size());
    out.grad_negative = RowVector::Zero(a.size());
    const double d_ap = (a - p).norm();
    const double d_an = (a - n).norm();
    const double hinge = d_ap - d_an + margin;
    if (hinge <= 0.0) {
        return out;
    }
    out.value = hinge;
    const RowVector u_ap = unit_diff(a, p, d_ap);
    const RowVector u_an = unit_diff(a, n, d_an);
    out.grad_anchor = u_ap - u_an;
    out.grad_positive = -u_ap;
    out.grad_negative = u_an;
    return out;
}

BatchTripletValue batch_triplet_loss(const Matrix& e, const data::PairRelation& relation, double margin) {
    const Eigen::Index n = e.rows();
    if (relation.size() != static_cast<std::size_t>(n)) {
        throw UsageError("batch_triplet_loss: relation covers " + std::to_string(relation.size()) +
                         " samples, batch has " + std::to_string(n));
    }
    BatchTripletValue out;
    out.grad_new = Matrix::Zero(n, e.cols());

    Matrix dist = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            dist(i, j) = dist(j, i) = (e.row(i) - e.row(j)).norm();
        }
    }

    int active = 0;
    double total = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
        Eigen::Index hardest_pos = -1;
        Eigen::Index hardest_neg = -1;
        double pos_d = -1.0;
        double neg_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto ua = static_cast<std::size_t>(a);
            const auto uj = static_cast<std::size_t>(j);
            if (relation.positive(ua, uj) && dist(a, j) > pos_d) {
                pos_d = dist(a, j);
                hardest_pos = j;
            } else if (relation.negative(ua, uj) && dist(a, j) < neg_d) {
                neg_d = dist(a, j);
                hardest_neg = j;
            }
        }
        if (hardest_pos < 0 || hardest_neg < 0) {
            continue;
        }
        ++out.valid_anchors;
        const TripletValue t = triplet_loss(e.row(a), e.row(hardest_pos), e.row(hardest_neg), margin);
        const bool is_active = t.value > 0.0;
        out.mined.push_back({a, hardest_pos, hardest_neg, is_active});
        if (!is_active) {
            continue;
        }
        ++active;
        total += t.value;
        out.grad_new.row(a) += t.grad_anchor;
        out.grad_new.row(hardest_pos) += t.grad_positive;
        out.grad_new.row(hardest_neg) += t.grad_negative;
    }
    if (out.valid_anchors == 0) {
        out.no_valid_anchor = true;
        return out;
    }
    const double inv = 1.0 / out.valid_anchors;
    out.value = total * inv;
    out.grad_new *= inv;
    out.active_fraction = static_cast<double>(active) * inv;
    return out;
}

} // namespace kdf::loss
