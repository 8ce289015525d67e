#include "kdf/cli/gradcheck.hpp"

#include "kdf/diffnet.hpp"
#include "kdf/losses.hpp"
#include "kdf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace kdf::cli {

namespace {

constexpr double kErrorFloor = 1e-6;

struct Probe {
    std::function<double(const Vector&)> value;
    std::function<std::uint64_t(const Vector&)> signature; // changes across a kink
};

GradcheckRow compare(const std::string& name, const Vector& x0, const Vector& analytic, const Probe& probe,
                     const GradcheckOptions& opt) {
    GradcheckRow row{name, 0.0, 0, 0, false};
    Vector a = analytic;
    if (opt.corrupt == name && a.size() > 0) {
        a *= 1.01;
        a(0) += 1e-3;
    }
    const std::uint64_t sig0 = probe.signature(x0);
    Vector x = x0;
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
        x(i) = x0(i) + opt.epsilon;
        const bool same_plus = probe.signature(x) == sig0;
        const double f_plus = probe.value(x);
        x(i) = x0(i) - opt.epsilon;
        const bool same_minus = probe.signature(x) == sig0;
        const double f_minus = probe.value(x);
        x(i) = x0(i);
        if (!same_plus || !same_minus) {
            ++row.skipped;
            continue;
        }
        const double numeric = (f_plus - f_minus) / (2.0 * opt.epsilon);
        const double denom = std::max({std::abs(a(i)), std::abs(numeric), kErrorFloor});
        row.max_rel_error = std::max(row.max_rel_error, std::abs(a(i) - numeric) / denom);
        ++row.checked;
    }
    row.pass = row.checked > 0 && row.max_rel_error < opt.tolerance;
    return row;
}

Vector flatten(const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Vector flatten(const nn::GradientBundle& g) {
    Vector out(static_cast<Eigen::Index>(g.parameter_count()));
    Eigen::Index k = 0;
    for (const Matrix* t : g.tensors()) {
        out.segment(k, t->size()) = flatten(*t);
        k += t->size();
    }
    return out;
}

Vector flatten(const nn::EncoderParams& p) {
    Vector out(static_cast<Eigen::Index>(p.parameter_count()));
    Eigen::Index k = 0;
    for (const Matrix* t : p.tensors()) {
        out.segment(k, t->size()) = flatten(*t);
        k += t->size();
    }
    return out;
}

nn::EncoderParams unflatten_params(const Vector& v, int hidden, int dim) {
    nn::EncoderParams p = nn::EncoderParams::zeros(hidden, dim);
    Eigen::Index k = 0;
    for (Matrix* t : p.tensors()) {
        *t = unflatten(v.segment(k, t->size()), t->rows(), t->cols());
        k += t->size();
    }
    return p;
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = scale * rng.normal();
    }
    return m;
}

std::uint64_t hash_mined(const loss::BatchTripletValue& v) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& m : v.mined) {
        const std::int64_t rec[4] = {m.anchor, m.positive, m.negative, m.active ? 1 : 0};
        h = fnv1a64(rec, sizeof(rec), h);
    }
    return h;
}

std::uint64_t hash_rank_signs(const Matrix& old_e, const Matrix& new_e, double tau) {
    const Matrix diff = loss::soft_rank_matrix(loss::similarity_matrix(new_e), tau) -
                        loss::soft_rank_matrix(loss::similarity_matrix(old_e), tau);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (Eigen::Index i = 0; i < diff.size(); ++i) {
        const signed char s = diff.data()[i] > 0.0 ? 1 : (diff.data()[i] < 0.0 ? -1 : 0);
        h = fnv1a64(&s, 1, h);
    }
    return h;
}

// Two positive pairs, one unlabeled pair, everything else negative.
data::PairRelation toy_relation(std::size_t n) {
    data::PairRelation r(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            r.set(i, j, data::PairLabel::Negative);
        }
    }
    if (n >= 4) {
        r.set(0, 1, data::PairLabel::Positive);
        r.set(2, 3, data::PairLabel::Positive);
    }
    if (n >= 5) {
        r.set(1, 4, data::PairLabel::Unlabeled);
    }
    return r;
}

std::vector<data::PointScan> random_scans(Rng& rng, int count, int points) {
    std::vector<data::PointScan> scans(static_cast<std::size_t>(count));
    for (auto& s : scans) {
        s.points.resize(points, 3);
        for (Eigen::Index i = 0; i < s.points.size(); ++i) {
            s.points.data()[i] = rng.uniform(-1.0, 1.0);
        }
    }
    return scans;
}

} // namespace

std::vector<std::string> gradcheck_components() {
    return {"encoder", "triplet", "batch_triplet", "soft_rank", "rkd", "dkd_skl", "dkd_kl", "dkd_js", "total"};
}

std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& opt) {
    if (opt.batch < 4 || opt.dim < 2 || opt.points < 1 || opt.hidden < 1) {
        throw UsageError("gradcheck needs batch >= 4, dim >= 2, points >= 1 and hidden >= 1");
    }
    if (!(opt.epsilon > 0.0) || !(opt.tolerance > 0.0)) {
        throw UsageError("gradcheck epsilon and tolerance must be positive");
    }
    const auto known = gradcheck_components();
    if (!opt.corrupt.empty() && std::find(known.begin(), known.end(), opt.corrupt) == known.end()) {
        throw UsageError("unknown gradcheck component '" + opt.corrupt + "'");
    }

    Rng rng(derive_seed(opt.seed, {0x96ad}));
    const Eigen::Index n = opt.batch;
    const Eigen::Index d = opt.dim;
    const Matrix e_new = random_matrix(rng, n, d);
    const Matrix e_old = e_new + random_matrix(rng, n, d, 0.3);
    const data::PairRelation relation = toy_relation(static_cast<std::size_t>(n));
    std::vector<GradcheckRow> rows;

    {
        const auto scans = random_scans(rng, opt.batch, opt.points);
        std::vector<const data::PointScan*> refs;
        for (const auto& s : scans) {
            refs.push_back(&s);
        }
        const nn::EncoderParams p0 = nn::init_params(derive_seed(opt.seed, {0xe7c}), opt.hidden, opt.dim);
        // Nonzero biases so the checks also cover them.
        nn::EncoderParams p = p0;
        p.b1 = random_matrix(rng, 1, opt.hidden, 0.1);
        p.b2 = random_matrix(rng, 1, opt.hidden, 0.1);
        p.b3 = random_matrix(rng, 1, opt.dim, 0.1);
        const Matrix weights = random_matrix(rng, n, d);
        const Vector x0 = flatten(p);

        nn::ForwardCache cache;
        nn::encode(p, refs, true, nn::Producer::New, &cache);
        const Vector analytic = flatten(nn::backward(p, cache, weights));
        const Probe probe{
            [&](const Vector& x) {
                return nn::encode(unflatten_params(x, opt.hidden, opt.dim), refs, true).values.cwiseProduct(weights).sum();
            },
            [&](const Vector& x) {
                nn::ForwardCache c;
                nn::encode(unflatten_params(x, opt.hidden, opt.dim), refs, true, nn::Producer::New, &c);
                return nn::kink_signature(c);
            }};
        rows.push_back(compare("encoder", x0, analytic, probe, opt));

        // Full objective through the encoder, with a fixed teacher batch.
        loss::ObjectiveConfig obj;
        obj.margin = opt.margin;
        obj.tau = opt.tau;
        obj.temp = opt.temp;
        const double lambda = 0.5;
        const Matrix teacher = nn::encode(p0, refs, true).values;
        const loss::TotalLossValue tl = loss::total_loss(teacher, nn::encode(p, refs, true).values, relation, obj, lambda);
        const Vector analytic_total = flatten(nn::backward(p, cache, tl.grad_new));
        const Probe total_probe{
            [&](const Vector& x) {
                const Matrix e = nn::encode(unflatten_params(x, opt.hidden, opt.dim), refs, true).values;
                return loss::total_loss(teacher, e, relation, obj, lambda).value;
            },
            [&](const Vector& x) {
                nn::ForwardCache c;
                const Matrix e = nn::encode(unflatten_params(x, opt.hidden, opt.dim), refs, true, nn::Producer::New, &c).values;
                std::uint64_t h = nn::kink_signature(c);
                const std::uint64_t m = hash_mined(loss::batch_triplet_loss(e, relation, obj.margin));
                const std::uint64_t r = hash_rank_signs(teacher, e, obj.tau);
                h = fnv1a64(&m, sizeof(m), h);
                return fnv1a64(&r, sizeof(r), h);
            }};
        rows.push_back(compare("total", x0, analytic_total, total_probe, opt));
    }

    {
        const Vector x0 = flatten(e_new.topRows(3));
        const auto split = [d](const Vector& x) {
            return std::array<RowVector, 3>{x.segment(0, d).transpose(), x.segment(d, d).transpose(),
                                            x.segment(2 * d, d).transpose()};
        };
        // Pull the negative close enough that the hinge is active.
        Vector start = x0;
        start.segment(2 * d, d) = x0.segment(0, d) + 0.3 * (x0.segment(2 * d, d) - x0.segment(0, d));
        const auto parts = split(start);
        const loss::TripletValue tv = loss::triplet_loss(parts[0], parts[1], parts[2], opt.margin);
        Vector analytic(3 * d);
        analytic << tv.grad_anchor.transpose(), tv.grad_positive.transpose(), tv.grad_negative.transpose();
        const Probe probe{[&](const Vector& x) {
                              const auto q = split(x);
                              return loss::triplet_loss(q[0], q[1], q[2], opt.margin).value;
                          },
                          [&](const Vector& x) {
                              const auto q = split(x);
                              return static_cast<std::uint64_t>(loss::triplet_loss(q[0], q[1], q[2], opt.margin).value > 0.0);
                          }};
        rows.push_back(compare("triplet", start, analytic, probe, opt));
    }

    const auto as_matrix = [n, d](const Vector& x) { return unflatten(x, n, d); };
    const Vector x0 = flatten(e_new);
    {
        const double margin = std::max(opt.margin, 1.0); // keeps most anchors active on unit-scale data
        const auto v = loss::batch_triplet_loss(e_new, relation, margin);
        const Probe probe{[&](const Vector& x) { return loss::batch_triplet_loss(as_matrix(x), relation, margin).value; },
                          [&](const Vector& x) { return hash_mined(loss::batch_triplet_loss(as_matrix(x), relation, margin)); }};
        rows.push_back(compare("batch_triplet", x0, flatten(v.grad_new), probe, opt));
    }
    {
        const Matrix weights = random_matrix(rng, n, n);
        const Matrix s = loss::similarity_matrix(e_new);
        const Matrix grad_s = loss::soft_rank_backward(s, opt.tau, weights);
        const Vector analytic = flatten(loss::similarity_backward(e_new, grad_s));
        const Probe probe{[&](const Vector& x) {
                              return loss::soft_rank_matrix(loss::similarity_matrix(as_matrix(x)), opt.tau)
                                  .cwiseProduct(weights)
                                  .sum();
                          },
                          [](const Vector&) { return std::uint64_t{0}; }};
        rows.push_back(compare("soft_rank", x0, analytic, probe, opt));
    }
    {
        const auto v = loss::rkd_loss(e_old, e_new, opt.tau, loss::RkdNorm::Cubic);
        const Probe probe{[&](const Vector& x) { return loss::rkd_loss(e_old, as_matrix(x), opt.tau, loss::RkdNorm::Cubic).value; },
                          [&](const Vector& x) { return hash_rank_signs(e_old, as_matrix(x), opt.tau); }};
        rows.push_back(compare("rkd", x0, flatten(v.grad_new), probe, opt));
    }
    const std::pair<const char*, loss::Divergence> divergences[] = {
        {"dkd_skl", loss::Divergence::Skl}, {"dkd_kl", loss::Divergence::Kl}, {"dkd_js", loss::Divergence::Js}};
    for (const auto& [name, kind] : divergences) {
        const auto v = loss::dkd_loss(e_old, e_new, opt.temp, kind);
        const Probe probe{[&, kind = kind](const Vector& x) { return loss::dkd_loss(e_old, as_matrix(x), opt.temp, kind).value; },
                          [](const Vector&) { return std::uint64_t{0}; }};
        rows.push_back(compare(name, x0, flatten(v.grad_new), probe, opt));
    }

    // Report in the documented order.
    std::vector<GradcheckRow> ordered;
    for (const auto& name : known) {
        for (const auto& r : rows) {
            if (r.component == name) {
                ordered.push_back(r);
            }
        }
    }
    return ordered;
}

} // namespace kdf::cli
