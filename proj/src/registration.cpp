#include "livreg/registration.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace livreg {

Vec3 AffineTransform::apply(const Vec3 &p) const noexcept {
    const Mat3 &l = linear;
    return {l[0] * p[0] + l[1] * p[1] + l[2] * p[2] + translation[0],
            l[3] * p[0] + l[4] * p[1] + l[5] * p[2] + translation[1],
            l[6] * p[0] + l[7] * p[1] + l[8] * p[2] + translation[2]};
}

double AffineTransform::determinant() const noexcept {
    const Mat3 &m = linear;
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void AffineTransform::validate() const {
    for (double v : linear)
        if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "affine transform is not finite");
    for (double v : translation)
        if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "affine transform is not finite");
    if (!(std::abs(determinant()) > 1e-6)) throw Error(ErrorCode::invalid_argument, "affine linear part is singular");
}

Volume3 apply_affine(const Volume3 &vol, const AffineTransform &affine, const Grid &target) {
    Volume3 out(target, vol.kind());
    const double *src = vol.data().data();
    for (int k = 0; k < target.dims[2]; ++k) {
        for (int j = 0; j < target.dims[1]; ++j) {
            for (int i = 0; i < target.dims[0]; ++i) {
                const TrilinearCell cell(vol.grid().dims, affine.apply({double(i), double(j), double(k)}));
                const double v = cell.value(src);
                out.at(i, j, k) = vol.is_mask() ? std::clamp(v, 0.0, 1.0) : v;
            }
        }
    }
    return out;
}

Volume3 apply_transform(const Volume3 &vol, const AffineTransform &affine, const VectorField3 &phi) {
    const Grid &g = phi.grid();
    Volume3 out(g, vol.kind());
    const double *src = vol.data().data();
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const Vec3 d = phi.at(idx);
                const TrilinearCell cell(vol.grid().dims, affine.apply({i + d[0], j + d[1], k + d[2]}));
                const double v = cell.value(src);
                out[idx] = vol.is_mask() ? std::clamp(v, 0.0, 1.0) : v;
            }
        }
    }
    return out;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState &state, double lr) {
    if (params.size() != grads.size()) throw Error(ErrorCode::size_mismatch, "adam_step: parameter/gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) throw Error(ErrorCode::size_mismatch, "adam_step: optimizer state size mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(kAdamBeta1, double(state.step));
    const double c2 = 1.0 - std::pow(kAdamBeta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g;
        state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g * g;
        const double mh = state.m[i] / c1;
        const double vh = state.v[i] / c2;
        params[i] -= lr * mh / (std::sqrt(vh) + kAdamEpsilon);
    }
}

// ---------------------------------------------------------------------------
// Affine pre-registration

namespace {

struct Moments {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
};

Moments mask_moments(const Volume3 &mask) {
    const Grid &g = mask.grid();
    double w = 0.0;
    Eigen::Vector3d s = Eigen::Vector3d::Zero();
    Eigen::Matrix3d ss = Eigen::Matrix3d::Zero();
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const double v = mask.at(i, j, k);
                if (v <= 0.0) continue;
                const Eigen::Vector3d p(i, j, k);
                w += v;
                s += v * p;
                ss += v * p * p.transpose();
            }
    if (w <= 0.0) throw Error(ErrorCode::empty_mask, "affine_prereg: mask is empty");
    Moments m;
    m.mean = s / w;
    m.cov = ss / w - m.mean * m.mean.transpose();
    return m;
}

Eigen::Matrix3d spd_power(const Eigen::Matrix3d &m, double power) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
    const Eigen::Vector3d ev = es.eigenvalues().array().pow(power);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Soft-Dice loss of vol(affine(p)) against fixed, with gradients wrt the
// affine entries (linear row-major, then translation).
double affine_loss(const Volume3 &moving, const Volume3 &fixed, const AffineTransform &a, std::array<double, 12> *grad) {
    const Grid &g = fixed.grid();
    Volume3 warped(g, VolumeKind::mask);
    const double *src = moving.data().data();
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const TrilinearCell cell(moving.grid().dims, a.apply({double(i), double(j), double(k)}));
                warped.at(i, j, k) = cell.value(src);
            }
    if (!grad) return loss_sim(warped, fixed);
    std::vector<double> bar(warped.size(), 0.0);
    const double value = loss_sim(warped, fixed, bar, 1.0);
    grad->fill(0.0);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const double b = bar[g.index(i, j, k)];
                const Vec3 p{double(i), double(j), double(k)};
                const TrilinearCell cell(moving.grid().dims, a.apply(p));
                const Vec3 dq = cell.gradient(src);
                for (int r = 0; r < 3; ++r) {
                    const double gr = b * dq[r];
                    for (int c = 0; c < 3; ++c) (*grad)[r * 3 + c] += gr * p[c];
                    (*grad)[9 + r] += gr;
                }
            }
    return value;
}

} // namespace

AffineTransform affine_prereg(const Volume3 &moving_mask, const Volume3 &fixed_mask, const AffineConfig &cfg) {
    const Moments ma = mask_moments(moving_mask);
    const Moments mb = mask_moments(fixed_mask);

    // Gaussian optimal-transport map between the two second-moment ellipsoids.
    Eigen::Matrix3d lin = Eigen::Matrix3d::Identity();
    const double min_var = 1.0 / 12.0;
    const double ea = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(ma.cov).eigenvalues().minCoeff();
    const double eb = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(mb.cov).eigenvalues().minCoeff();
    if (ea > min_var && eb > min_var) {
        const Eigen::Matrix3d bh = spd_power(mb.cov, 0.5), bih = spd_power(mb.cov, -0.5);
        lin = bih * spd_power(bh * ma.cov * bh, 0.5) * bih;
    }

    // Parameterized about the fixed centroid: q = c_A + t + (L0 + D / R)(p - c_B),
    // so every parameter moves the mask surface by about one voxel per unit.
    const double radius = std::sqrt(std::max(mb.cov.trace(), 1.0));
    auto build = [&](const std::array<double, 12> &theta) {
        Eigen::Matrix3d l = lin;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) l(r, c) += theta[std::size_t(r * 3 + c)] / radius;
        const Eigen::Vector3d t = ma.mean + Eigen::Vector3d(theta[9], theta[10], theta[11]) - l * mb.mean;
        AffineTransform a;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) a.linear[std::size_t(r * 3 + c)] = l(r, c);
            a.translation[std::size_t(r)] = t(r);
        }
        return a;
    };

    std::array<double, 12> theta{};
    AffineTransform best = build(theta);
    double best_loss = affine_loss(moving_mask, fixed_mask, best, nullptr);
    AdamState state;
    for (int it = 0; it < cfg.iterations; ++it) {
        const AffineTransform cur = build(theta);
        std::array<double, 12> g{};
        const double loss = affine_loss(moving_mask, fixed_mask, cur, &g);
        if (!std::isfinite(loss)) throw Error(ErrorCode::numerical_abort, "affine_prereg: non-finite soft-Dice loss");
        if (loss < best_loss && std::abs(cur.determinant()) > 1e-6) {
            best_loss = loss;
            best = cur;
        }
        // Chain rule into the centred parameterization.
        std::array<double, 12> gt{};
        for (int r = 0; r < 3; ++r) {
            gt[std::size_t(9 + r)] = g[std::size_t(9 + r)];
            for (int c = 0; c < 3; ++c) {
                gt[std::size_t(r * 3 + c)] = (g[std::size_t(r * 3 + c)] - g[std::size_t(9 + r)] * mb.mean(c)) / radius;
            }
        }
        const double lr = cfg.learn_rate * (1.0 - double(it) / double(cfg.iterations));
        adam_step(theta, gt, state, lr);
    }
    const AffineTransform last = build(theta);
    const double last_loss = affine_loss(moving_mask, fixed_mask, last, nullptr);
    if (last_loss < best_loss && std::abs(last.determinant()) > 1e-6) best = last;
    return best;
}

// ---------------------------------------------------------------------------
// Deformable registration

void RegistrationConfig::validate() const {
    weights.validate();
    integration.validate();
    if (max_iters < 1) throw Error(ErrorCode::invalid_argument, "max_iters must be >= 1");
    if (!(learn_rate > 0.0) || !std::isfinite(learn_rate)) throw Error(ErrorCode::invalid_argument, "learn_rate must be > 0");
    if (patience < 1) throw Error(ErrorCode::invalid_argument, "patience must be >= 1");
    if (!(rel_tol >= 0.0)) throw Error(ErrorCode::invalid_argument, "rel_tol must be >= 0");
}

namespace {

void check_finite(const LossBreakdown &b, int iteration) {
    const std::pair<const char *, double> terms[] = {
        {"sim", b.sim}, {"smooth", b.smooth}, {"antifold", b.antifold}, {"inv", b.inv}, {"total", b.total}};
    for (const auto &[name, v] : terms) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::numerical_abort,
                        std::string("non-finite loss term '") + name + "' at iteration " + std::to_string(iteration));
        }
    }
}

VectorField3 compose_path(const std::vector<VectorField3> &fields) {
    return fields.size() == 1 ? fields[0] : compose(fields[0], fields[1]);
}

} // namespace

RegistrationResult register_masks(const Volume3 &moving_mask, const Volume3 &fixed_mask, const RegistrationConfig &cfg,
                                  std::optional<AffineTransform> affine) {
    cfg.validate();
    require_same_grid(moving_mask.grid(), fixed_mask.grid(), "register");
    if (count_above(moving_mask) == 0) throw Error(ErrorCode::empty_mask, "register: moving mask is empty");
    if (count_above(fixed_mask) == 0) throw Error(ErrorCode::empty_mask, "register: fixed mask is empty");
    const Grid &full = fixed_mask.grid();

    RegistrationResult res;
    res.mode = cfg.mode;
    res.affine = affine ? *affine : cfg.affine ? affine_prereg(moving_mask, fixed_mask) : AffineTransform::identity();
    res.affine.validate();
    res.moving_affine = apply_affine(moving_mask, res.affine, full);
    if (count_above(res.moving_affine) == 0) {
        throw Error(ErrorCode::empty_mask, "register: moving mask left the grid after affine alignment");
    }

    if (cfg.crop_margin >= 0) {
        res.crop_box = union_box(mask_bbox(res.moving_affine, cfg.crop_margin), mask_bbox(fixed_mask, cfg.crop_margin));
    } else {
        res.crop_box = {{0, 0, 0}, {full.dims[0] - 1, full.dims[1] - 1, full.dims[2] - 1}};
    }
    const EnergyModel model(crop(res.moving_affine, res.crop_box), crop(fixed_mask, res.crop_box), cfg.mode,
                            cfg.weights, cfg.integration);

    Parameters params = model.zero_parameters();
    Parameters best_params = params;
    std::vector<AdamState> adam(params.fields.size());
    double best_total = 0.0, reference = 0.0;
    int stall = 0;
    for (int it = 0; it < cfg.max_iters; ++it) {
        const PipelineState st = model.forward(params);
        const LossBreakdown lb = model.loss_total(st);
        check_finite(lb, it);
        res.loss_trace.push_back(lb);
        if (it == 0 || lb.total < best_total) {
            best_total = lb.total;
            best_params = params;
            res.best_iteration = it;
            res.best = lb;
        }
        // Stall window anchored at the first optimized iterate.
        if (it <= 1 || lb.total < reference - cfg.rel_tol * std::abs(reference)) {
            reference = lb.total;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
        if (best_total <= 1e-12 || it + 1 == cfg.max_iters) break;
        const Parameters grad = model.grad_total(st);
        for (std::size_t f = 0; f < params.fields.size(); ++f) {
            adam_step(params.fields[f].data(), grad.fields[f].data(), adam[f], cfg.learn_rate);
        }
    }
    res.iterations_run = int(res.loss_trace.size());

    const PipelineState st = model.forward(best_params);
    const std::size_t n = std::size_t(traits(cfg.mode).fields_per_direction);
    for (std::size_t i = 0; i < st.fields.size(); ++i) {
        VectorField3 f = extend_field(st.fields[i], res.crop_box.lo, full);
        (i < n ? res.forward_fields : res.backward_fields).push_back(std::move(f));
    }
    res.forward = compose_path(res.forward_fields);
    res.warped_mask = warp(res.moving_affine, res.forward);
    if (!res.backward_fields.empty()) {
        res.backward = compose_path(res.backward_fields);
        res.cyclic_mask = warp(res.warped_mask, *res.backward);
    }
    return res;
}

VectorField3 reverse_as_backward(const RegistrationResult &forward, const RegistrationResult &reverse) {
    const Grid &g = forward.forward.grid();
    const VectorField3 &psi = reverse.forward;
    VectorField3 out(g);
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const Vec3 x{double(i), double(j), double(k)};
                const Vec3 y = forward.affine.apply(x);
                const Vec3 d = sample_field_trilinear(psi, y);
                const Vec3 z = reverse.affine.apply({y[0] + d[0], y[1] + d[1], y[2] + d[2]});
                out.set(g.index(i, j, k), {z[0] - x[0], z[1] - x[1], z[2] - x[2]});
            }
        }
    }
    return out;
}

} // namespace livreg
