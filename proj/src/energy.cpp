#include "livreg/energy.hpp"

#include <cmath>
#include <string>

namespace livreg {

void LossWeights::validate() const {
    for (double w : {alpha, beta, gamma, mu}) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::invalid_argument, "loss weights must be >= 0");
    }
}

ModeTraits traits(Mode mode) noexcept {
    switch (mode) {
    case Mode::direct: return {1, false, false, false};
    case Mode::diffeo: return {1, false, true, true};
    case Mode::diffeo_inc2: return {2, false, true, true};
    case Mode::diffeocyc_inc1: return {1, true, true, true};
    case Mode::diffeocyc_inc2: return {2, true, true, true};
    }
    return {1, false, false, false};
}

std::string_view to_string(Mode mode) noexcept {
    switch (mode) {
    case Mode::direct: return "direct";
    case Mode::diffeo: return "diffeo";
    case Mode::diffeo_inc2: return "diffeo_inc2";
    case Mode::diffeocyc_inc1: return "diffeocyc_inc1";
    case Mode::diffeocyc_inc2: return "diffeocyc_inc2";
    }
    return "direct";
}

Mode parse_mode(std::string_view name) {
    for (Mode m : all_modes()) {
        if (to_string(m) == name) return m;
    }
    throw Error(ErrorCode::invalid_argument, "unknown registration mode '" + std::string(name) + "'");
}

const std::vector<Mode> &all_modes() {
    static const std::vector<Mode> modes{Mode::direct, Mode::diffeo, Mode::diffeo_inc2, Mode::diffeocyc_inc1,
                                         Mode::diffeocyc_inc2};
    return modes;
}

namespace {

struct DiffTap {
    int lo, hi;
    double scale;
};

inline DiffTap diff_tap(int i, int n) noexcept {
    if (i == 0) return {0, 1, 1.0};
    if (i == n - 1) return {n - 2, n - 1, 1.0};
    return {i - 1, i + 1, 0.5};
}

// Visits every (voxel, axis) pair with the linear indices of the two
// derivative stencil taps and the stencil scale.
template <class Fn> void for_each_partial(const Grid &g, Fn &&fn) {
    const std::size_t sy = std::size_t(g.dims[0]), sz = sy * std::size_t(g.dims[1]);
    for (int k = 0; k < g.dims[2]; ++k) {
        const DiffTap tz = diff_tap(k, g.dims[2]);
        for (int j = 0; j < g.dims[1]; ++j) {
            const DiffTap ty = diff_tap(j, g.dims[1]);
            for (int i = 0; i < g.dims[0]; ++i) {
                const DiffTap tx = diff_tap(i, g.dims[0]);
                const std::size_t idx = g.index(i, j, k);
                const std::size_t row = idx - std::size_t(i);
                const std::size_t col = idx - sy * std::size_t(j);
                const std::size_t pil = idx - sz * std::size_t(k);
                fn(0, row + std::size_t(tx.lo), row + std::size_t(tx.hi), tx.scale);
                fn(1, col + sy * std::size_t(ty.lo), col + sy * std::size_t(ty.hi), ty.scale);
                fn(2, pil + sz * std::size_t(tz.lo), pil + sz * std::size_t(tz.hi), tz.scale);
            }
        }
    }
}

double smooth_impl(const VectorField3 &phi, double *grad, double scale) {
    const double *d = phi.data().data();
    const double inv_n = 1.0 / double(phi.voxel_count());
    double sum = 0.0;
    for_each_partial(phi.grid(), [&](int, std::size_t lo, std::size_t hi, double s) {
        for (int c = 0; c < 3; ++c) {
            const double v = s * (d[3 * hi + c] - d[3 * lo + c]);
            sum += v * v;
            if (grad) {
                const double a = scale * 2.0 * v * inv_n * s;
                grad[3 * hi + c] += a;
                grad[3 * lo + c] -= a;
            }
        }
    });
    return sum * inv_n;
}

double antifold_impl(const VectorField3 &phi, double *grad, double scale) {
    const double *d = phi.data().data();
    const double inv_n = 1.0 / double(phi.voxel_count());
    double sum = 0.0;
    for_each_partial(phi.grid(), [&](int axis, std::size_t lo, std::size_t hi, double s) {
        const double v = s * (d[3 * hi + axis] - d[3 * lo + axis]);
        // The gate is held constant under differentiation.
        if (v + 1.0 > 0.0) return;
        sum += v * v;
        if (grad) {
            const double a = scale * 2.0 * v * inv_n * s;
            grad[3 * hi + axis] += a;
            grad[3 * lo + axis] -= a;
        }
    });
    return sum * inv_n;
}

double sim_impl(const Volume3 &warped, const Volume3 &fixed, double *grad, double scale) {
    require_same_grid(warped.grid(), fixed.grid(), "loss_sim");
    double inter = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < warped.size(); ++i) {
        inter += warped[i] * fixed[i];
        sa += warped[i];
        sb += fixed[i];
    }
    const double num = 2.0 * inter + kDiceEpsilon;
    const double den = sa + sb + kDiceEpsilon;
    if (grad) {
        const double inv_den2 = 1.0 / (den * den);
        for (std::size_t i = 0; i < warped.size(); ++i) {
            grad[i] += -scale * (2.0 * fixed[i] * den - num) * inv_den2;
        }
    }
    return 1.0 - num / den;
}

double inv_impl(const VectorField3 &fwd, const VectorField3 &bwd, double *gf, double *gb, double scale) {
    require_same_grid(fwd.grid(), bwd.grid(), "loss_inv");
    const Grid &g = fwd.grid();
    const double *f = fwd.data().data();
    const double *b = bwd.data().data();
    const double inv_n = 1.0 / double(g.voxel_count());
    double sum = 0.0;
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const double *fp = f + 3 * idx;
                const TrilinearCell cell(g.dims, {i + fp[0], j + fp[1], k + fp[2]});
                const Vec3 r{fp[0] + cell.value(b, 3, 0), fp[1] + cell.value(b, 3, 1), fp[2] + cell.value(b, 3, 2)};
                sum += r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
                if (!gf) continue;
                const double a = 2.0 * scale * inv_n;
                const Vec3 rb{a * r[0], a * r[1], a * r[2]};
                cell.scatter3(gb, rb);
                Vec3 pos = rb;
                for (int c = 0; c < 3; ++c) {
                    const Vec3 dg = cell.gradient(b, 3, c);
                    pos[0] += rb[c] * dg[0];
                    pos[1] += rb[c] * dg[1];
                    pos[2] += rb[c] * dg[2];
                }
                gf[3 * idx] += pos[0];
                gf[3 * idx + 1] += pos[1];
                gf[3 * idx + 2] += pos[2];
            }
        }
    }
    return sum * inv_n;
}

} // namespace

double loss_smooth(const VectorField3 &phi) { return smooth_impl(phi, nullptr, 0.0); }
double loss_smooth(const VectorField3 &phi, VectorField3 &grad, double scale) {
    return smooth_impl(phi, grad.data().data(), scale);
}

double loss_antifold(const VectorField3 &phi) { return antifold_impl(phi, nullptr, 0.0); }
double loss_antifold(const VectorField3 &phi, VectorField3 &grad, double scale) {
    return antifold_impl(phi, grad.data().data(), scale);
}

double loss_sim(const Volume3 &warped, const Volume3 &fixed) { return sim_impl(warped, fixed, nullptr, 0.0); }
double loss_sim(const Volume3 &warped, const Volume3 &fixed, std::span<double> grad_warped, double scale) {
    return sim_impl(warped, fixed, grad_warped.data(), scale);
}

double loss_inv(const VectorField3 &fwd, const VectorField3 &bwd) { return inv_impl(fwd, bwd, nullptr, nullptr, 0.0); }
double loss_inv(const VectorField3 &fwd, const VectorField3 &bwd, VectorField3 &grad_fwd, VectorField3 &grad_bwd,
                double scale) {
    return inv_impl(fwd, bwd, grad_fwd.data().data(), grad_bwd.data().data(), scale);
}

std::size_t Parameters::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto &f : fields) n += f.data().size();
    return n;
}

EnergyModel::EnergyModel(Volume3 moving, Volume3 fixed, Mode mode, LossWeights weights, IntegrationConfig integration)
    : moving_(std::move(moving)), fixed_(std::move(fixed)), mode_(mode), weights_(weights),
      integration_(integration) {
    require_same_grid(moving_.grid(), fixed_.grid(), "EnergyModel");
    weights_.validate();
    integration_.validate();
    coarse_ = moving_.grid().coarse();
}

std::size_t EnergyModel::parameter_field_count() const noexcept {
    const ModeTraits t = traits(mode_);
    return std::size_t(t.fields_per_direction) * (t.cyclic ? 2u : 1u);
}

Parameters EnergyModel::zero_parameters() const {
    Parameters p;
    const FieldKind kind = traits(mode_).integrate ? FieldKind::velocity : FieldKind::displacement;
    for (std::size_t i = 0; i < parameter_field_count(); ++i) p.fields.emplace_back(coarse_, kind);
    return p;
}

PipelineState EnergyModel::forward(const Parameters &params) const {
    const ModeTraits t = traits(mode_);
    if (params.fields.size() != parameter_field_count()) {
        throw Error(ErrorCode::invalid_argument, "parameter count does not match the registration mode");
    }
    PipelineState st;
    st.params = params;
    for (const auto &p : params.fields) {
        if (p.grid().dims != coarse_.dims) throw Error(ErrorCode::grid_mismatch, "parameters are not on the coarse grid");
        if (t.integrate) {
            st.chains.push_back(integrate_velocity_chain(p, integration_));
            st.fields.push_back(upsample2x(st.chains.back().back(), grid()));
        } else {
            st.fields.push_back(upsample2x(p, grid()));
        }
    }
    const std::size_t n = std::size_t(t.fields_per_direction);
    st.forward = n == 1 ? st.fields[0] : compose(st.fields[0], st.fields[1]);
    if (t.cyclic) st.backward = n == 1 ? st.fields[n] : compose(st.fields[n], st.fields[n + 1]);
    st.warped = warp(moving_, st.forward);
    if (t.cyclic) st.cyclic = warp(st.warped, *st.backward);
    return st;
}

LossBreakdown EnergyModel::loss_total(const PipelineState &st) const {
    const ModeTraits t = traits(mode_);
    if (st.fields.size() != parameter_field_count() || (t.cyclic && !st.backward)) {
        throw Error(ErrorCode::invalid_argument, "pipeline state is inconsistent with the registration mode");
    }
    LossBreakdown b;
    b.sim = loss_sim(st.warped, fixed_);
    for (const auto &f : st.fields) {
        b.smooth += loss_smooth(f);
        if (t.antifold) b.antifold += loss_antifold(f);
    }
    if (t.cyclic) b.inv = loss_inv(st.forward, *st.backward) + loss_inv(*st.backward, st.forward);
    const LossWeights &w = weights_;
    b.total = w.alpha * b.sim + w.beta * b.smooth + w.gamma * b.antifold + w.mu * b.inv;
    return b;
}

Parameters EnergyModel::grad_total(const PipelineState &st) const {
    const ModeTraits t = traits(mode_);
    const LossWeights &w = weights_;
    const std::size_t n = std::size_t(t.fields_per_direction);

    // Adjoints of the composed fields.
    VectorField3 fwd_bar(grid());
    std::optional<VectorField3> bwd_bar;
    if (t.cyclic) bwd_bar.emplace(grid());

    std::vector<double> warped_bar(grid().voxel_count(), 0.0);
    loss_sim(st.warped, fixed_, warped_bar, w.alpha);
    warp_adjoint(moving_, st.forward, warped_bar, fwd_bar);
    if (t.cyclic) {
        loss_inv(st.forward, *st.backward, fwd_bar, *bwd_bar, w.mu);
        loss_inv(*st.backward, st.forward, *bwd_bar, fwd_bar, w.mu);
    }

    // Adjoints of the incremental full-resolution fields.
    std::vector<VectorField3> field_bar;
    for (std::size_t i = 0; i < st.fields.size(); ++i) field_bar.emplace_back(grid());
    auto distribute = [&](const VectorField3 &bar, std::size_t first) {
        if (n == 1) {
            field_bar[first] += bar;
        } else {
            compose_adjoint(st.fields[first], st.fields[first + 1], bar, field_bar[first], field_bar[first + 1]);
        }
    };
    distribute(fwd_bar, 0);
    if (t.cyclic) distribute(*bwd_bar, n);

    for (std::size_t i = 0; i < st.fields.size(); ++i) {
        loss_smooth(st.fields[i], field_bar[i], w.beta);
        if (t.antifold) loss_antifold(st.fields[i], field_bar[i], w.gamma);
    }

    Parameters grad;
    for (std::size_t i = 0; i < st.fields.size(); ++i) {
        VectorField3 coarse_bar(coarse_);
        upsample2x_adjoint(field_bar[i], coarse_bar);
        if (t.integrate) {
            VectorField3 v_bar(coarse_);
            integrate_velocity_adjoint(st.chains[i], coarse_bar, v_bar);
            grad.fields.push_back(std::move(v_bar));
        } else {
            grad.fields.push_back(std::move(coarse_bar));
        }
    }
    return grad;
}

} // namespace livreg
