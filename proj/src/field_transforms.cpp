#include "livreg/field_transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace livreg {

void IntegrationConfig::validate() const {
    if (squaring_steps < 0 || squaring_steps > 12) {
        throw Error(ErrorCode::invalid_argument,
                    "squaring_steps must lie in [0, 12], got " + std::to_string(squaring_steps));
    }
}

Volume3 warp(const Volume3 &vol, const VectorField3 &phi) {
    require_same_grid(vol.grid(), phi.grid(), "warp");
    const Grid &g = vol.grid();
    Volume3 out(g, vol.kind());
    const double *src = vol.data().data();
    const double *f = phi.data().data();
    double *dst = out.data().data();
    const bool mask = vol.is_mask();
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const TrilinearCell cell(g.dims, {i + f[3 * idx], j + f[3 * idx + 1], k + f[3 * idx + 2]});
                const double v = cell.value(src);
                dst[idx] = mask ? std::clamp(v, 0.0, 1.0) : v;
            }
        }
    }
    return out;
}

VectorField3 compose(const VectorField3 &first, const VectorField3 &second) {
    require_same_grid(first.grid(), second.grid(), "compose");
    const Grid &g = first.grid();
    VectorField3 out(g, FieldKind::displacement);
    const double *a = first.data().data();
    const double *b = second.data().data();
    double *dst = out.data().data();
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const double *s = b + 3 * idx;
                const TrilinearCell cell(g.dims, {i + s[0], j + s[1], k + s[2]});
                dst[3 * idx] = s[0] + cell.value(a, 3, 0);
                dst[3 * idx + 1] = s[1] + cell.value(a, 3, 1);
                dst[3 * idx + 2] = s[2] + cell.value(a, 3, 2);
            }
        }
    }
    return out;
}

std::vector<VectorField3> integrate_velocity_chain(const VectorField3 &v, const IntegrationConfig &cfg) {
    cfg.validate();
    std::vector<VectorField3> chain;
    chain.reserve(std::size_t(cfg.squaring_steps) + 1);
    chain.push_back(v);
    chain.back().set_kind(FieldKind::displacement);
    chain.back() *= std::ldexp(1.0, -cfg.squaring_steps);
    for (int s = 0; s < cfg.squaring_steps; ++s) {
        chain.push_back(compose(chain.back(), chain.back()));
    }
    return chain;
}

VectorField3 integrate_velocity(const VectorField3 &v, const IntegrationConfig &cfg) {
    auto chain = integrate_velocity_chain(v, cfg);
    return std::move(chain.back());
}

void compose_adjoint(const VectorField3 &first, const VectorField3 &second, const VectorField3 &out_bar,
                     VectorField3 &first_bar, VectorField3 &second_bar) {
    const Grid &g = first.grid();
    const double *a = first.data().data();
    const double *b = second.data().data();
    const double *ob = out_bar.data().data();
    double *ab = first_bar.data().data();
    double *bb = second_bar.data().data();
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const double *s = b + 3 * idx;
                const Vec3 gbar{ob[3 * idx], ob[3 * idx + 1], ob[3 * idx + 2]};
                if (gbar[0] == 0.0 && gbar[1] == 0.0 && gbar[2] == 0.0) continue;
                const TrilinearCell cell(g.dims, {i + s[0], j + s[1], k + s[2]});
                cell.scatter3(ab, gbar);
                Vec3 pos{gbar[0], gbar[1], gbar[2]};
                for (int c = 0; c < 3; ++c) {
                    const Vec3 dg = cell.gradient(a, 3, c);
                    pos[0] += gbar[c] * dg[0];
                    pos[1] += gbar[c] * dg[1];
                    pos[2] += gbar[c] * dg[2];
                }
                bb[3 * idx] += pos[0];
                bb[3 * idx + 1] += pos[1];
                bb[3 * idx + 2] += pos[2];
            }
        }
    }
}

void integrate_velocity_adjoint(const std::vector<VectorField3> &chain, const VectorField3 &out_bar,
                                VectorField3 &v_bar) {
    const int steps = int(chain.size()) - 1;
    VectorField3 bar = out_bar;
    for (int s = steps - 1; s >= 0; --s) {
        VectorField3 prev(bar.grid());
        compose_adjoint(chain[std::size_t(s)], chain[std::size_t(s)], bar, prev, prev);
        bar = std::move(prev);
    }
    const double scale = std::ldexp(1.0, -steps);
    auto dst = v_bar.data();
    auto src = bar.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

void warp_adjoint(const Volume3 &vol, const VectorField3 &phi, std::span<const double> out_bar,
                  VectorField3 &phi_bar) {
    const Grid &g = vol.grid();
    const double *src = vol.data().data();
    const double *f = phi.data().data();
    double *fb = phi_bar.data().data();
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const double ob = out_bar[idx];
                if (ob == 0.0) continue;
                const TrilinearCell cell(g.dims, {i + f[3 * idx], j + f[3 * idx + 1], k + f[3 * idx + 2]});
                const Vec3 dg = cell.gradient(src);
                fb[3 * idx] += ob * dg[0];
                fb[3 * idx + 1] += ob * dg[1];
                fb[3 * idx + 2] += ob * dg[2];
            }
        }
    }
}

void upsample2x_adjoint(const VectorField3 &fine_bar, VectorField3 &coarse_bar) {
    const Grid &fine = fine_bar.grid();
    const Index3 cd = coarse_bar.grid().dims;
    const double *src = fine_bar.data().data();
    double *dst = coarse_bar.data().data();
    for (int k = 0; k < fine.dims[2]; ++k) {
        for (int j = 0; j < fine.dims[1]; ++j) {
            for (int i = 0; i < fine.dims[0]; ++i) {
                const std::size_t idx = fine.index(i, j, k);
                const TrilinearCell cell(cd, {0.5 * i, 0.5 * j, 0.5 * k});
                cell.scatter3(dst, {2.0 * src[3 * idx], 2.0 * src[3 * idx + 1], 2.0 * src[3 * idx + 2]});
            }
        }
    }
}

VectorField3 estimate_inverse_zeta(const VectorField3 &fwd, const VectorField3 &bwd) {
    require_same_grid(fwd.grid(), bwd.grid(), "estimate_inverse_zeta");
    const Grid &g = fwd.grid();
    VectorField3 out(g, FieldKind::displacement);
    const double *f = fwd.data().data();
    const double *b = bwd.data().data();
    double *dst = out.data().data();
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const TrilinearCell cell(g.dims, {i + f[3 * idx], j + f[3 * idx + 1], k + f[3 * idx + 2]});
                for (int c = 0; c < 3; ++c) dst[3 * idx + c] = -cell.value(b, 3, c);
            }
        }
    }
    return out;
}

double jacobian_determinant(const Mat3 &m) noexcept {
    const double a = 1.0 + m[0], b = m[1], c = m[2];
    const double d = m[3], e = 1.0 + m[4], f = m[5];
    const double g = m[6], h = m[7], i = 1.0 + m[8];
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
}

JacobianStats jacobian_stats(const VectorField3 &phi, const Volume3 &mask) {
    require_same_grid(phi.grid(), mask.grid(), "jacobian_stats");
    const MatrixField3 grad = gradient_central(phi);
    JacobianStats stats;
    stats.det_min = std::numeric_limits<double>::infinity();
    std::size_t n = 0;
    double sum = 0.0;
    for (std::size_t idx = 0; idx < mask.size(); ++idx) {
        if (!(mask[idx] > 0.5)) continue;
        const Mat3 &m = grad.data[idx];
        double fro = 0.0;
        for (double v : m) fro += v * v;
        sum += fro;
        const double det = jacobian_determinant(m);
        stats.det_min = std::min(stats.det_min, det);
        if (det <= 0.0) ++stats.nonpositive_count;
        ++n;
    }
    if (n == 0) throw Error(ErrorCode::empty_mask, "jacobian_stats: mask is empty");
    stats.l2_norm_mean = sum / double(n);
    return stats;
}

} // namespace livreg
