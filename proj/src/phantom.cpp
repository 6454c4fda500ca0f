#include "livreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace livreg {

std::string_view to_string(TumorKind kind) noexcept {
    switch (kind) {
    case TumorKind::stable: return "stable";
    case TumorKind::growing: return "growing";
    case TumorKind::shrinking: return "shrinking";
    case TumorKind::appearing: return "new";
    case TumorKind::vanished: return "vanished";
    }
    return "stable";
}

TumorKind parse_tumor_kind(std::string_view name) {
    for (TumorKind k : {TumorKind::stable, TumorKind::growing, TumorKind::shrinking, TumorKind::appearing,
                        TumorKind::vanished}) {
        if (to_string(k) == name) return k;
    }
    throw Error(ErrorCode::invalid_argument, "unknown tumor kind '" + std::string(name) + "'");
}

void TumorPlan::validate() const {
    for (double c : center)
        if (!std::isfinite(c)) throw Error(ErrorCode::invalid_argument, "tumor center is not finite");
    const bool r0_zero = kind == TumorKind::appearing;
    const bool r1_zero = kind == TumorKind::vanished;
    if (r0_zero ? radius_t0 != 0.0 : !(radius_t0 > 0.0)) {
        throw Error(ErrorCode::invalid_argument, "tumor radius_t0 must be > 0 (0 exactly for new tumors)");
    }
    if (r1_zero ? radius_t1 != 0.0 : !(radius_t1 > 0.0)) {
        throw Error(ErrorCode::invalid_argument, "tumor radius_t1 must be > 0 (0 exactly for vanished tumors)");
    }
}

void PhantomSpec::validate() const {
    make_grid(dims, spacing);
    if (!(deform_amplitude >= 0.0)) throw Error(ErrorCode::invalid_argument, "deform_amplitude must be >= 0");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::invalid_argument, "noise_sigma must be >= 0");
    for (const auto &t : tumor_plan) t.validate();
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent, reproducible stream per purpose.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(purpose)};
    return std::mt19937_64(seq);
}

Vec3 random_unit(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / len, v[1] / len, v[2] / len};
}

// Separable Gaussian blur of one interleaved component, clamped borders.
void gaussian_blur(std::vector<double> &data, const Index3 &dims, int comp, double sigma) {
    const int radius = int(std::ceil(3.0 * sigma));
    std::vector<double> kernel(std::size_t(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) ksum += kernel[std::size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double &k : kernel) k /= ksum;

    const std::size_t strides[3] = {1, std::size_t(dims[0]), std::size_t(dims[0]) * std::size_t(dims[1])};
    std::vector<double> line, out;
    for (int axis = 0; axis < 3; ++axis) {
        const int n = dims[axis];
        line.resize(std::size_t(n));
        out.resize(std::size_t(n));
        const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
        for (int u = 0; u < dims[a1]; ++u) {
            for (int w = 0; w < dims[a2]; ++w) {
                const std::size_t base = std::size_t(u) * strides[a1] + std::size_t(w) * strides[a2];
                for (int i = 0; i < n; ++i) line[std::size_t(i)] = data[3 * (base + std::size_t(i) * strides[axis]) + std::size_t(comp)];
                for (int i = 0; i < n; ++i) {
                    double s = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        s += kernel[std::size_t(t + radius)] * line[std::size_t(std::clamp(i + t, 0, n - 1))];
                    }
                    out[std::size_t(i)] = s;
                }
                for (int i = 0; i < n; ++i) data[3 * (base + std::size_t(i) * strides[axis]) + std::size_t(comp)] = out[std::size_t(i)];
            }
        }
    }
}

std::size_t fold_count(const VectorField3 &phi) {
    std::size_t n = 0;
    for (const Mat3 &m : gradient_central(phi).data) n += jacobian_determinant(m) <= 0.0;
    return n;
}

// Two passes of 26-neighbour dilation minus the mask itself.
Volume3 outer_rim(const Volume3 &mask, int width) {
    const Grid &g = mask.grid();
    Volume3 cur = threshold_mask(mask);
    for (int pass = 0; pass < width; ++pass) {
        Volume3 next = cur;
        for (int k = 0; k < g.dims[2]; ++k)
            for (int j = 0; j < g.dims[1]; ++j)
                for (int i = 0; i < g.dims[0]; ++i) {
                    if (cur.at(i, j, k) > 0.5) continue;
                    bool hit = false;
                    for (int dz = -1; dz <= 1 && !hit; ++dz)
                        for (int dy = -1; dy <= 1 && !hit; ++dy)
                            for (int dx = -1; dx <= 1 && !hit; ++dx) {
                                const int x = i + dx, y = j + dy, z = k + dz;
                                if (x < 0 || y < 0 || z < 0 || x >= g.dims[0] || y >= g.dims[1] || z >= g.dims[2]) continue;
                                hit = cur.at(x, y, z) > 0.5;
                            }
                    if (hit) next.at(i, j, k) = 1.0;
                }
        cur = std::move(next);
    }
    for (std::size_t i = 0; i < cur.size(); ++i)
        if (mask[i] > 0.5) cur[i] = 0.0;
    return cur;
}

Volume3 render_image(const Volume3 &liver, const Volume3 &tumors, const Volume3 *rim, double sigma,
                     std::mt19937_64 rng) {
    Volume3 img(liver.grid());
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = kBackgroundIntensity;
        if (liver[i] > 0.5) v = tumors[i] > 0.5 ? kTumorIntensity : kLiverIntensity;
        else if (rim && (*rim)[i] > 0.5) v = 0.3;
        if (sigma > 0.0) v += sigma * noise(rng);
        img[i] = std::clamp(v, 0.0, 1.0);
    }
    return img;
}

bool sphere_inside(const Volume3 &mask, const Vec3 &c, double r) {
    const Grid &g = mask.grid();
    const int lo[3] = {int(std::floor(c[0] - r)), int(std::floor(c[1] - r)), int(std::floor(c[2] - r))};
    const int hi[3] = {int(std::ceil(c[0] + r)), int(std::ceil(c[1] + r)), int(std::ceil(c[2] + r))};
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) {
                if (std::hypot(i - c[0], j - c[1], k - c[2]) > r) continue;
                if (i < 0 || j < 0 || k < 0 || i >= g.dims[0] || j >= g.dims[1] || k >= g.dims[2]) return false;
                if (!(mask.at(i, j, k) > 0.5)) return false;
            }
    return true;
}

} // namespace

Volume3 sphere_mask(const Grid &grid, const Vec3 &center, double radius) {
    Volume3 m(grid, VolumeKind::mask);
    if (radius <= 0.0) return m;
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i)
                if (std::hypot(i - center[0], j - center[1], k - center[2]) <= radius) m.at(i, j, k) = 1.0;
    return m;
}

Volume3 gen_liver_mask(std::uint64_t seed, const Grid &grid) {
    grid.validate();
    for (int d : grid.dims)
        if (d < 32) throw Error(ErrorCode::invalid_argument, "gen_liver_mask: grid must be at least 32 voxels per axis");
    auto rng = stream(seed, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    Vec3 center, axes;
    const double base[3] = {0.34, 0.30, 0.27};
    for (int a = 0; a < 3; ++a) {
        center[a] = 0.5 * (grid.dims[a] - 1) + (u(rng) - 0.5) * 0.08 * grid.dims[a];
        axes[a] = base[a] * grid.dims[a] * (0.92 + 0.16 * u(rng));
    }
    const double expo = 2.2 + 0.8 * u(rng);
    const int harmonics = 3 + int(seed % 3);
    struct Harmonic {
        Vec3 k;
        double amp, phase;
    };
    std::vector<Harmonic> hs;
    for (int h = 0; h < harmonics; ++h) {
        const Vec3 d = random_unit(rng);
        const double freq = 1.5 + 2.0 * u(rng);
        hs.push_back({{freq * d[0], freq * d[1], freq * d[2]}, 0.03 + 0.04 * u(rng), 2 * kPi * u(rng)});
    }
    const double fraction = 0.18 + 0.08 * u(rng);

    // Along every ray from the centre the superellipsoid radius grows linearly
    // with the global scale, so the scale reaching a target volume is a quantile.
    std::vector<double> ratio(grid.voxel_count());
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                const Vec3 q{(i - center[0]) / axes[0], (j - center[1]) / axes[1], (k - center[2]) / axes[2]};
                const double len = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
                double r = 1.0;
                if (len > 0.0) {
                    for (const auto &h : hs) {
                        r += h.amp * std::sin((h.k[0] * q[0] + h.k[1] * q[1] + h.k[2] * q[2]) / len + h.phase);
                    }
                }
                const double rho = std::pow(std::pow(std::abs(q[0]), expo) + std::pow(std::abs(q[1]), expo) +
                                                std::pow(std::abs(q[2]), expo),
                                            1.0 / expo);
                ratio[grid.index(i, j, k)] = rho / r;
            }
    std::vector<double> sorted = ratio;
    const std::size_t target = std::size_t(fraction * double(sorted.size()));
    std::nth_element(sorted.begin(), sorted.begin() + std::ptrdiff_t(target), sorted.end());
    const double scale = sorted[target];

    Volume3 mask(grid, VolumeKind::mask);
    for (std::size_t i = 0; i < ratio.size(); ++i) mask[i] = ratio[i] < scale ? 1.0 : 0.0;
    return mask;
}

VectorField3 gen_gt_deformation(std::uint64_t seed, const Grid &grid, double amplitude) {
    grid.validate();
    if (!(amplitude >= 0.0)) throw Error(ErrorCode::invalid_argument, "deformation amplitude must be >= 0");
    if (amplitude == 0.0) return VectorField3(grid);
    auto rng = stream(seed, 2);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::vector<double> v(3 * grid.voxel_count());
    for (double &x : v) x = n(rng);
    for (int c = 0; c < 3; ++c) gaussian_blur(v, grid.dims, c, 8.0);

    // Smooth part at RMS 0.3, a global drift and a localized bulge.
    double rms = 0.0;
    for (double x : v) rms += x * x;
    rms = std::sqrt(rms / double(grid.voxel_count()));
    const Vec3 drift = random_unit(rng);
    for (std::size_t i = 0; i < grid.voxel_count(); ++i)
        for (int c = 0; c < 3; ++c) v[3 * i + std::size_t(c)] = 0.3 * v[3 * i + std::size_t(c)] / rms + 2.5 * drift[std::size_t(c)];
    // The bulge sits on the liver surface of the same seed and points outward,
    // so the fixed liver is indented there.
    Vec3 bc{0.5 * (grid.dims[0] - 1), 0.5 * (grid.dims[1] - 1), 0.5 * (grid.dims[2] - 1)};
    Vec3 dir = random_unit(rng);
    if (std::min({grid.dims[0], grid.dims[1], grid.dims[2]}) >= 32) {
        const Volume3 liver = gen_liver_mask(seed, grid);
        Vec3 centroid{0, 0, 0};
        std::vector<Vec3> surface;
        double count = 0.0;
        for (int k = 1; k + 1 < grid.dims[2]; ++k)
            for (int j = 1; j + 1 < grid.dims[1]; ++j)
                for (int i = 1; i + 1 < grid.dims[0]; ++i) {
                    if (!(liver.at(i, j, k) > 0.5)) continue;
                    centroid = {centroid[0] + i, centroid[1] + j, centroid[2] + k};
                    count += 1.0;
                    if (liver.at(i - 1, j, k) < 0.5 || liver.at(i + 1, j, k) < 0.5 || liver.at(i, j - 1, k) < 0.5 ||
                        liver.at(i, j + 1, k) < 0.5 || liver.at(i, j, k - 1) < 0.5 || liver.at(i, j, k + 1) < 0.5)
                        surface.push_back({double(i), double(j), double(k)});
                }
        if (!surface.empty()) {
            for (double &c : centroid) c /= count;
            bc = surface[std::size_t(u(rng) * double(surface.size())) % surface.size()];
            const Vec3 out{bc[0] - centroid[0], bc[1] - centroid[1], bc[2] - centroid[2]};
            const double len = std::sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2]);
            if (len > 0.0) dir = {out[0] / len, out[1] / len, out[2] / len};
        }
    }
    const double width = 0.1 * double(std::min({grid.dims[0], grid.dims[1], grid.dims[2]}));
    const double strength = 3.0 + 0.5 * u(rng);
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                const double d2 = (i - bc[0]) * (i - bc[0]) + (j - bc[1]) * (j - bc[1]) + (k - bc[2]) * (k - bc[2]);
                const double w = strength * std::exp(-0.5 * d2 / (width * width));
                const std::size_t idx = grid.index(i, j, k);
                for (int c = 0; c < 3; ++c) v[3 * idx + std::size_t(c)] += w * dir[std::size_t(c)];
            }
    const VectorField3 base(grid, std::move(v), FieldKind::velocity);

    // Fixed-point search for the velocity scale that reaches the amplitude.
    double scale = amplitude / base.max_norm();
    VectorField3 phi;
    for (int it = 0; it < 6; ++it) {
        VectorField3 vel = base;
        vel *= scale;
        phi = integrate_velocity(vel);
        const double reached = phi.max_norm();
        if (std::abs(reached - amplitude) <= 0.02 * amplitude) break;
        scale *= amplitude / reached;
    }
    if (fold_count(phi) > 0) {
        throw Error(ErrorCode::invalid_argument, "deformation amplitude too large: ground truth would fold");
    }
    return phi;
}

std::vector<TumorPlan> random_tumor_plan(std::uint64_t seed, const Grid &grid, int count, TumorKind first) {
    const Volume3 liver = gen_liver_mask(seed, grid);
    auto rng = stream(seed, 3);
    std::uniform_int_distribution<int> ux(0, grid.dims[0] - 1), uy(0, grid.dims[1] - 1), uz(0, grid.dims[2] - 1);
    const TumorKind order[] = {TumorKind::stable, TumorKind::growing, TumorKind::shrinking, TumorKind::appearing,
                               TumorKind::vanished};
    int start = 0;
    while (order[start] != first) ++start;

    std::vector<TumorPlan> plan;
    for (int t = 0; t < count; ++t) {
        TumorPlan p;
        p.kind = order[(start + t) % 5];
        switch (p.kind) {
        case TumorKind::stable: p.radius_t0 = p.radius_t1 = 6.0; break;
        case TumorKind::growing: p.radius_t0 = 4.0, p.radius_t1 = 5.5; break;
        case TumorKind::shrinking: p.radius_t0 = 5.5, p.radius_t1 = 4.0; break;
        case TumorKind::appearing: p.radius_t0 = 0.0, p.radius_t1 = 4.0; break;
        case TumorKind::vanished: p.radius_t0 = 4.0, p.radius_t1 = 0.0; break;
        }
        const double reach = std::max(p.radius_t0, p.radius_t1);
        bool placed = false;
        for (int attempt = 0; attempt < 5000 && !placed; ++attempt) {
            const Vec3 c{double(ux(rng)), double(uy(rng)), double(uz(rng))};
            if (!sphere_inside(liver, c, reach + 3.0)) continue;
            bool clear = true;
            for (const auto &o : plan) {
                const double gap = std::hypot(c[0] - o.center[0], c[1] - o.center[1], c[2] - o.center[2]);
                clear = clear && gap > reach + std::max(o.radius_t0, o.radius_t1) + 4.0;
            }
            if (!clear) continue;
            p.center = c;
            placed = true;
        }
        if (!placed) throw Error(ErrorCode::invalid_argument, "random_tumor_plan: no room for another tumor");
        plan.push_back(p);
    }
    return plan;
}

PhantomPair gen_pair(const PhantomSpec &spec) {
    spec.validate();
    const Grid grid = make_grid(spec.dims, spec.spacing);
    PhantomPair pair;
    pair.spec = spec;
    pair.mask_a = gen_liver_mask(spec.seed, grid);
    pair.phi_gt = gen_gt_deformation(spec.seed, grid, spec.deform_amplitude);
    pair.mask_b = threshold_mask(warp(pair.mask_a, pair.phi_gt));

    pair.tumors_a = Volume3(grid, VolumeKind::mask);
    pair.tumors_b = Volume3(grid, VolumeKind::mask);
    for (const TumorPlan &t : spec.tumor_plan) {
        const double reach = std::max(t.radius_t0, t.radius_t1);
        if (!sphere_inside(pair.mask_a, t.center, reach)) {
            throw Error(ErrorCode::invalid_argument, "tumor outside the liver");
        }
        // B-frame centre: solve c_b + phi(c_b) = c_a by fixed-point iteration.
        Vec3 cb = t.center;
        for (int it = 0; it < 50; ++it) {
            const Vec3 d = sample_field_trilinear(pair.phi_gt, cb);
            cb = {t.center[0] - d[0], t.center[1] - d[1], t.center[2] - d[2]};
        }
        pair.tumors.push_back({t, cb});
        const Volume3 sa = sphere_mask(grid, t.center, t.radius_t0);
        const Volume3 sb = sphere_mask(grid, cb, t.radius_t1);
        for (std::size_t i = 0; i < sa.size(); ++i) {
            if (sa[i] > 0.5) pair.tumors_a[i] = 1.0;
            if (sb[i] > 0.5 && pair.mask_b[i] > 0.5) pair.tumors_b[i] = 1.0;
        }
    }

    const Volume3 rim = spec.effusion ? outer_rim(pair.mask_b, 2) : Volume3(grid, VolumeKind::mask);
    pair.image_a = render_image(pair.mask_a, pair.tumors_a, nullptr, spec.noise_sigma, stream(spec.seed, 4));
    pair.image_b = render_image(pair.mask_b, pair.tumors_b, spec.effusion ? &rim : nullptr, spec.noise_sigma,
                                stream(spec.seed, 5));
    return pair;
}

} // namespace livreg
