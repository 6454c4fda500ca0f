#include "livreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace livreg {

namespace {

void same_dims(const Volume3 &a, const Volume3 &b, const char *context) {
    if (a.grid().dims != b.grid().dims) {
        throw Error(ErrorCode::grid_mismatch, std::string(context) + ": volumes have different dimensions");
    }
}

std::vector<std::size_t> mask_voxels(const Volume3 &mask, const char *context) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] > 0.5) idx.push_back(i);
    if (idx.empty()) throw Error(ErrorCode::empty_mask, std::string(context) + ": mask is empty");
    return idx;
}

std::vector<int> histogram_bins(const Volume3 &v, const std::vector<std::size_t> &idx, int bins) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i : idx) {
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
    }
    std::vector<int> out(idx.size(), 0);
    if (!(hi > lo)) return out;
    for (std::size_t n = 0; n < idx.size(); ++n) {
        const int b = int((v[idx[n]] - lo) / (hi - lo) * bins);
        out[n] = std::clamp(b, 0, bins - 1);
    }
    return out;
}

} // namespace

double dsc(const Volume3 &a, const Volume3 &b) {
    require_same_grid(a.grid(), b.grid(), "dsc");
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] > 0.5, y = b[i] > 0.5;
        inter += x && y;
        na += x;
        nb += y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

double ncc(const Volume3 &a, const Volume3 &b, const Volume3 &mask) {
    require_same_grid(a.grid(), b.grid(), "ncc");
    require_same_grid(a.grid(), mask.grid(), "ncc");
    const auto idx = mask_voxels(mask, "ncc");
    double ma = 0.0, mb = 0.0;
    bool const_a = true, const_b = true;
    for (std::size_t i : idx) {
        ma += a[i];
        mb += b[i];
        const_a = const_a && a[i] == a[idx[0]];
        const_b = const_b && b[i] == b[idx[0]];
    }
    if (const_a || const_b) throw Error(ErrorCode::invalid_argument, "ncc: zero intensity variance in mask");
    ma /= double(idx.size());
    mb /= double(idx.size());
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i : idx) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double mi(const Volume3 &a, const Volume3 &b, const Volume3 &mask, int bins) {
    require_same_grid(a.grid(), b.grid(), "mi");
    require_same_grid(a.grid(), mask.grid(), "mi");
    if (bins < 2) throw Error(ErrorCode::invalid_argument, "mi: need at least 2 bins");
    const auto idx = mask_voxels(mask, "mi");
    const auto ba = histogram_bins(a, idx, bins), bb = histogram_bins(b, idx, bins);
    std::vector<double> joint(std::size_t(bins * bins), 0.0), pa(std::size_t(bins), 0.0), pb(std::size_t(bins), 0.0);
    const double w = 1.0 / double(idx.size());
    for (std::size_t n = 0; n < idx.size(); ++n) {
        joint[std::size_t(ba[n] * bins + bb[n])] += w;
        pa[std::size_t(ba[n])] += w;
        pb[std::size_t(bb[n])] += w;
    }
    double out = 0.0;
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
            const double p = joint[std::size_t(i * bins + j)];
            if (p > 0.0) out += p * std::log(p / (pa[std::size_t(i)] * pb[std::size_t(j)]));
        }
    return std::max(out, 0.0);
}

double cycle_l1(const Volume3 &a, const Volume3 &a_cyc, const Volume3 &mask) {
    require_same_grid(a.grid(), a_cyc.grid(), "cycle_l1");
    require_same_grid(a.grid(), mask.grid(), "cycle_l1");
    const auto idx = mask_voxels(mask, "cycle_l1");
    double s = 0.0;
    for (std::size_t i : idx) s += std::abs(a[i] - a_cyc[i]);
    return s / double(idx.size());
}

std::vector<TumorInstance> label_tumors(const Volume3 &mask) {
    const Grid &g = mask.grid();
    std::vector<int> label(mask.size(), 0);
    std::vector<TumorInstance> out;
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < mask.size(); ++seed) {
        if (label[seed] || !(mask[seed] > 0.5)) continue;
        TumorInstance inst;
        inst.id = int(out.size()) + 1;
        label[seed] = inst.id;
        stack.assign(1, seed);
        while (!stack.empty()) {
            const std::size_t c = stack.back();
            stack.pop_back();
            inst.voxels.push_back(c);
            const Index3 p = g.coords(c);
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int x = p[0] + dx, y = p[1] + dy, z = p[2] + dz;
                        if (x < 0 || y < 0 || z < 0 || x >= g.dims[0] || y >= g.dims[1] || z >= g.dims[2]) continue;
                        const std::size_t n = g.index(x, y, z);
                        if (label[n] || !(mask[n] > 0.5)) continue;
                        label[n] = inst.id;
                        stack.push_back(n);
                    }
        }
        std::sort(inst.voxels.begin(), inst.voxels.end());
        inst.volume_ml = double(inst.voxels.size()) * g.voxel_volume_mm3() / 1000.0;
        out.push_back(std::move(inst));
    }
    return out;
}

double tumor_burden_ml(const Volume3 &mask) {
    return double(count_above(mask)) * mask.grid().voxel_volume_mm3() / 1000.0;
}

MatchSummary match_tumors(const Volume3 &warped_tumors, const Volume3 &fixed_tumors) {
    same_dims(warped_tumors, fixed_tumors, "match_tumors");
    const auto fixed = label_tumors(fixed_tumors);
    const auto warped = label_tumors(warped_tumors);
    std::vector<int> wlabel(warped_tumors.size(), 0);
    for (const auto &w : warped)
        for (std::size_t v : w.voxels) wlabel[v] = w.id;

    MatchSummary s;
    s.total = int(fixed.size());
    double inclusion_sum = 0.0;
    std::vector<std::size_t> overlap(warped.size() + 1);
    for (const auto &f : fixed) {
        std::fill(overlap.begin(), overlap.end(), 0);
        for (std::size_t v : f.voxels) ++overlap[std::size_t(wlabel[v])];
        std::size_t best = 0;
        for (std::size_t id = 1; id < overlap.size(); ++id) best = std::max(best, overlap[id]);
        TumorMatch m;
        m.fixed_id = f.id;
        m.inclusion = double(best) / double(f.voxels.size());
        m.matched = m.inclusion > kTumorMatchThreshold;
        if (m.matched) {
            ++s.matched;
            inclusion_sum += m.inclusion;
        }
        s.tumors.push_back(m);
    }
    if (s.matched > 0) s.mean_inclusion = inclusion_sum / double(s.matched);
    return s;
}

double burden_relative_error(double pre_ml, double post_ml) {
    if (!(pre_ml > 0.0)) throw Error(ErrorCode::empty_mask, "burden_relative_error: pre-registration burden is zero");
    return std::abs(post_ml - pre_ml) / pre_ml;
}

double burden_relative_error(const Volume3 &pre, const Volume3 &post) {
    same_dims(pre, post, "burden_relative_error");
    return burden_relative_error(tumor_burden_ml(pre), tumor_burden_ml(post));
}

EvalImages evaluate_images(const RegistrationResult &result, const Volume3 &moving_image) {
    EvalImages out;
    const Grid &g = result.forward.grid();
    out.warped_image = apply_transform(moving_image, result.affine, result.forward);
    out.moving_affine = apply_affine(moving_image, result.affine, g);
    if (result.backward) out.cyclic_image = warp(warp(out.moving_affine, result.forward), *result.backward);
    return out;
}

Volume3 warp_mask_to_fixed(const Volume3 &moving, const RegistrationResult &result) {
    Volume3 m = threshold_mask(moving);
    return threshold_mask(apply_transform(m, result.affine, result.forward));
}

MetricsReport report(const RegistrationResult &result, const Volume3 &fixed_mask, const EvalInputs &in) {
    require_same_grid(result.forward.grid(), fixed_mask.grid(), "report");
    MetricsReport r;
    r.dsc = dsc(result.warped_mask, fixed_mask);
    const JacobianStats js = jacobian_stats(result.forward, fixed_mask);
    r.grad_l2 = js.l2_norm_mean;
    r.folds = js.nonpositive_count;

    if (in.moving_image) {
        const EvalImages im = evaluate_images(result, *in.moving_image);
        if (in.fixed_image) {
            r.ncc = ncc(im.warped_image, *in.fixed_image, fixed_mask);
            r.mi = mi(im.warped_image, *in.fixed_image, fixed_mask);
        }
        if (result.backward) {
            r.cycle_l1 = cycle_l1(im.moving_affine, im.cyclic_image, threshold_mask(result.moving_affine));
        }
    }
    if (in.moving_tumors && in.fixed_tumors) {
        const Volume3 warped = warp_mask_to_fixed(*in.moving_tumors, result);
        const MatchSummary m = match_tumors(warped, *in.fixed_tumors);
        r.matched = m.matched;
        r.total = m.total;
        r.mean_inclusion_ratio = m.mean_inclusion;
        if (count_above(*in.moving_tumors) > 0) r.burden_relative_error = burden_relative_error(*in.moving_tumors, warped);
    }
    return r;
}

MetricsReport report(const PhantomPair &pair, const RegistrationResult &result) {
    return report(result, pair.mask_b, {&pair.image_a, &pair.image_b, &pair.tumors_a, &pair.tumors_b});
}

std::vector<TumorBurdenChange> tumor_burden_changes(const Volume3 &moving_tumors, const RegistrationResult &result) {
    std::vector<TumorBurdenChange> out;
    const double vox_ml = moving_tumors.grid().voxel_volume_mm3() / 1000.0;
    for (const TumorInstance &t : label_tumors(moving_tumors)) {
        Volume3 single(moving_tumors.grid(), VolumeKind::mask);
        for (std::size_t v : t.voxels) single[v] = 1.0;
        const Volume3 warped = threshold_mask(apply_transform(single, result.affine, result.forward));
        TumorBurdenChange c;
        c.moving_id = t.id;
        c.pre_ml = t.volume_ml;
        c.post_ml = double(count_above(warped)) * vox_ml;
        c.relative_error = burden_relative_error(c.pre_ml, c.post_ml);
        out.push_back(c);
    }
    return out;
}

std::vector<ModeRun> run_mode_suite(const PhantomPair &pair, const std::vector<Mode> &modes,
                                    const RegistrationConfig &cfg_base) {
    std::optional<AffineTransform> affine;
    if (cfg_base.affine) affine = affine_prereg(pair.mask_a, pair.mask_b);
    std::vector<ModeRun> out;
    for (Mode m : modes) {
        RegistrationConfig cfg = cfg_base;
        cfg.mode = m;
        ModeRun run;
        run.mode = m;
        run.result = register_masks(pair.mask_a, pair.mask_b, cfg, affine);
        run.metrics = report(pair, run.result);
        out.push_back(std::move(run));
    }
    return out;
}

} // namespace livreg
