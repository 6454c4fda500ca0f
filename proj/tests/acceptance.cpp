// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any fails.
// Usage: acceptance [pair_count]   (default 20; fewer pairs only for quick local runs)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "livreg/cli.hpp"
#include "livreg/io.hpp"
#include "livreg/metrics.hpp"
#include "livreg/serialize.hpp"
#include "temp_dir.hpp"

using namespace livreg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int id, bool pass, const std::string &detail) {
    if (!pass) ++failures;
    std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

void note(const std::string &line) { std::cout << "    " << line << std::endl; }

std::string fmt(const char *f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

double mean(const std::vector<double> &v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

void criterion_gradients() {
    const Grid g = make_grid({12, 12, 12});
    const Volume3 moving = testing::soft_blob(g, {5.5, 6.0, 6.2}, {3.5, 3.0, 3.2});
    const Volume3 fixed = testing::soft_blob(g, {6.3, 5.4, 5.8}, {3.0, 3.6, 3.0});
    bool pass = true;
    std::string detail;
    for (Mode m : all_modes()) {
        const EnergyModel model(moving, fixed, m, LossWeights{});
        const auto r = testing::check_gradient(model, testing::offset_parameters(model, 21), 50, 1e-5, 77);
        pass = pass && r.probes == 50 && r.max_rel_error <= 1e-4;
        detail += std::string(to_string(m)) + " " + fmt("%.2e", r.max_rel_error) + "; ";
    }
    verdict(1, pass, "max relative error over 50 probes on 12^3 (<= 1e-4): " + detail);
}

// ---------------------------------------------------------------------------
// 2-7. Phantom suite

PhantomSpec suite_spec(std::uint64_t seed) {
    static const TumorKind kinds[] = {TumorKind::stable, TumorKind::growing, TumorKind::shrinking, TumorKind::appearing,
                                      TumorKind::vanished};
    PhantomSpec spec;
    spec.seed = seed;
    spec.dims = {64, 64, 64};
    spec.deform_amplitude = 6.0;
    spec.effusion = seed % 4 == 0;
    const int count = 2 + int(seed % 2);
    spec.tumor_plan = random_tumor_plan(seed, make_grid(spec.dims, spec.spacing), count, kinds[seed % 5]);
    return spec;
}

int label_at(const std::vector<TumorInstance> &tumors, const Grid &g, const Vec3 &c) {
    const std::size_t idx = g.index(int(std::lround(c[0])), int(std::lround(c[1])), int(std::lround(c[2])));
    for (const TumorInstance &t : tumors)
        if (std::binary_search(t.voxels.begin(), t.voxels.end(), idx)) return t.id;
    return 0;
}

struct PairOutcome {
    std::uint64_t seed = 0;
    double pre_dsc = 0.0;
    std::map<Mode, MetricsReport> metrics;
    std::map<Mode, int> iterations;
    bool converged = false;
    double linv_cyclic = 0.0, linv_independent = 0.0;
    std::vector<double> stable_burden_error;
    std::vector<double> stable_inclusion;
    int stable_matched = 0;
    std::vector<std::string> stable_notes;
};

const std::vector<Mode> kSuiteModes{Mode::direct, Mode::diffeo, Mode::diffeo_inc2, Mode::diffeocyc_inc1, Mode::diffeocyc_inc2};

PairOutcome run_pair(std::uint64_t seed, json &rows, std::size_t pair_index) {
    const PhantomSpec spec = suite_spec(seed);
    const PhantomPair pair = gen_pair(spec);
    PairOutcome o;
    o.seed = seed;
    o.pre_dsc = dsc(pair.mask_a, pair.mask_b);
    const AffineTransform affine = affine_prereg(pair.mask_a, pair.mask_b);

    RegistrationResult cyclic;
    for (Mode mode : kSuiteModes) {
        RegistrationConfig cfg;
        cfg.mode = mode;
        const auto t0 = Clock::now();
        RegistrationResult r = register_masks(pair.mask_a, pair.mask_b, cfg, affine);
        const double wall = seconds(t0);
        const MetricsReport rep = report(pair, r);
        o.metrics[mode] = rep;
        o.iterations[mode] = r.iterations_run;
        rows.push_back({{"pair", pair_index},
                        {"seed", seed},
                        {"mode", std::string(to_string(mode))},
                        {"pre_dsc", o.pre_dsc},
                        {"iterations", r.iterations_run},
                        {"wall_time_s", wall},
                        {"metrics", to_json(rep)}});
        if (mode == Mode::diffeocyc_inc2) {
            o.converged = r.iterations_run < cfg.max_iters;
            cyclic = std::move(r);
        }
    }

    // Inverse consistency: the cyclic backward path against an independently
    // optimized B -> A registration, both scored in both directions.
    RegistrationConfig rev_cfg;
    rev_cfg.mode = Mode::diffeo;
    const RegistrationResult reverse = register_masks(pair.mask_b, pair.mask_a, rev_cfg);
    const VectorField3 independent = reverse_as_backward(cyclic, reverse);
    o.linv_cyclic = loss_inv(cyclic.forward, *cyclic.backward) + loss_inv(*cyclic.backward, cyclic.forward);
    o.linv_independent = loss_inv(cyclic.forward, independent) + loss_inv(independent, cyclic.forward);

    // Stable tumors, one instance at a time.
    const auto moving_tumors = label_tumors(pair.tumors_a);
    const auto fixed_tumors = label_tumors(pair.tumors_b);
    const auto changes = tumor_burden_changes(pair.tumors_a, cyclic);
    const MatchSummary match = match_tumors(warp_mask_to_fixed(pair.tumors_a, cyclic), pair.tumors_b);
    const Grid &g = pair.mask_a.grid();
    for (const PhantomTumor &t : pair.tumors) {
        if (t.plan.kind != TumorKind::stable) continue;
        const int mid = label_at(moving_tumors, g, t.plan.center);
        const int fid = label_at(fixed_tumors, g, t.center_b);
        // Reference: what phi_gt alone does to the same tumor's volume.
        const Volume3 sphere = sphere_mask(g, t.plan.center, t.plan.radius_t0);
        const double gt_error = burden_relative_error(sphere, threshold_mask(warp(sphere, pair.phi_gt)));
        for (const TumorBurdenChange &c : changes) {
            if (c.moving_id != mid) continue;
            o.stable_burden_error.push_back(c.relative_error);
            o.stable_notes.push_back("seed " + std::to_string(seed) + " stable tumor: burden error " +
                                     fmt("%.4f", c.relative_error) + " (phi_gt alone " + fmt("%.4f", gt_error) + ")");
        }
        for (const TumorMatch &m : match.tumors) {
            if (m.fixed_id != fid) continue;
            if (m.matched) {
                ++o.stable_matched;
                o.stable_inclusion.push_back(m.inclusion);
            }
        }
    }
    return o;
}

void criteria_suite(int pair_count, const fs::path &results_path) {
    std::vector<PairOutcome> pairs;
    json rows = json::array();
    for (int p = 0; p < pair_count; ++p) {
        const auto t0 = Clock::now();
        pairs.push_back(run_pair(std::uint64_t(p + 1), rows, std::size_t(p)));
        const PairOutcome &o = pairs.back();
        note("pair seed " + std::to_string(o.seed) + ": pre dsc " + fmt("%.4f", o.pre_dsc) + ", cyc_inc2 dsc " +
             fmt("%.4f", o.metrics.at(Mode::diffeocyc_inc2).dsc) + ", folds direct/diffeo/cyc_inc2 " +
             std::to_string(o.metrics.at(Mode::direct).folds) + "/" + std::to_string(o.metrics.at(Mode::diffeo).folds) + "/" +
             std::to_string(o.metrics.at(Mode::diffeocyc_inc2).folds) + ", " + fmt("%.1f s", seconds(t0)));
    }
    const double n = double(pairs.size());

    json modes = json::array();
    for (Mode m : kSuiteModes) modes.push_back(std::string(to_string(m)));
    write_json(results_path, {{"tool", "livreg"},
                              {"tool_version", kToolVersion},
                              {"config", to_json(RegistrationConfig{})},
                              {"modes", modes},
                              {"rows", rows}});

    auto mode_mean = [&](Mode m, auto get) {
        std::vector<double> v;
        for (const PairOutcome &o : pairs) v.push_back(get(o.metrics.at(m)));
        return mean(v);
    };
    for (Mode m : kSuiteModes) {
        note(std::string(to_string(m)) + ": mean dsc " + fmt("%.4f", mode_mean(m, [](const MetricsReport &r) { return r.dsc; })) +
             ", mean grad_l2 " + fmt("%.5f", mode_mean(m, [](const MetricsReport &r) { return r.grad_l2; })) +
             ", mean folds " + fmt("%.2f", mode_mean(m, [](const MetricsReport &r) { return double(r.folds); })));
    }

    // 2. Alignment
    {
        int hard = 0;
        for (const PairOutcome &o : pairs) hard += o.pre_dsc < 0.95;
        const double d = mode_mean(Mode::diffeocyc_inc2, [](const MetricsReport &r) { return r.dsc; });
        verdict(2, d >= 0.95 && hard == int(pairs.size()),
                "diffeocyc_inc2 mean DSC " + fmt("%.4f", d) + " (>= 0.95); pairs starting below 0.95: " +
                    std::to_string(hard) + "/" + std::to_string(pairs.size()));
    }

    // 3. Fold-freeness
    {
        int clean = 0;
        for (const PairOutcome &o : pairs) clean += o.metrics.at(Mode::diffeocyc_inc2).folds == 0;
        const double fd = mode_mean(Mode::direct, [](const MetricsReport &r) { return double(r.folds); });
        const double fc = mode_mean(Mode::diffeocyc_inc2, [](const MetricsReport &r) { return double(r.folds); });
        const int need = int(std::ceil(0.95 * n));
        verdict(3, clean >= need && fd > fc,
                "diffeocyc_inc2 fold-free on " + std::to_string(clean) + "/" + std::to_string(pairs.size()) + " (>= " +
                    std::to_string(need) + "); mean folds direct " + fmt("%.2f", fd) + " vs diffeocyc_inc2 " +
                    fmt("%.2f", fc) + " (direct must be strictly higher)");
    }

    // 4. Smoothness ordering
    {
        auto g = [](const MetricsReport &r) { return r.grad_l2; };
        const double gc = mode_mean(Mode::diffeocyc_inc2, g), gd = mode_mean(Mode::diffeo, g), gx = mode_mean(Mode::direct, g);
        verdict(4, gc < gd && gd < gx,
                "mean grad_l2 diffeocyc_inc2 " + fmt("%.6f", gc) + " < diffeo " + fmt("%.6f", gd) + " < direct " +
                    fmt("%.6f", gx));
    }

    // 5. Cycle fidelity
    {
        auto c = [](const MetricsReport &r) { return r.cycle_l1.value_or(INFINITY); };
        const double c1 = mode_mean(Mode::diffeocyc_inc1, c), c2 = mode_mean(Mode::diffeocyc_inc2, c);
        verdict(5, c1 <= 0.02 && c2 <= 0.02,
                "mean cycle_l1 diffeocyc_inc1 " + fmt("%.5f", c1) + ", diffeocyc_inc2 " + fmt("%.5f", c2) + " (<= 0.02)");
    }

    // 6. Inverse-consistency ordering
    {
        int better = 0, converged = 0;
        std::vector<double> lc, li;
        for (const PairOutcome &o : pairs) {
            converged += o.converged;
            better += o.converged && o.linv_cyclic < o.linv_independent;
            lc.push_back(o.linv_cyclic);
            li.push_back(o.linv_independent);
        }
        const int need = int(std::ceil(0.9 * n));
        verdict(6, better >= need,
                "cyclic L_inv below independent on " + std::to_string(better) + "/" + std::to_string(pairs.size()) +
                    " pairs (>= " + std::to_string(need) + "; converged runs " + std::to_string(converged) +
                    "); mean bidirectional L_inv cyclic " + fmt("%.3e", mean(lc)) + " vs independent " + fmt("%.3e", mean(li)));
    }

    // 7. Tumor preservation
    {
        std::vector<double> burden, inclusion;
        int stable = 0, matched = 0;
        for (const PairOutcome &o : pairs) {
            burden.insert(burden.end(), o.stable_burden_error.begin(), o.stable_burden_error.end());
            inclusion.insert(inclusion.end(), o.stable_inclusion.begin(), o.stable_inclusion.end());
            stable += int(o.stable_burden_error.size());
            for (const std::string &line : o.stable_notes) note(line);
            matched += o.stable_matched;
        }
        const double worst = burden.empty() ? INFINITY : *std::max_element(burden.begin(), burden.end());
        const double incl = inclusion.empty() ? 0.0 : mean(inclusion);
        verdict(7, stable > 0 && worst <= 0.05 && incl >= 0.45,
                std::to_string(stable) + " stable tumors: max burden_relative_error " + fmt("%.4f", worst) +
                    " (<= 0.05), mean inclusion " + fmt("%.3f", incl) + " over " + std::to_string(matched) +
                    " matched (>= 0.45)");
    }
}

// ---------------------------------------------------------------------------
// 8. Worked numbers

void criterion_worked_numbers() {
    const double e = burden_relative_error(37.8, 37.8 + 2.268);
    const double back = 0.06 * 37.8;
    // Same arithmetic through masks: 1 mm^3 voxels, 37800 vs 40068 voxels.
    const Grid g = make_grid({64, 64, 64});
    Volume3 pre(g, VolumeKind::mask), post(g, VolumeKind::mask);
    for (std::size_t i = 0; i < 37800; ++i) pre[i] = 1.0;
    for (std::size_t i = 0; i < 40068; ++i) post[i] = 1.0;
    const double ev = burden_relative_error(pre, post);
    const bool pass = std::abs(e - 0.06) <= 1e-9 * 0.06 && std::abs(back - 2.268) <= 1e-9 * 2.268 &&
                      std::abs(ev - 0.06) <= 1e-9 * 0.06 && std::abs(tumor_burden_ml(pre) - 37.8) <= 1e-9 * 37.8;
    verdict(8, pass,
            "relative error " + fmt("%.12f", e) + " for 2.268 mL on 37.8 mL; 0.06 x 37.8 = " + fmt("%.12f", back) +
                " mL; mask path " + fmt("%.12f", ev));
}

// ---------------------------------------------------------------------------
// 9. Metric self-consistency

double binned_entropy(const Volume3 &a, int bins) {
    double lo = INFINITY, hi = -INFINITY;
    for (double v : a.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<double> p(std::size_t(bins), 0.0);
    for (double v : a.data()) {
        const int b = std::clamp(int((v - lo) / (hi - lo) * bins), 0, bins - 1);
        p[std::size_t(b)] += 1.0 / double(a.size());
    }
    double h = 0.0;
    for (double q : p)
        if (q > 0) h -= q * std::log(q);
    return h;
}

void criterion_metric_identities() {
    const Grid g = make_grid({64, 64, 64}, {1.5, 1.37, 2.0});
    const Volume3 full(g, VolumeKind::mask, 1.0);
    std::vector<PhantomPair> phantoms;
    for (std::uint64_t s = 101; s <= 104; ++s) {
        PhantomSpec spec;
        spec.seed = s;
        spec.tumor_plan = random_tumor_plan(s, g, 2);
        phantoms.push_back(gen_pair(spec));
    }
    double worst_identity = 0.0;
    for (const PhantomPair &p : phantoms) {
        const Volume3 &a = p.image_a;
        worst_identity = std::max(worst_identity, std::abs(dsc(p.mask_a, p.mask_a) - 1.0));
        worst_identity = std::max(worst_identity, std::abs(ncc(a, a, full) - 1.0));
        worst_identity = std::max(worst_identity, std::abs(mi(a, a, full) - binned_entropy(a, 32)));
        worst_identity = std::max(worst_identity, std::abs(cycle_l1(a, a, full)));
    }

    std::mt19937_64 rng(2024);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int violations = 0;
    double tightest = INFINITY;
    for (int k = 0; k < 100; ++k) {
        const PhantomPair &pa = phantoms[std::size_t(k) % phantoms.size()];
        const Volume3 &a = k % 2 ? pa.image_b : pa.image_a;
        Volume3 b(g);
        switch (k % 4) {
        case 0: { // noisy copy
            const double sigma = 0.01 + 0.3 * u(rng);
            for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] + sigma * noise(rng);
            break;
        }
        case 1: { // another phantom
            const PhantomPair &other = phantoms[(std::size_t(k) / 4 + 1 + std::size_t(k)) % phantoms.size()];
            b = other.image_a;
            for (double &v : b.data()) v += 0.02 * noise(rng);
            break;
        }
        case 2: // pure noise
            for (double &v : b.data()) v = u(rng);
            break;
        default: { // monotone remap plus noise
            const double gamma = 0.5 + u(rng);
            for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::pow(std::max(a[i], 0.0), gamma) + 0.05 * noise(rng);
        }
        }
        const double mab = mi(a, b, full), maa = mi(a, a, full);
        violations += mab > maa + 1e-12;
        tightest = std::min(tightest, maa - mab);
    }
    verdict(9, worst_identity <= 1e-9 && violations == 0,
            "identity deviation " + fmt("%.2e", worst_identity) + " (<= 1e-9); mi(a,b) > mi(a,a) on " +
                std::to_string(violations) + "/100 random pairs (smallest margin " + fmt("%.4f", tightest) + ")");
}

// ---------------------------------------------------------------------------
// 10. Reproducibility through the CLI

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "livreg");
    std::vector<const char *> argv;
    for (const auto &a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(int(argv.size()), argv.data(), out, err);
    if (code != 0) note("cli exit " + std::to_string(code) + ": " + err.str());
    return code;
}

void criterion_reproducibility() {
    TempDir tmp("acceptance");
    const PhantomPair pair = gen_pair(suite_spec(7));
    write_volume(tmp / "mask_a.json", pair.mask_a);
    write_volume(tmp / "mask_b.nii", pair.mask_b);
    write_volume(tmp / "image_a.json", pair.image_a);
    bool pass = true;
    std::string detail;
    for (const char *mode : {"diffeocyc_inc2", "direct"}) {
        const fs::path first = tmp / (std::string(mode) + "_1"), second = tmp / (std::string(mode) + "_2");
        pass = pass && cli({"register", "--moving-mask", (tmp / "mask_a.json").string(), "--fixed-mask",
                            (tmp / "mask_b.nii").string(), "--moving-image", (tmp / "image_a.json").string(), "--mode",
                            mode, "--seed", "7", "--out", first.string()}) == 0;
        pass = pass && cli({"register", "--from-manifest", (first / "manifest.json").string(), "--out", second.string()}) == 0;
        if (!pass) break;
        const auto t1 = loss_trace_from_json(read_json(first / "loss_trace.json"));
        const auto t2 = loss_trace_from_json(read_json(second / "loss_trace.json"));
        bool same_trace = t1.size() == t2.size();
        for (std::size_t i = 0; same_trace && i < t1.size(); ++i) {
            same_trace = t1[i].sim == t2[i].sim && t1[i].smooth == t2[i].smooth && t1[i].antifold == t2[i].antifold &&
                         t1[i].inv == t2[i].inv && t1[i].total == t2[i].total;
        }
        const RunManifest m = run_manifest_from_json(read_json(first / "manifest.json"));
        int compared = 0;
        bool same_outputs = true;
        for (const auto &[role, file] : m.outputs) {
            if (fs::path(file).extension() != ".json" || role == "loss_trace" || role == "report") continue;
            same_outputs = same_outputs && read_payload_bytes(first / file) == read_payload_bytes(second / file);
            ++compared;
        }
        pass = pass && same_trace && same_outputs;
        detail += std::string(mode) + ": " + std::to_string(t1.size()) + " iterations " +
                  (same_trace ? "identical" : "DIFFER") + ", " + std::to_string(compared) + " output volumes " +
                  (same_outputs ? "identical" : "DIFFER") + "; ";
    }
    verdict(10, pass, "re-run from RunManifest: " + detail);
}

} // namespace

int main(int argc, char **argv) {
    const int pair_count = argc > 1 ? std::max(1, std::atoi(argv[1])) : 20;
    const auto t0 = Clock::now();
    try {
        criterion_gradients();
        criteria_suite(pair_count, "acceptance_results.json");
        criterion_worked_numbers();
        criterion_metric_identities();
        criterion_reproducibility();
    } catch (const std::exception &e) {
        std::cout << "acceptance aborted: " << e.what() << std::endl;
        return 2;
    }
    const double total = seconds(t0);
    std::cout << "total wall time " << fmt("%.1f", total) << " s (budget 1800 s), " << failures << " criteria failed"
              << std::endl;
    return failures == 0 ? 0 : 1;
}
