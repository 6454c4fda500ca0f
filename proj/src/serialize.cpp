#include "livreg/serialize.hpp"

#include <fstream>

#include "livreg/io.hpp"

namespace livreg {

using nlohmann::json;

namespace {

json optional_number(const std::optional<double> &v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json &j, const char *key) {
    const json &v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
}

// Runs a conversion and reports malformed or out-of-range content as a data error.
template <class F>
auto guarded(const char *what, F &&f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception &e) {
        throw Error(ErrorCode::invalid_data, std::string(what) + ": " + e.what());
    } catch (const Error &e) {
        if (e.code() != ErrorCode::invalid_argument) throw;
        throw Error(ErrorCode::invalid_data, std::string(what) + ": " + e.what());
    }
}

} // namespace

json to_json(const MetricsReport &r) {
    json j;
    j["dsc"] = r.dsc;
    j["ncc"] = optional_number(r.ncc);
    j["mi"] = optional_number(r.mi);
    j["grad_l2"] = r.grad_l2;
    j["cycle_l1"] = optional_number(r.cycle_l1);
    j["folds"] = r.folds;
    j["matched_tumors"] = {{"matched", r.matched}, {"total", r.total}};
    j["mean_inclusion_ratio"] = optional_number(r.mean_inclusion_ratio);
    j["burden_relative_error"] = optional_number(r.burden_relative_error);
    return j;
}

MetricsReport metrics_report_from_json(const json &j) {
    return guarded("metrics report", [&] {
        MetricsReport r;
        r.dsc = j.at("dsc").get<double>();
        r.ncc = number_or_null(j, "ncc");
        r.mi = number_or_null(j, "mi");
        r.grad_l2 = j.at("grad_l2").get<double>();
        r.cycle_l1 = number_or_null(j, "cycle_l1");
        r.folds = j.at("folds").get<std::size_t>();
        r.matched = j.at("matched_tumors").at("matched").get<int>();
        r.total = j.at("matched_tumors").at("total").get<int>();
        r.mean_inclusion_ratio = number_or_null(j, "mean_inclusion_ratio");
        r.burden_relative_error = number_or_null(j, "burden_relative_error");
        return r;
    });
}

json to_json(const LossWeights &w) { return {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"mu", w.mu}}; }

LossWeights loss_weights_from_json(const json &j) {
    return guarded("loss weights", [&] {
        LossWeights w;
        w.alpha = j.at("alpha").get<double>();
        w.beta = j.at("beta").get<double>();
        w.gamma = j.at("gamma").get<double>();
        w.mu = j.at("mu").get<double>();
        w.validate();
        return w;
    });
}

json to_json(const RegistrationConfig &cfg) {
    json j;
    j["mode"] = std::string(to_string(cfg.mode));
    j["weights"] = to_json(cfg.weights);
    j["learn_rate"] = cfg.learn_rate;
    j["max_iters"] = cfg.max_iters;
    j["patience"] = cfg.patience;
    j["rel_tol"] = cfg.rel_tol;
    j["squaring_steps"] = cfg.integration.squaring_steps;
    j["seed"] = cfg.seed;
    j["affine"] = cfg.affine;
    j["crop_margin"] = cfg.crop_margin;
    return j;
}

RegistrationConfig registration_config_from_json(const json &j) {
    return guarded("registration config", [&] {
        RegistrationConfig cfg;
        cfg.mode = parse_mode(j.at("mode").get<std::string>());
        cfg.weights = loss_weights_from_json(j.at("weights"));
        cfg.learn_rate = j.at("learn_rate").get<double>();
        cfg.max_iters = j.at("max_iters").get<int>();
        cfg.patience = j.at("patience").get<int>();
        cfg.rel_tol = j.at("rel_tol").get<double>();
        cfg.integration.squaring_steps = j.at("squaring_steps").get<int>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.affine = j.at("affine").get<bool>();
        cfg.crop_margin = j.at("crop_margin").get<int>();
        cfg.validate();
        return cfg;
    });
}

json to_json(const AffineTransform &a) { return {{"linear", a.linear}, {"translation", a.translation}}; }

AffineTransform affine_from_json(const json &j) {
    return guarded("affine", [&] {
        AffineTransform a;
        a.linear = j.at("linear").get<Mat3>();
        a.translation = j.at("translation").get<Vec3>();
        a.validate();
        return a;
    });
}

json to_json(const std::vector<LossBreakdown> &trace) {
    json rows = json::array();
    for (const LossBreakdown &b : trace) {
        rows.push_back({{"sim", b.sim}, {"smooth", b.smooth}, {"antifold", b.antifold}, {"inv", b.inv}, {"total", b.total}});
    }
    return {{"iterations", rows}};
}

std::vector<LossBreakdown> loss_trace_from_json(const json &j) {
    return guarded("loss trace", [&] {
        std::vector<LossBreakdown> out;
        for (const json &r : j.at("iterations")) {
            LossBreakdown b;
            b.sim = r.at("sim").get<double>();
            b.smooth = r.at("smooth").get<double>();
            b.antifold = r.at("antifold").get<double>();
            b.inv = r.at("inv").get<double>();
            b.total = r.at("total").get<double>();
            out.push_back(b);
        }
        return out;
    });
}

json to_json(const PhantomSpec &spec) {
    json tumors = json::array();
    for (const TumorPlan &t : spec.tumor_plan) {
        tumors.push_back({{"center", t.center},
                          {"radius_t0", t.radius_t0},
                          {"radius_t1", t.radius_t1},
                          {"kind", std::string(to_string(t.kind))}});
    }
    return {{"seed", spec.seed},
            {"dims", spec.dims},
            {"spacing", spec.spacing},
            {"deform_amplitude", spec.deform_amplitude},
            {"noise_sigma", spec.noise_sigma},
            {"effusion", spec.effusion},
            {"tumors", tumors}};
}

PhantomSpec phantom_spec_from_json(const json &j) {
    return guarded("phantom spec", [&] {
        PhantomSpec spec;
        spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("dims")) spec.dims = j["dims"].get<Index3>();
        if (j.contains("spacing")) spec.spacing = j["spacing"].get<Vec3>();
        if (j.contains("deform_amplitude")) spec.deform_amplitude = j["deform_amplitude"].get<double>();
        if (j.contains("noise_sigma")) spec.noise_sigma = j["noise_sigma"].get<double>();
        if (j.contains("effusion")) spec.effusion = j["effusion"].get<bool>();
        if (j.contains("tumors") && j.contains("random_tumors")) {
            throw Error(ErrorCode::invalid_data, "phantom spec: give either \"tumors\" or \"random_tumors\"");
        }
        if (j.contains("tumors")) {
            for (const json &t : j["tumors"]) {
                TumorPlan p;
                p.center = t.at("center").get<Vec3>();
                p.radius_t0 = t.at("radius_t0").get<double>();
                p.radius_t1 = t.at("radius_t1").get<double>();
                p.kind = parse_tumor_kind(t.at("kind").get<std::string>());
                spec.tumor_plan.push_back(p);
            }
        }
        if (j.contains("random_tumors")) {
            const json &r = j["random_tumors"];
            const TumorKind first = parse_tumor_kind(r.value("first_kind", std::string("stable")));
            spec.tumor_plan = random_tumor_plan(spec.seed, make_grid(spec.dims, spec.spacing), r.at("count").get<int>(), first);
        }
        spec.validate();
        return spec;
    });
}

json to_json(const RunManifest &m) {
    json inputs = json::object();
    for (const auto &[role, f] : m.inputs) inputs[role] = {{"path", f.path}, {"digest", f.digest}};
    json j;
    j["tool"] = "livreg";
    j["tool_version"] = m.tool_version;
    j["command"] = "register";
    j["inputs"] = inputs;
    j["config"] = to_json(m.config);
    j["output_format"] = m.output_format;
    j["output_dir"] = m.output_dir;
    j["outputs"] = m.outputs;
    j["affine"] = to_json(m.affine);
    j["iterations_run"] = m.iterations_run;
    j["best_iteration"] = m.best_iteration;
    j["wall_time_s"] = m.wall_time_s;
    return j;
}

RunManifest run_manifest_from_json(const json &j) {
    return guarded("run manifest", [&] {
        if (j.at("command").get<std::string>() != "register") {
            throw Error(ErrorCode::invalid_data, "run manifest: not a register manifest");
        }
        RunManifest m;
        m.tool_version = j.at("tool_version").get<std::string>();
        for (const auto &[role, f] : j.at("inputs").items()) {
            m.inputs[role] = {f.at("path").get<std::string>(), f.at("digest").get<std::string>()};
        }
        m.config = registration_config_from_json(j.at("config"));
        m.output_format = j.at("output_format").get<std::string>();
        m.output_dir = j.at("output_dir").get<std::string>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.affine = affine_from_json(j.at("affine"));
        m.iterations_run = j.at("iterations_run").get<int>();
        m.best_iteration = j.at("best_iteration").get<int>();
        m.wall_time_s = j.at("wall_time_s").get<double>();
        return m;
    });
}

json read_json(const std::filesystem::path &path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error &e) {
        throw Error(ErrorCode::invalid_data, path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path &path, const json &j) { write_file(path, j.dump(2) + "\n"); }

} // namespace livreg
