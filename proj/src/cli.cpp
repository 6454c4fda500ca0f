#include "livreg/cli.hpp"

#include <chrono>
#include <filesystem>

#include "CLI11.hpp"
#include "livreg/io.hpp"
#include "livreg/metrics.hpp"
#include "livreg/render.hpp"
#include "livreg/serialize.hpp"

namespace livreg {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::invalid_argument: return kExitUsage;
    case ErrorCode::numerical_abort: return kExitNumerical;
    default: return kExitData;
    }
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string extension_for(const std::string &format) { return format == "nifti" ? ".nii" : ".json"; }

std::vector<std::string> mode_names() {
    std::vector<std::string> out;
    for (Mode m : all_modes()) out.emplace_back(to_string(m));
    return out;
}

Volume3 read_mask(const fs::path &path) { return threshold_mask(read_volume(path)); }

// ---------------------------------------------------------------------------

struct PhantomArgs {
    std::string spec, out, format = "native";
};

int cmd_phantom(const PhantomArgs &a, std::ostream &out) {
    const PhantomSpec spec = phantom_spec_from_json(read_json(a.spec));
    const PhantomPair pair = gen_pair(spec);
    fs::create_directories(a.out);
    const std::string ext = extension_for(a.format);
    const fs::path dir = a.out;
    json files;
    auto vol = [&](const char *name, const Volume3 &v) {
        write_volume(dir / (std::string(name) + ext), v);
        files[name] = std::string(name) + ext;
    };
    vol("image_a", pair.image_a);
    vol("image_b", pair.image_b);
    vol("mask_a", pair.mask_a);
    vol("mask_b", pair.mask_b);
    vol("tumors_a", pair.tumors_a);
    vol("tumors_b", pair.tumors_b);
    write_field(dir / ("phi_gt" + ext), pair.phi_gt);
    files["phi_gt"] = "phi_gt" + ext;

    json tumors = json::array();
    for (const PhantomTumor &t : pair.tumors) {
        tumors.push_back({{"kind", std::string(to_string(t.plan.kind))},
                          {"center_a", t.plan.center},
                          {"center_b", t.center_b},
                          {"radius_t0", t.plan.radius_t0},
                          {"radius_t1", t.plan.radius_t1}});
    }
    const double pre = dsc(pair.mask_a, pair.mask_b);
    write_json(dir / "pair.json", {{"tool", "livreg"},
                                   {"tool_version", kToolVersion},
                                   {"spec", to_json(spec)},
                                   {"files", files},
                                   {"tumors", tumors},
                                   {"pre_dsc", pre}});
    out << "phantom seed " << spec.seed << " written to " << a.out << " (pre-registration dsc " << pre << ")\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct RegisterArgs {
    std::string moving_mask, fixed_mask, moving_image, fixed_image;
    std::string mode = std::string(to_string(RegistrationConfig{}.mode));
    std::vector<double> weights;
    RegistrationConfig cfg;
    bool no_affine = false;
    std::string format = "native";
    std::string out;
    std::string from_manifest;
};

InputFile input_file(const std::string &path) {
    return {fs::absolute(path).lexically_normal().string(), volume_digest(path)};
}

int cmd_register(const RegisterArgs &a, std::ostream &out) {
    RunManifest m;
    if (!a.from_manifest.empty()) {
        const RunManifest prev = run_manifest_from_json(read_json(a.from_manifest));
        for (const auto &[role, f] : prev.inputs) {
            if (volume_digest(f.path) != f.digest) {
                throw Error(ErrorCode::invalid_data, "input '" + role + "' (" + f.path + ") changed since the manifest was written");
            }
        }
        m.inputs = prev.inputs;
        m.config = prev.config;
        m.output_format = prev.output_format;
    } else {
        if (a.moving_mask.empty() || a.fixed_mask.empty()) {
            throw Error(ErrorCode::invalid_argument, "register needs --moving-mask and --fixed-mask (or --from-manifest)");
        }
        m.config = a.cfg;
        m.config.mode = parse_mode(a.mode);
        if (!a.weights.empty()) {
            if (a.weights.size() != 4) throw Error(ErrorCode::invalid_argument, "--weights takes alpha,beta,gamma,mu");
            m.config.weights = {a.weights[0], a.weights[1], a.weights[2], a.weights[3]};
        }
        m.config.affine = !a.no_affine;
        m.config.validate();
        m.inputs["moving_mask"] = input_file(a.moving_mask);
        m.inputs["fixed_mask"] = input_file(a.fixed_mask);
        if (!a.moving_image.empty()) m.inputs["moving_image"] = input_file(a.moving_image);
        if (!a.fixed_image.empty()) m.inputs["fixed_image"] = input_file(a.fixed_image);
        m.output_format = a.format;
    }

    const Volume3 moving = read_mask(m.inputs.at("moving_mask").path);
    const Volume3 fixed = read_mask(m.inputs.at("fixed_mask").path);
    std::optional<Volume3> moving_image, fixed_image;
    if (m.inputs.count("moving_image")) moving_image = read_volume(m.inputs.at("moving_image").path);
    if (m.inputs.count("fixed_image")) fixed_image = read_volume(m.inputs.at("fixed_image").path);

    const auto t0 = std::chrono::steady_clock::now();
    const RegistrationResult r = register_masks(moving, fixed, m.config);
    m.wall_time_s = seconds_since(t0);

    const fs::path dir = a.out;
    fs::create_directories(dir);
    m.output_dir = fs::absolute(dir).lexically_normal().string();
    const std::string ext = extension_for(m.output_format);
    auto field = [&](const char *role, const VectorField3 &f) {
        write_field(dir / (role + ext), f);
        m.outputs[role] = role + ext;
    };
    auto vol = [&](const char *role, const Volume3 &v) {
        write_volume(dir / (role + ext), v);
        m.outputs[role] = role + ext;
    };
    field("forward", r.forward);
    if (r.backward) field("backward", *r.backward);
    if (r.forward_fields.size() > 1) {
        for (std::size_t i = 0; i < r.forward_fields.size(); ++i) {
            field(("forward_" + std::to_string(i + 1)).c_str(), r.forward_fields[i]);
        }
        for (std::size_t i = 0; i < r.backward_fields.size(); ++i) {
            field(("backward_" + std::to_string(i + 1)).c_str(), r.backward_fields[i]);
        }
    }
    vol("moving_affine", r.moving_affine);
    vol("warped_mask", r.warped_mask);
    if (r.cyclic_mask) vol("cyclic_mask", *r.cyclic_mask);

    json trace = to_json(r.loss_trace);
    trace["mode"] = std::string(to_string(r.mode));
    trace["best_iteration"] = r.best_iteration;
    write_json(dir / "loss_trace.json", trace);
    m.outputs["loss_trace"] = "loss_trace.json";

    EvalInputs in;
    if (moving_image) in.moving_image = &*moving_image;
    if (fixed_image) in.fixed_image = &*fixed_image;
    const MetricsReport rep = report(r, fixed, in);
    write_json(dir / "report.json", to_json(rep));
    m.outputs["report"] = "report.json";

    m.affine = r.affine;
    m.iterations_run = r.iterations_run;
    m.best_iteration = r.best_iteration;
    write_json(dir / "manifest.json", to_json(m));
    out << "register " << to_string(r.mode) << ": dsc " << rep.dsc << ", folds " << rep.folds << ", "
        << r.iterations_run << " iterations, " << m.wall_time_s << " s\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct WarpArgs {
    std::string in, field, out;
};

int cmd_warp(const WarpArgs &a, std::ostream &out) {
    const VolumeHeader h = read_header(a.in);
    const Volume3 vol = read_volume(a.in);
    const VectorField3 phi = read_field(a.field);
    Volume3 w = warp(vol, phi);
    if (vol.is_mask()) {
        w = threshold_mask(w);
    } else if (h.dtype == DType::uint8) {
        for (double &v : w.data()) v = std::round(v);
    }
    write_volume(a.out, w, h.dtype);
    out << "warped " << a.in << " -> " << a.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
    std::string result, tumors_moving, tumors_fixed, moving_image, fixed_image, out;
};

int cmd_metrics(const MetricsArgs &a, std::ostream &out) {
    const fs::path dir = a.result;
    const RunManifest m = run_manifest_from_json(read_json(dir / "manifest.json"));
    auto output = [&](const std::string &role) {
        const auto it = m.outputs.find(role);
        if (it == m.outputs.end()) throw Error(ErrorCode::invalid_data, "result has no '" + role + "' output");
        return dir / it->second;
    };
    RegistrationResult r;
    r.mode = m.config.mode;
    r.affine = m.affine;
    r.forward = read_field(output("forward"));
    if (m.outputs.count("backward")) r.backward = read_field(output("backward"));
    r.warped_mask = read_mask(output("warped_mask"));
    r.moving_affine = read_mask(output("moving_affine"));
    const Volume3 fixed = read_mask(m.inputs.at("fixed_mask").path);

    auto pick = [&](const std::string &flag, const char *role) -> std::optional<Volume3> {
        if (!flag.empty()) return read_volume(flag);
        if (m.inputs.count(role)) return read_volume(m.inputs.at(role).path);
        return std::nullopt;
    };
    const std::optional<Volume3> moving_image = pick(a.moving_image, "moving_image");
    const std::optional<Volume3> fixed_image = pick(a.fixed_image, "fixed_image");
    std::optional<Volume3> tumors_moving, tumors_fixed;
    if (!a.tumors_moving.empty()) tumors_moving = read_mask(a.tumors_moving);
    if (!a.tumors_fixed.empty()) tumors_fixed = read_mask(a.tumors_fixed);
    if (tumors_moving.has_value() != tumors_fixed.has_value()) {
        throw Error(ErrorCode::invalid_argument, "--tumors-moving and --tumors-fixed go together");
    }

    EvalInputs in;
    if (moving_image) in.moving_image = &*moving_image;
    if (fixed_image) in.fixed_image = &*fixed_image;
    if (tumors_moving) {
        in.moving_tumors = &*tumors_moving;
        in.fixed_tumors = &*tumors_fixed;
    }
    const json j = to_json(report(r, fixed, in));
    write_json(a.out, j);
    out << j.dump() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct SuiteArgs {
    std::string pairs, out;
    std::vector<std::string> modes;
    RegistrationConfig cfg;
};

int cmd_suite(const SuiteArgs &a, std::ostream &out) {
    const json list = read_json(a.pairs);
    const json &entries = list.is_object() && list.contains("pairs") ? list.at("pairs") : list;
    if (!entries.is_array()) throw Error(ErrorCode::invalid_data, a.pairs + ": expected an array of phantom specs");
    std::vector<Mode> modes;
    for (const std::string &name : a.modes.empty() ? mode_names() : a.modes) modes.push_back(parse_mode(name));
    a.cfg.validate();

    json rows = json::array();
    for (std::size_t p = 0; p < entries.size(); ++p) {
        const PhantomSpec spec = phantom_spec_from_json(entries[p]);
        const PhantomPair pair = gen_pair(spec);
        const double pre = dsc(pair.mask_a, pair.mask_b);
        std::optional<AffineTransform> affine;
        if (a.cfg.affine) affine = affine_prereg(pair.mask_a, pair.mask_b);
        for (Mode mode : modes) {
            RegistrationConfig cfg = a.cfg;
            cfg.mode = mode;
            const auto t0 = std::chrono::steady_clock::now();
            const RegistrationResult r = register_masks(pair.mask_a, pair.mask_b, cfg, affine);
            const double wall = seconds_since(t0);
            const MetricsReport rep = report(pair, r);
            rows.push_back({{"pair", p},
                            {"seed", spec.seed},
                            {"mode", std::string(to_string(mode))},
                            {"pre_dsc", pre},
                            {"iterations", r.iterations_run},
                            {"wall_time_s", wall},
                            {"metrics", to_json(rep)}});
            out << "pair " << p << " seed " << spec.seed << " " << to_string(mode) << ": dsc " << rep.dsc << ", folds "
                << rep.folds << ", " << wall << " s\n";
        }
    }
    json modes_json = json::array();
    for (Mode m : modes) modes_json.push_back(std::string(to_string(m)));
    write_json(a.out, {{"tool", "livreg"},
                       {"tool_version", kToolVersion},
                       {"config", to_json(a.cfg)},
                       {"modes", modes_json},
                       {"rows", rows}});
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
    std::string in, axis = "z", out;
    std::vector<std::string> overlays;
    int index = 0;
};

int cmd_render(const RenderArgs &a, std::ostream &out) {
    static const Rgb defaults[] = {parse_color("blue"), parse_color("red"), parse_color("green")};
    const Volume3 base = read_volume(a.in);
    std::vector<Volume3> masks;
    std::vector<Rgb> colors;
    for (const std::string &spec : a.overlays) {
        std::string path = spec;
        Rgb color = defaults[masks.size() % 3];
        const auto colon = spec.rfind(':');
        if (colon != std::string::npos && colon > 0) {
            // Only split when the suffix really is a color, so paths with colons still work.
            try {
                color = parse_color(spec.substr(colon + 1));
                path = spec.substr(0, colon);
            } catch (const Error &) {
            }
        }
        masks.push_back(read_mask(path));
        colors.push_back(color);
    }
    std::vector<Overlay> overlays;
    for (std::size_t i = 0; i < masks.size(); ++i) overlays.push_back({&masks[i], colors[i]});
    const int axis = a.axis == "x" ? 0 : (a.axis == "y" ? 1 : 2);
    write_file(a.out, render_slice(base, overlays, axis, a.index));
    out << "rendered " << a.axis << "=" << a.index << " -> " << a.out << "\n";
    return kExitOk;
}

void add_config_options(CLI::App *sub, RegistrationConfig &cfg) {
    sub->add_option("--lr", cfg.learn_rate, "Adam learning rate")->capture_default_str();
    sub->add_option("--max-iters", cfg.max_iters, "iteration budget")->capture_default_str();
    sub->add_option("--patience", cfg.patience, "stall window")->capture_default_str();
    sub->add_option("--rel-tol", cfg.rel_tol, "relative improvement that resets the stall window")->capture_default_str();
    sub->add_option("--squaring-steps", cfg.integration.squaring_steps, "scaling-and-squaring steps")->capture_default_str();
    sub->add_option("--seed", cfg.seed, "run seed recorded in the manifest")->capture_default_str();
    sub->add_option("--crop-margin", cfg.crop_margin, "crop margin in voxels, < 0 disables")->capture_default_str();
}

} // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Deformable registration of longitudinal liver masks", "livreg"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    PhantomArgs pa;
    auto *phantom = app.add_subcommand("phantom", "generate a synthetic longitudinal pair");
    phantom->add_option("--spec", pa.spec, "phantom spec JSON")->required();
    phantom->add_option("--out", pa.out, "output directory")->required();
    phantom->add_option("--format", pa.format, "volume format")->check(CLI::IsMember({"native", "nifti"}))->capture_default_str();

    RegisterArgs ra;
    auto *reg = app.add_subcommand("register", "register a moving mask onto a fixed mask");
    auto *o_mm = reg->add_option("--moving-mask", ra.moving_mask, "moving mask (exam A)");
    auto *o_fm = reg->add_option("--fixed-mask", ra.fixed_mask, "fixed mask (exam B)");
    auto *o_mi = reg->add_option("--moving-image", ra.moving_image, "moving intensities, for ncc/mi/cycle_l1");
    auto *o_fi = reg->add_option("--fixed-image", ra.fixed_image, "fixed intensities, for ncc/mi");
    auto *o_mode = reg->add_option("--mode", ra.mode, "registration mode")->check(CLI::IsMember(mode_names()))->capture_default_str();
    auto *o_w = reg->add_option("--weights", ra.weights, "alpha,beta,gamma,mu")->delimiter(',')->expected(4);
    auto *o_na = reg->add_flag("--no-affine", ra.no_affine, "skip the affine stage");
    auto *o_fmt = reg->add_option("--format", ra.format, "output volume format")->check(CLI::IsMember({"native", "nifti"}))->capture_default_str();
    reg->add_option("--out", ra.out, "output directory")->required();
    add_config_options(reg, ra.cfg);
    auto *o_man = reg->add_option("--from-manifest", ra.from_manifest, "re-run the configuration and inputs of a manifest");
    for (auto *o : {o_mm, o_fm, o_mi, o_fi, o_mode, o_w, o_na, o_fmt}) o_man->excludes(o);
    for (const char *name : {"--lr", "--max-iters", "--patience", "--rel-tol", "--squaring-steps", "--seed", "--crop-margin"}) {
        o_man->excludes(reg->get_option(name));
    }

    WarpArgs wa;
    auto *wrp = app.add_subcommand("warp", "resample a volume through a displacement field");
    wrp->add_option("--in", wa.in, "input volume")->required();
    wrp->add_option("--field", wa.field, "displacement field on the output grid")->required();
    wrp->add_option("--out", wa.out, "output volume")->required();

    MetricsArgs ma;
    auto *met = app.add_subcommand("metrics", "evaluate a register output directory");
    met->add_option("--result", ma.result, "register output directory")->required();
    met->add_option("--tumors-moving", ma.tumors_moving, "tumor mask of the moving exam");
    met->add_option("--tumors-fixed", ma.tumors_fixed, "tumor mask of the fixed exam");
    met->add_option("--moving-image", ma.moving_image, "moving intensities (default: from the manifest)");
    met->add_option("--fixed-image", ma.fixed_image, "fixed intensities (default: from the manifest)");
    met->add_option("--out", ma.out, "report JSON")->required();

    SuiteArgs sa;
    auto *sui = app.add_subcommand("suite", "run several modes over a list of phantom pairs");
    sui->add_option("--pairs", sa.pairs, "JSON array of phantom specs")->required();
    sui->add_option("--modes", sa.modes, "modes to run (default: all)")->delimiter(',')->check(CLI::IsMember(mode_names()));
    sui->add_option("--out", sa.out, "table JSON")->required();
    add_config_options(sui, sa.cfg);
    bool suite_no_affine = false;
    sui->add_flag("--no-affine", suite_no_affine, "skip the affine stage");

    RenderArgs rna;
    auto *ren = app.add_subcommand("render", "render one slice with mask overlays to PPM");
    ren->add_option("--in", rna.in, "base volume")->required();
    ren->add_option("--overlay", rna.overlays, "mask[:color], repeatable");
    ren->add_option("--axis", rna.axis, "slice axis")->check(CLI::IsMember({"x", "y", "z"}))->capture_default_str();
    ren->add_option("--index", rna.index, "slice index")->required();
    ren->add_option("--out", rna.out, "output PPM")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (phantom->parsed()) return cmd_phantom(pa, out);
        if (reg->parsed()) return cmd_register(ra, out);
        if (wrp->parsed()) return cmd_warp(wa, out);
        if (met->parsed()) return cmd_metrics(ma, out);
        if (sui->parsed()) {
            sa.cfg.affine = !suite_no_affine;
            return cmd_suite(sa, out);
        }
        if (ren->parsed()) return cmd_render(rna, out);
    } catch (const Error &e) {
        err << "livreg: " << to_string(e.code()) << ": " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error &e) {
        err << "livreg: io_error: " << e.what() << "\n";
        return kExitData;
    } catch (const json::exception &e) {
        err << "livreg: invalid_data: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

} // namespace livreg
