#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "livreg/metrics.hpp"
#include "livreg/phantom.hpp"
#include "livreg/registration.hpp"

namespace livreg {

inline constexpr const char *kToolVersion = "0.1.0";

// JSON keys are snake_case; optional metrics serialize as null. Doubles are
// printed in shortest round-trip form, so every conversion here is lossless.
nlohmann::json to_json(const MetricsReport &r);
MetricsReport metrics_report_from_json(const nlohmann::json &j);

nlohmann::json to_json(const LossWeights &w);
LossWeights loss_weights_from_json(const nlohmann::json &j);

nlohmann::json to_json(const RegistrationConfig &cfg);
RegistrationConfig registration_config_from_json(const nlohmann::json &j);

nlohmann::json to_json(const AffineTransform &a);
AffineTransform affine_from_json(const nlohmann::json &j);

nlohmann::json to_json(const std::vector<LossBreakdown> &trace);
std::vector<LossBreakdown> loss_trace_from_json(const nlohmann::json &j);

// Phantom specs accept either an explicit "tumors" list or
// "random_tumors": {"count": n, "first_kind": "stable"}.
nlohmann::json to_json(const PhantomSpec &spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json &j);

struct InputFile {
    std::string path;   // absolute
    std::string digest; // volume_digest at run time
};

struct RunManifest {
    std::string tool_version = kToolVersion;
    std::map<std::string, InputFile> inputs; // moving_mask, fixed_mask, optional images
    RegistrationConfig config;
    std::string output_format = "native";     // native or nifti
    std::string output_dir;
    std::map<std::string, std::string> outputs; // role -> file name inside output_dir
    AffineTransform affine;
    int iterations_run = 0;
    int best_iteration = 0;
    double wall_time_s = 0.0;
};

nlohmann::json to_json(const RunManifest &m);
RunManifest run_manifest_from_json(const nlohmann::json &j);

nlohmann::json read_json(const std::filesystem::path &path);
void write_json(const std::filesystem::path &path, const nlohmann::json &j);

} // namespace livreg
