#pragma once

#include <optional>
#include <vector>

#include "livreg/phantom.hpp"
#include "livreg/registration.hpp"

namespace livreg {

// 2|a n b| / (|a| + |b|) on masks thresholded at 0.5; two empty masks give 1.
double dsc(const Volume3 &a, const Volume3 &b);

// Global zero-mean normalized cross-correlation over the voxels of `mask`.
double ncc(const Volume3 &a, const Volume3 &b, const Volume3 &mask);

// Plug-in mutual information (natural log) from a joint histogram of the
// intensities, each min-max normalized within `mask`.
double mi(const Volume3 &a, const Volume3 &b, const Volume3 &mask, int bins = 32);

// Mean absolute difference over the voxels of `mask`.
double cycle_l1(const Volume3 &a, const Volume3 &a_cyc, const Volume3 &mask);

struct TumorInstance {
    int id = 0;
    std::vector<std::size_t> voxels;
    double volume_ml = 0.0;
};

// 26-connected components of a mask, ids from 1 in scan order.
std::vector<TumorInstance> label_tumors(const Volume3 &mask);

double tumor_burden_ml(const Volume3 &mask);

struct TumorMatch {
    int fixed_id = 0;
    double inclusion = 0.0;
    bool matched = false;
};

struct MatchSummary {
    std::vector<TumorMatch> tumors;
    int matched = 0;
    int total = 0;
    std::optional<double> mean_inclusion; // over matched tumors
};

constexpr double kTumorMatchThreshold = 0.10;

// For each fixed tumor, inclusion = max over warped instances of
// |warped n fixed| / |fixed|; matched when inclusion > 0.10.
MatchSummary match_tumors(const Volume3 &warped_tumors, const Volume3 &fixed_tumors);

double burden_relative_error(double pre_ml, double post_ml);
double burden_relative_error(const Volume3 &pre, const Volume3 &post);

struct MetricsReport {
    double dsc = 0.0;
    std::optional<double> ncc;
    std::optional<double> mi;
    double grad_l2 = 0.0;
    std::optional<double> cycle_l1;
    std::size_t folds = 0;
    int matched = 0;
    int total = 0;
    std::optional<double> mean_inclusion_ratio;
    std::optional<double> burden_relative_error;
};

// Optional inputs on the moving (A) and fixed (B) grids.
struct EvalInputs {
    const Volume3 *moving_image = nullptr;
    const Volume3 *fixed_image = nullptr;
    const Volume3 *moving_tumors = nullptr;
    const Volume3 *fixed_tumors = nullptr;
};

struct EvalImages {
    Volume3 warped_image;   // B' intensities, single resample of A
    Volume3 moving_affine;  // A after the affine stage
    Volume3 cyclic_image;   // A', cyclic modes only
};

EvalImages evaluate_images(const RegistrationResult &result, const Volume3 &moving_image);

// Thresholded single-resample warp of a moving-grid mask into the fixed frame.
Volume3 warp_mask_to_fixed(const Volume3 &moving, const RegistrationResult &result);

MetricsReport report(const RegistrationResult &result, const Volume3 &fixed_mask, const EvalInputs &in = {});
MetricsReport report(const PhantomPair &pair, const RegistrationResult &result);

struct TumorBurdenChange {
    int moving_id = 0;
    double pre_ml = 0.0;
    double post_ml = 0.0;
    double relative_error = 0.0;
};

// Burden change of every moving tumor instance warped on its own.
std::vector<TumorBurdenChange> tumor_burden_changes(const Volume3 &moving_tumors, const RegistrationResult &result);

struct ModeRun {
    Mode mode = Mode::direct;
    RegistrationResult result;
    MetricsReport metrics;
};

// Every mode shares one affine stage, the seed and the optimizer budget of cfg_base.
std::vector<ModeRun> run_mode_suite(const PhantomPair &pair, const std::vector<Mode> &modes,
                                    const RegistrationConfig &cfg_base);

} // namespace livreg
