#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "livreg/energy.hpp"

namespace livreg {

// q = linear * p + translation, from fixed-grid voxel coordinates to
// moving-grid voxel coordinates.
struct AffineTransform {
    Mat3 linear{1, 0, 0, 0, 1, 0, 0, 0, 1};
    Vec3 translation{0, 0, 0};

    static AffineTransform identity() { return {}; }
    Vec3 apply(const Vec3 &p) const noexcept;
    double determinant() const noexcept;
    void validate() const;
};

// out(p) = vol(affine(p)), sampled onto `target`.
Volume3 apply_affine(const Volume3 &vol, const AffineTransform &affine, const Grid &target);

// out(p) = vol(affine(p + phi(p))): the full fixed-to-moving mapping in one resample.
Volume3 apply_transform(const Volume3 &vol, const AffineTransform &affine, const VectorField3 &phi);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

void adam_step(std::span<double> params, std::span<const double> grads, AdamState &state, double lr);

struct AffineConfig {
    int iterations = 150;
    double learn_rate = 0.05; // voxels, at the mask's RMS radius for the linear part
};

AffineTransform affine_prereg(const Volume3 &moving_mask, const Volume3 &fixed_mask, const AffineConfig &cfg = {});

struct RegistrationConfig {
    Mode mode = Mode::diffeocyc_inc2;
    LossWeights weights{};
    double learn_rate = 0.05;
    int max_iters = 500;
    int patience = 25;
    double rel_tol = 1e-4;
    IntegrationConfig integration{};
    std::uint64_t seed = 0;
    bool affine = true;   // run affine_prereg first
    int crop_margin = 6;  // voxels around the union of both masks; < 0 disables cropping
    void validate() const;
};

struct RegistrationResult {
    Mode mode = Mode::diffeocyc_inc2;
    AffineTransform affine;
    Volume3 moving_affine;                    // S_A resampled by the affine, fixed grid
    std::vector<VectorField3> forward_fields; // full resolution, incremental
    VectorField3 forward;                     // composed forward displacement
    std::vector<VectorField3> backward_fields;
    std::optional<VectorField3> backward;
    Volume3 warped_mask;                      // S_B'
    std::optional<Volume3> cyclic_mask;       // S_A'
    std::vector<LossBreakdown> loss_trace;
    int iterations_run = 0;
    int best_iteration = 0;
    LossBreakdown best;
    Box crop_box;
};

RegistrationResult register_masks(const Volume3 &moving_mask, const Volume3 &fixed_mask, const RegistrationConfig &cfg,
                                  std::optional<AffineTransform> affine = std::nullopt);

// Composition of the moving-side transforms of a result and an independently
// registered reverse pair, expressed as a displacement on the forward
// result's fixed grid: u(x) = reverse(forward_affine(x)) - x.
VectorField3 reverse_as_backward(const RegistrationResult &forward, const RegistrationResult &reverse);

} // namespace livreg
