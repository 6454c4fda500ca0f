#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "livreg/field_transforms.hpp"
#include "livreg/grid.hpp"

namespace livreg {

struct LossWeights {
    double alpha = 1.0; // mask alignment
    double beta = 0.8;  // smoothness
    double gamma = 1.0; // anti-folding
    double mu = 0.4;    // inverse consistency
    void validate() const;
};

struct LossBreakdown {
    double sim = 0.0;
    double smooth = 0.0;
    double antifold = 0.0;
    double inv = 0.0;
    double total = 0.0;
};

enum class Mode { direct, diffeo, diffeo_inc2, diffeocyc_inc1, diffeocyc_inc2 };

struct ModeTraits {
    int fields_per_direction; // incremental steps along one path
    bool cyclic;              // backward path B' -> A' present
    bool integrate;           // parameters are velocities (scaling and squaring)
    bool antifold;            // anti-folding term active
};

ModeTraits traits(Mode mode) noexcept;
std::string_view to_string(Mode mode) noexcept;
Mode parse_mode(std::string_view name);
const std::vector<Mode> &all_modes();

constexpr double kDiceEpsilon = 1e-6;

// Individual terms. All are per-voxel means except loss_sim.
double loss_smooth(const VectorField3 &phi);
double loss_antifold(const VectorField3 &phi);
double loss_sim(const Volume3 &warped, const Volume3 &fixed);
double loss_inv(const VectorField3 &fwd, const VectorField3 &bwd);

// Same terms, also accumulating scale * d(term) into the supplied gradients.
double loss_smooth(const VectorField3 &phi, VectorField3 &grad, double scale);
double loss_antifold(const VectorField3 &phi, VectorField3 &grad, double scale);
double loss_sim(const Volume3 &warped, const Volume3 &fixed, std::span<double> grad_warped, double scale);
double loss_inv(const VectorField3 &fwd, const VectorField3 &bwd, VectorField3 &grad_fwd, VectorField3 &grad_bwd,
                double scale);

// Half-resolution parameters, one field per incremental step. Forward steps
// come first, then backward steps for cyclic modes.
struct Parameters {
    std::vector<VectorField3> fields;
    std::size_t scalar_count() const noexcept;
};

// Everything the forward pass produced; the reverse pass reads it back.
struct PipelineState {
    Parameters params;
    std::vector<std::vector<VectorField3>> chains; // scaling-and-squaring intermediates (diffeo modes)
    std::vector<VectorField3> fields;              // full-resolution incremental displacements
    VectorField3 forward;                          // composed forward displacement
    std::optional<VectorField3> backward;          // composed backward displacement (cyclic modes)
    Volume3 warped;                                // S_B' = warp(S_A, forward)
    std::optional<Volume3> cyclic;                 // S_A' = warp(S_B', backward)
};

// The energy of one mask pair under one mode, on one grid. Parameters live on
// grid.coarse() and are lifted to the full grid by integration (diffeo modes)
// and upsampling.
class EnergyModel {
  public:
    EnergyModel(Volume3 moving, Volume3 fixed, Mode mode, LossWeights weights, IntegrationConfig integration = {});

    const Grid &grid() const noexcept { return moving_.grid(); }
    const Grid &coarse_grid() const noexcept { return coarse_; }
    Mode mode() const noexcept { return mode_; }
    const LossWeights &weights() const noexcept { return weights_; }
    const Volume3 &moving() const noexcept { return moving_; }
    const Volume3 &fixed() const noexcept { return fixed_; }
    std::size_t parameter_field_count() const noexcept;

    Parameters zero_parameters() const;
    PipelineState forward(const Parameters &params) const;
    LossBreakdown loss_total(const PipelineState &state) const;
    Parameters grad_total(const PipelineState &state) const;

  private:
    Volume3 moving_;
    Volume3 fixed_;
    Mode mode_;
    LossWeights weights_;
    IntegrationConfig integration_;
    Grid coarse_;
};

} // namespace livreg
