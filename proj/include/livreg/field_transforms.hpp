#pragma once

#include <cstddef>
#include <vector>

#include "livreg/grid.hpp"

namespace livreg {

struct IntegrationConfig {
    int squaring_steps = 7;
    void validate() const;
};

struct JacobianStats {
    double l2_norm_mean = 0.0;         // mean over the mask of sum_ij (d phi^i / d x_j)^2
    std::size_t nonpositive_count = 0; // mask voxels with det(I + grad phi) <= 0
    double det_min = 1.0;
};

// Pull-back resampling: out(p) = vol(p + phi(p)). Masks stay masks.
Volume3 warp(const Volume3 &vol, const VectorField3 &phi);

// Scaling and squaring: phi = v / 2^steps, then `steps` self-compositions.
VectorField3 integrate_velocity(const VectorField3 &v, const IntegrationConfig &cfg = {});

// Single field equivalent to warping by `first` and then by `second`:
// result(p) = second(p) + first(p + second(p)).
VectorField3 compose(const VectorField3 &first, const VectorField3 &second);

// Inverse estimate of `fwd` built from the opposite-direction field:
// result(p) = -bwd(p + fwd(p)).
VectorField3 estimate_inverse_zeta(const VectorField3 &fwd, const VectorField3 &bwd);

double jacobian_determinant(const Mat3 &grad) noexcept; // det(I + grad)
JacobianStats jacobian_stats(const VectorField3 &phi, const Volume3 &mask);

// ---------------------------------------------------------------------------
// Reverse-mode building blocks. Every *_adjoint function accumulates (+=)
// into the output buffers it is handed.

// All intermediate fields of scaling and squaring: chain[0] = v / 2^steps,
// chain.back() = result.
std::vector<VectorField3> integrate_velocity_chain(const VectorField3 &v, const IntegrationConfig &cfg);
void integrate_velocity_adjoint(const std::vector<VectorField3> &chain, const VectorField3 &out_bar,
                                VectorField3 &v_bar);

void compose_adjoint(const VectorField3 &first, const VectorField3 &second, const VectorField3 &out_bar,
                     VectorField3 &first_bar, VectorField3 &second_bar);

// Gradient of sum_p out_bar(p) * warp(vol, phi)(p) with respect to phi.
void warp_adjoint(const Volume3 &vol, const VectorField3 &phi, std::span<const double> out_bar,
                  VectorField3 &phi_bar);

void upsample2x_adjoint(const VectorField3 &fine_bar, VectorField3 &coarse_bar);

} // namespace livreg
