#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "livreg/field_transforms.hpp"
#include "livreg/grid.hpp"

namespace livreg {

enum class TumorKind { stable, growing, shrinking, appearing, vanished };

std::string_view to_string(TumorKind kind) noexcept;
TumorKind parse_tumor_kind(std::string_view name);

struct TumorPlan {
    Vec3 center{0, 0, 0}; // voxel coordinates in the A frame
    double radius_t0 = 3.0;
    double radius_t1 = 3.0;
    TumorKind kind = TumorKind::stable;
    void validate() const;
};

struct PhantomSpec {
    std::uint64_t seed = 1;
    Index3 dims{64, 64, 64};
    Vec3 spacing{1.5, 1.37, 2.0};
    double deform_amplitude = 6.0;
    std::vector<TumorPlan> tumor_plan;
    double noise_sigma = 0.01;
    bool effusion = false;
    void validate() const;
};

struct PhantomTumor {
    TumorPlan plan;
    Vec3 center_b{0, 0, 0}; // repositioned by the ground-truth deformation
};

struct PhantomPair {
    PhantomSpec spec;
    Volume3 image_a, image_b;
    Volume3 mask_a, mask_b;
    Volume3 tumors_a, tumors_b;
    VectorField3 phi_gt; // pull-back: voxel p of B comes from p + phi_gt(p) in A
    std::vector<PhantomTumor> tumors;
};

constexpr double kBackgroundIntensity = 0.15;
constexpr double kLiverIntensity = 0.55;
constexpr double kTumorIntensity = 0.35;

Volume3 gen_liver_mask(std::uint64_t seed, const Grid &grid);
VectorField3 gen_gt_deformation(std::uint64_t seed, const Grid &grid, double amplitude);
PhantomPair gen_pair(const PhantomSpec &spec);

// A valid plan of `count` tumors inside the liver of gen_liver_mask(seed, grid),
// cycling through the tumor kinds starting at `first`.
std::vector<TumorPlan> random_tumor_plan(std::uint64_t seed, const Grid &grid, int count,
                                         TumorKind first = TumorKind::stable);

Volume3 sphere_mask(const Grid &grid, const Vec3 &center, double radius);

} // namespace livreg
