#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "livreg/error.hpp"

namespace livreg {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

// Row-major 3x3 matrix, m[i * 3 + j] = d(component i) / d(axis j).
using Mat3 = std::array<double, 9>;

// Regular voxel lattice. Voxel (i, j, k) lives at linear index
// i + nx * (j + ny * k): x fastest, z slowest.
struct Grid {
    Index3 dims{2, 2, 2};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    std::size_t voxel_count() const noexcept {
        return std::size_t(dims[0]) * std::size_t(dims[1]) * std::size_t(dims[2]);
    }
    std::size_t index(int i, int j, int k) const noexcept {
        return std::size_t(i) + std::size_t(dims[0]) * (std::size_t(j) + std::size_t(dims[1]) * std::size_t(k));
    }
    Index3 coords(std::size_t idx) const noexcept;
    double voxel_volume_mm3() const noexcept { return spacing[0] * spacing[1] * spacing[2]; }

    // Throws unless every dim >= 2 and every spacing > 0.
    void validate() const;

    // Half-resolution lattice for velocity parameters: ceil(n / 2) voxels per
    // axis at twice the spacing. Coarse voxel c sits on fine voxel 2c.
    Grid coarse() const;

    friend bool operator==(const Grid &, const Grid &) = default;
};

Grid make_grid(Index3 dims, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {0.0, 0.0, 0.0});
void require_same_grid(const Grid &a, const Grid &b, const char *context);

enum class VolumeKind { intensity, mask };
enum class FieldKind { velocity, displacement };

class Volume3 {
  public:
    Volume3() = default;
    explicit Volume3(const Grid &grid, VolumeKind kind = VolumeKind::intensity, double fill = 0.0);
    Volume3(const Grid &grid, std::vector<double> data, VolumeKind kind = VolumeKind::intensity);

    const Grid &grid() const noexcept { return grid_; }
    VolumeKind kind() const noexcept { return kind_; }
    bool is_mask() const noexcept { return kind_ == VolumeKind::mask; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    double operator[](std::size_t idx) const noexcept { return data_[idx]; }
    double &operator[](std::size_t idx) noexcept { return data_[idx]; }
    double at(int i, int j, int k) const noexcept { return data_[grid_.index(i, j, k)]; }
    double &at(int i, int j, int k) noexcept { return data_[grid_.index(i, j, k)]; }

  private:
    Grid grid_;
    std::vector<double> data_;
    VolumeKind kind_ = VolumeKind::intensity;
};

// Per-voxel 3-vectors stored interleaved (x, y, z per voxel), voxel units.
class VectorField3 {
  public:
    VectorField3() = default;
    explicit VectorField3(const Grid &grid, FieldKind kind = FieldKind::displacement);
    VectorField3(const Grid &grid, std::vector<double> data, FieldKind kind = FieldKind::displacement);

    const Grid &grid() const noexcept { return grid_; }
    FieldKind kind() const noexcept { return kind_; }
    void set_kind(FieldKind kind) noexcept { kind_ = kind; }
    std::size_t voxel_count() const noexcept { return data_.size() / 3; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    Vec3 at(std::size_t idx) const noexcept { return {data_[3 * idx], data_[3 * idx + 1], data_[3 * idx + 2]}; }
    void set(std::size_t idx, const Vec3 &v) noexcept {
        data_[3 * idx] = v[0];
        data_[3 * idx + 1] = v[1];
        data_[3 * idx + 2] = v[2];
    }

    VectorField3 &operator+=(const VectorField3 &other);
    VectorField3 &operator*=(double s) noexcept;
    double max_norm() const noexcept;

  private:
    Grid grid_;
    std::vector<double> data_;
    FieldKind kind_ = FieldKind::displacement;
};

struct MatrixField3 {
    Grid grid;
    std::vector<Mat3> data;
};

// ---------------------------------------------------------------------------
// Trilinear sampling with clamp-to-edge boundaries.

namespace detail {

struct AxisCell {
    int i0;
    int step;      // offset of the upper corner: 0 on the last voxel
    double frac;
    double inside; // 0 when the coordinate was clamped (no derivative)
};

// Derivatives are one-sided from the right, so the last voxel itself has none.
inline AxisCell axis_cell(double q, int n) noexcept {
    if (!(q > 0.0)) return {0, 1, 0.0, q == 0.0 ? 1.0 : 0.0};
    const double last = double(n - 1);
    if (q >= last) return {n - 1, 0, 0.0, q == last ? 1.0 : 0.0};
    const int i0 = static_cast<int>(q);
    return {i0, 1, q - double(i0), 1.0};
}

inline double lerp(double a, double b, double t) noexcept { return a + t * (b - a); }

} // namespace detail

// The 2x2x2 neighbourhood of a continuous point. Corner c has offsets
// (c & 1, (c >> 1) & 1, c >> 2). Values are evaluated with nested lerps so
// constants and grid points are reproduced bit-exactly.
struct TrilinearCell {
    std::array<std::size_t, 8> idx;
    detail::AxisCell ax, ay, az;

    TrilinearCell(const Index3 &dims, const Vec3 &q) noexcept
        : ax(detail::axis_cell(q[0], dims[0])), ay(detail::axis_cell(q[1], dims[1])), az(detail::axis_cell(q[2], dims[2])) {
        const std::size_t sy = std::size_t(dims[0]);
        const std::size_t sz = sy * std::size_t(dims[1]);
        const std::size_t base = std::size_t(ax.i0) + sy * std::size_t(ay.i0) + sz * std::size_t(az.i0);
        for (int c = 0; c < 8; ++c) {
            idx[c] = base + std::size_t((c & 1) * ax.step) + sy * std::size_t(((c >> 1) & 1) * ay.step) +
                     sz * std::size_t((c >> 2) * az.step);
        }
    }

    // stride 1 for scalar volumes, 3 (with comp in 0..2) for vector fields.
    double value(const double *data, int stride = 1, int comp = 0) const noexcept {
        double v[8];
        for (int c = 0; c < 8; ++c) v[c] = data[idx[c] * stride + comp];
        const double x00 = detail::lerp(v[0], v[1], ax.frac);
        const double x10 = detail::lerp(v[2], v[3], ax.frac);
        const double x01 = detail::lerp(v[4], v[5], ax.frac);
        const double x11 = detail::lerp(v[6], v[7], ax.frac);
        return detail::lerp(detail::lerp(x00, x10, ay.frac), detail::lerp(x01, x11, ay.frac), az.frac);
    }

    // Derivative of the sampled value with respect to the sample position.
    Vec3 gradient(const double *data, int stride = 1, int comp = 0) const noexcept {
        double v[8];
        for (int c = 0; c < 8; ++c) v[c] = data[idx[c] * stride + comp];
        const double fx = ax.frac, fy = ay.frac, fz = az.frac;
        const double gx = ((1 - fy) * (1 - fz) * (v[1] - v[0]) + fy * (1 - fz) * (v[3] - v[2]) +
                           (1 - fy) * fz * (v[5] - v[4]) + fy * fz * (v[7] - v[6])) * ax.inside;
        const double gy = ((1 - fx) * (1 - fz) * (v[2] - v[0]) + fx * (1 - fz) * (v[3] - v[1]) +
                           (1 - fx) * fz * (v[6] - v[4]) + fx * fz * (v[7] - v[5])) * ay.inside;
        const double gz = ((1 - fx) * (1 - fy) * (v[4] - v[0]) + fx * (1 - fy) * (v[5] - v[1]) +
                           (1 - fx) * fy * (v[6] - v[2]) + fx * fy * (v[7] - v[3])) * az.inside;
        return {gx, gy, gz};
    }

    // Adjoint of value(): accumulates g * weight into each corner.
    void scatter(double *bar, double g, int stride = 1, int comp = 0) const noexcept {
        const double wx[2] = {1 - ax.frac, ax.frac};
        const double wy[2] = {1 - ay.frac, ay.frac};
        const double wz[2] = {1 - az.frac, az.frac};
        for (int c = 0; c < 8; ++c) {
            bar[idx[c] * stride + comp] += g * wx[c & 1] * wy[(c >> 1) & 1] * wz[c >> 2];
        }
    }

    // Vector variant of scatter for interleaved fields.
    void scatter3(double *bar, const Vec3 &g) const noexcept {
        const double wx[2] = {1 - ax.frac, ax.frac};
        const double wy[2] = {1 - ay.frac, ay.frac};
        const double wz[2] = {1 - az.frac, az.frac};
        for (int c = 0; c < 8; ++c) {
            const double w = wx[c & 1] * wy[(c >> 1) & 1] * wz[c >> 2];
            double *dst = bar + 3 * idx[c];
            dst[0] += g[0] * w;
            dst[1] += g[1] * w;
            dst[2] += g[2] * w;
        }
    }
};

// Point p is in voxel coordinates. Non-finite p throws.
double sample_trilinear(const Volume3 &vol, const Vec3 &p);
Vec3 sample_field_trilinear(const VectorField3 &f, const Vec3 &p);

// Central differences in the interior, one-sided on the boundary, unit voxel steps.
MatrixField3 gradient_central(const VectorField3 &f);

// Upsamples a half-resolution field onto `fine` (which must satisfy
// fine.coarse().dims == f.grid().dims) and doubles the values so they stay in
// fine-grid voxel units.
VectorField3 upsample2x(const VectorField3 &f, const Grid &fine);

// Inclusive voxel box.
struct Box {
    Index3 lo{0, 0, 0};
    Index3 hi{0, 0, 0};
    Index3 extent() const noexcept { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
    bool contains(int i, int j, int k) const noexcept {
        return i >= lo[0] && i <= hi[0] && j >= lo[1] && j <= hi[1] && k >= lo[2] && k <= hi[2];
    }
};

// Box around mask > 0.5, dilated by margin and clamped to the grid. Grown to
// at least two voxels per axis where the grid allows.
Box mask_bbox(const Volume3 &mask, int margin);
Box union_box(const Box &a, const Box &b);

struct CropResult {
    Volume3 volume;
    Index3 offset{0, 0, 0};
};

Volume3 crop(const Volume3 &vol, const Box &box);
CropResult crop_to_bbox(const Volume3 &vol, const Volume3 &mask, int margin);

// Places a field defined on a cropped sub-grid back onto the full grid,
// replicating its edge values outside the crop.
VectorField3 extend_field(const VectorField3 &cropped, const Index3 &offset, const Grid &full);

std::size_t count_above(const Volume3 &vol, double threshold = 0.5) noexcept;
Volume3 threshold_mask(const Volume3 &vol, double threshold = 0.5);

} // namespace livreg
