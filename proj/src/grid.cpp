#include "livreg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace livreg {

const char *to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::grid_mismatch: return "grid_mismatch";
    case ErrorCode::empty_mask: return "empty_mask";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_datatype: return "unsupported_datatype";
    case ErrorCode::unsupported_format: return "unsupported_format";
    case ErrorCode::invalid_data: return "invalid_data";
    case ErrorCode::size_mismatch: return "size_mismatch";
    case ErrorCode::numerical_abort: return "numerical_abort";
    }
    return "unknown";
}

Index3 Grid::coords(std::size_t idx) const noexcept {
    const std::size_t nx = std::size_t(dims[0]), ny = std::size_t(dims[1]);
    return {int(idx % nx), int((idx / nx) % ny), int(idx / (nx * ny))};
}

void Grid::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 2) {
            throw Error(ErrorCode::invalid_argument, "grid dimension " + std::to_string(a) + " must be >= 2, got " +
                                                         std::to_string(dims[a]));
        }
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw Error(ErrorCode::invalid_argument, "grid spacing must be positive and finite");
        }
        if (!std::isfinite(origin[a])) throw Error(ErrorCode::invalid_argument, "grid origin must be finite");
    }
}

Grid Grid::coarse() const {
    Grid g;
    for (int a = 0; a < 3; ++a) {
        g.dims[a] = std::max(2, (dims[a] + 1) / 2);
        g.spacing[a] = spacing[a] * 2.0;
        g.origin[a] = origin[a];
    }
    return g;
}

Grid make_grid(Index3 dims, Vec3 spacing, Vec3 origin) {
    Grid g{dims, spacing, origin};
    g.validate();
    return g;
}

void require_same_grid(const Grid &a, const Grid &b, const char *context) {
    if (a.dims != b.dims || a.spacing != b.spacing || a.origin != b.origin) {
        throw Error(ErrorCode::grid_mismatch, std::string(context) + ": grids differ");
    }
}

Volume3::Volume3(const Grid &grid, VolumeKind kind, double fill) : grid_(grid), kind_(kind) {
    grid_.validate();
    if (kind == VolumeKind::mask && !(fill >= 0.0 && fill <= 1.0)) {
        throw Error(ErrorCode::invalid_argument, "mask fill value must lie in [0, 1]");
    }
    data_.assign(grid_.voxel_count(), fill);
}

Volume3::Volume3(const Grid &grid, std::vector<double> data, VolumeKind kind)
    : grid_(grid), data_(std::move(data)), kind_(kind) {
    grid_.validate();
    if (data_.size() != grid_.voxel_count()) {
        throw Error(ErrorCode::size_mismatch, "volume data length does not match grid");
    }
    for (double v : data_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "volume contains non-finite values");
        if (kind_ == VolumeKind::mask && (v < 0.0 || v > 1.0)) {
            throw Error(ErrorCode::invalid_argument, "mask values must lie in [0, 1]");
        }
    }
}

VectorField3::VectorField3(const Grid &grid, FieldKind kind) : grid_(grid), kind_(kind) {
    grid_.validate();
    data_.assign(3 * grid_.voxel_count(), 0.0);
}

VectorField3::VectorField3(const Grid &grid, std::vector<double> data, FieldKind kind)
    : grid_(grid), data_(std::move(data)), kind_(kind) {
    grid_.validate();
    if (data_.size() != 3 * grid_.voxel_count()) {
        throw Error(ErrorCode::size_mismatch, "vector field data length does not match grid");
    }
    for (double v : data_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "vector field contains non-finite values");
    }
}

VectorField3 &VectorField3::operator+=(const VectorField3 &other) {
    if (grid_.dims != other.grid_.dims) throw Error(ErrorCode::grid_mismatch, "field addition: grids differ");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

VectorField3 &VectorField3::operator*=(double s) noexcept {
    for (double &v : data_) v *= s;
    return *this;
}

double VectorField3::max_norm() const noexcept {
    double best = 0.0;
    for (std::size_t i = 0; i < data_.size(); i += 3) {
        best = std::max(best, data_[i] * data_[i] + data_[i + 1] * data_[i + 1] + data_[i + 2] * data_[i + 2]);
    }
    return std::sqrt(best);
}

namespace {

void require_finite(const Vec3 &p) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
        throw Error(ErrorCode::invalid_argument, "sample point must be finite");
    }
}

// Neighbour pair and scale for the derivative stencil at position i on an
// axis of length n.
struct DiffTap {
    int lo, hi;
    double scale;
};

inline DiffTap diff_tap(int i, int n) noexcept {
    if (i == 0) return {0, 1, 1.0};
    if (i == n - 1) return {n - 2, n - 1, 1.0};
    return {i - 1, i + 1, 0.5};
}

} // namespace

double sample_trilinear(const Volume3 &vol, const Vec3 &p) {
    require_finite(p);
    return TrilinearCell(vol.grid().dims, p).value(vol.data().data());
}

Vec3 sample_field_trilinear(const VectorField3 &f, const Vec3 &p) {
    require_finite(p);
    const TrilinearCell cell(f.grid().dims, p);
    const double *d = f.data().data();
    return {cell.value(d, 3, 0), cell.value(d, 3, 1), cell.value(d, 3, 2)};
}

MatrixField3 gradient_central(const VectorField3 &f) {
    const Grid &g = f.grid();
    g.validate();
    MatrixField3 out{g, std::vector<Mat3>(g.voxel_count())};
    const double *d = f.data().data();
    const std::size_t sy = std::size_t(g.dims[0]), sz = sy * std::size_t(g.dims[1]);
    for (int k = 0; k < g.dims[2]; ++k) {
        const DiffTap tz = diff_tap(k, g.dims[2]);
        for (int j = 0; j < g.dims[1]; ++j) {
            const DiffTap ty = diff_tap(j, g.dims[1]);
            for (int i = 0; i < g.dims[0]; ++i) {
                const DiffTap tx = diff_tap(i, g.dims[0]);
                const std::size_t idx = g.index(i, j, k);
                const std::size_t row = idx - std::size_t(i);
                const std::size_t col = idx - sy * std::size_t(j);
                const std::size_t pil = idx - sz * std::size_t(k);
                Mat3 &m = out.data[idx];
                for (int c = 0; c < 3; ++c) {
                    m[c * 3 + 0] = tx.scale * (d[3 * (row + tx.hi) + c] - d[3 * (row + tx.lo) + c]);
                    m[c * 3 + 1] = ty.scale * (d[3 * (col + sy * ty.hi) + c] - d[3 * (col + sy * ty.lo) + c]);
                    m[c * 3 + 2] = tz.scale * (d[3 * (pil + sz * tz.hi) + c] - d[3 * (pil + sz * tz.lo) + c]);
                }
            }
        }
    }
    return out;
}

VectorField3 upsample2x(const VectorField3 &f, const Grid &fine) {
    fine.validate();
    if (fine.coarse().dims != f.grid().dims) {
        throw Error(ErrorCode::grid_mismatch, "upsample2x: fine grid is not twice the coarse grid");
    }
    VectorField3 out(fine, f.kind());
    const double *src = f.data().data();
    double *dst = out.data().data();
    const Index3 cd = f.grid().dims;
    for (int k = 0; k < fine.dims[2]; ++k) {
        for (int j = 0; j < fine.dims[1]; ++j) {
            for (int i = 0; i < fine.dims[0]; ++i) {
                const TrilinearCell cell(cd, {0.5 * i, 0.5 * j, 0.5 * k});
                const std::size_t idx = fine.index(i, j, k);
                for (int c = 0; c < 3; ++c) dst[3 * idx + c] = 2.0 * cell.value(src, 3, c);
            }
        }
    }
    return out;
}

Box mask_bbox(const Volume3 &mask, int margin) {
    const Grid &g = mask.grid();
    Box box{{g.dims[0], g.dims[1], g.dims[2]}, {-1, -1, -1}};
    bool any = false;
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                if (mask.at(i, j, k) > 0.5) {
                    any = true;
                    box.lo = {std::min(box.lo[0], i), std::min(box.lo[1], j), std::min(box.lo[2], k)};
                    box.hi = {std::max(box.hi[0], i), std::max(box.hi[1], j), std::max(box.hi[2], k)};
                }
            }
        }
    }
    if (!any) throw Error(ErrorCode::empty_mask, "bounding box of an empty mask");
    margin = std::max(margin, 0);
    for (int a = 0; a < 3; ++a) {
        box.lo[a] = std::max(0, box.lo[a] - margin);
        box.hi[a] = std::min(g.dims[a] - 1, box.hi[a] + margin);
        if (box.hi[a] == box.lo[a]) {
            if (box.hi[a] + 1 < g.dims[a]) ++box.hi[a];
            else --box.lo[a];
        }
    }
    return box;
}

Box union_box(const Box &a, const Box &b) {
    Box out;
    for (int i = 0; i < 3; ++i) {
        out.lo[i] = std::min(a.lo[i], b.lo[i]);
        out.hi[i] = std::max(a.hi[i], b.hi[i]);
    }
    return out;
}

Volume3 crop(const Volume3 &vol, const Box &box) {
    const Grid &g = vol.grid();
    Grid cg = g;
    cg.dims = box.extent();
    for (int a = 0; a < 3; ++a) {
        if (box.lo[a] < 0 || box.hi[a] >= g.dims[a] || box.hi[a] < box.lo[a]) {
            throw Error(ErrorCode::invalid_argument, "crop box outside the grid");
        }
        cg.origin[a] = g.origin[a] + box.lo[a] * g.spacing[a];
    }
    Volume3 out(cg, vol.kind());
    for (int k = 0; k < cg.dims[2]; ++k) {
        for (int j = 0; j < cg.dims[1]; ++j) {
            for (int i = 0; i < cg.dims[0]; ++i) {
                out.at(i, j, k) = vol.at(i + box.lo[0], j + box.lo[1], k + box.lo[2]);
            }
        }
    }
    return out;
}

CropResult crop_to_bbox(const Volume3 &vol, const Volume3 &mask, int margin) {
    require_same_grid(vol.grid(), mask.grid(), "crop_to_bbox");
    const Box box = mask_bbox(mask, margin);
    return {crop(vol, box), box.lo};
}

VectorField3 extend_field(const VectorField3 &cropped, const Index3 &offset, const Grid &full) {
    VectorField3 out(full, cropped.kind());
    const Index3 cd = cropped.grid().dims;
    const double *src = cropped.data().data();
    double *dst = out.data().data();
    for (int k = 0; k < full.dims[2]; ++k) {
        const int ck = std::clamp(k - offset[2], 0, cd[2] - 1);
        for (int j = 0; j < full.dims[1]; ++j) {
            const int cj = std::clamp(j - offset[1], 0, cd[1] - 1);
            for (int i = 0; i < full.dims[0]; ++i) {
                const int ci = std::clamp(i - offset[0], 0, cd[0] - 1);
                const std::size_t s = cropped.grid().index(ci, cj, ck);
                const std::size_t d = full.index(i, j, k);
                dst[3 * d] = src[3 * s];
                dst[3 * d + 1] = src[3 * s + 1];
                dst[3 * d + 2] = src[3 * s + 2];
            }
        }
    }
    return out;
}

std::size_t count_above(const Volume3 &vol, double threshold) noexcept {
    std::size_t n = 0;
    for (double v : vol.data()) n += v > threshold ? 1 : 0;
    return n;
}

Volume3 threshold_mask(const Volume3 &vol, double threshold) {
    Volume3 out(vol.grid(), VolumeKind::mask);
    for (std::size_t i = 0; i < vol.size(); ++i) out[i] = vol[i] > threshold ? 1.0 : 0.0;
    return out;
}

} // namespace livreg
