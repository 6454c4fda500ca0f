#include "livreg/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace livreg {

namespace {

constexpr double kFillAlpha = 0.35;
constexpr double kContourAlpha = 0.9;

std::uint8_t blend(std::uint8_t base, std::uint8_t over, double alpha) {
    return static_cast<std::uint8_t>(std::lround((1.0 - alpha) * base + alpha * over));
}

int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

} // namespace

Rgb parse_color(std::string_view text) {
    struct Named {
        std::string_view name;
        Rgb rgb;
    };
    static constexpr Named names[] = {{"red", {255, 0, 0}},      {"green", {0, 200, 0}},     {"blue", {40, 90, 255}},
                                      {"yellow", {255, 220, 0}}, {"cyan", {0, 220, 220}},    {"magenta", {230, 0, 230}},
                                      {"white", {255, 255, 255}}};
    for (const Named &n : names)
        if (n.name == text) return n.rgb;
    if (text.size() == 7 && text[0] == '#') {
        Rgb out{};
        for (int c = 0; c < 3; ++c) {
            const int hi = hex_digit(text[1 + 2 * c]), lo = hex_digit(text[2 + 2 * c]);
            if (hi < 0 || lo < 0) break;
            out[c] = static_cast<std::uint8_t>(hi * 16 + lo);
            if (c == 2) return out;
        }
    }
    throw Error(ErrorCode::invalid_argument, "unknown color '" + std::string(text) + "'");
}

std::string render_slice(const Volume3 &vol, const std::vector<Overlay> &overlays, int axis, int index) {
    if (axis < 0 || axis > 2) throw Error(ErrorCode::invalid_argument, "render_slice: axis must be 0, 1 or 2");
    const Grid &g = vol.grid();
    if (index < 0 || index >= g.dims[axis]) {
        throw Error(ErrorCode::invalid_argument, "render_slice: index " + std::to_string(index) + " out of range [0, " +
                                                     std::to_string(g.dims[axis]) + ")");
    }
    for (const Overlay &o : overlays) {
        if (!o.mask) throw Error(ErrorCode::invalid_argument, "render_slice: null overlay");
        require_same_grid(g, o.mask->grid(), "render_slice");
    }
    const int ca = axis == 0 ? 1 : 0;
    const int ra = axis == 2 ? 1 : 2;
    const int w = g.dims[ca], h = g.dims[ra];
    auto voxel = [&](int col, int row) {
        Index3 p{};
        p[axis] = index;
        p[ca] = col;
        p[ra] = row;
        return g.index(p[0], p[1], p[2]);
    };

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double v = vol[voxel(c, r)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    std::vector<Rgb> px(std::size_t(w) * std::size_t(h));
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double t = hi > lo ? (vol[voxel(c, r)] - lo) / (hi - lo) : 0.0;
            const auto gray = static_cast<std::uint8_t>(std::lround(255.0 * t));
            px[std::size_t(r) * std::size_t(w) + std::size_t(c)] = {gray, gray, gray};
        }

    for (const Overlay &o : overlays) {
        const Volume3 &m = *o.mask;
        auto inside = [&](int c, int r) { return c >= 0 && r >= 0 && c < w && r < h && m[voxel(c, r)] > 0.5; };
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                if (!inside(c, r)) continue;
                const bool interior_edge = (c > 0 && !inside(c - 1, r)) || (c + 1 < w && !inside(c + 1, r)) ||
                                           (r > 0 && !inside(c, r - 1)) || (r + 1 < h && !inside(c, r + 1));
                const double alpha = interior_edge ? kContourAlpha : kFillAlpha;
                Rgb &p = px[std::size_t(r) * std::size_t(w) + std::size_t(c)];
                for (int k = 0; k < 3; ++k) p[k] = blend(p[k], o.color[k], alpha);
            }
    }

    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + px.size() * 3);
    for (const Rgb &p : px) out.append(reinterpret_cast<const char *>(p.data()), 3);
    return out;
}

} // namespace livreg
