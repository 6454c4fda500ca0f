#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "livreg/grid.hpp"

namespace livreg {

using Rgb = std::array<std::uint8_t, 3>;

// Named colors (red, green, blue, yellow, cyan, magenta, white) or #rrggbb.
Rgb parse_color(std::string_view text);

struct Overlay {
    const Volume3 *mask = nullptr;
    Rgb color{255, 0, 0};
};

// Binary PPM (P6) of one slice. axis 0/1/2 = x/y/z; image columns follow the
// lower remaining axis and rows the higher one, row 0 first. The base slice is
// min-max windowed to gray; each overlay tints its interior at 35% and draws
// its in-plane contour at 90%, in list order.
std::string render_slice(const Volume3 &vol, const std::vector<Overlay> &overlays, int axis, int index);

} // namespace livreg
