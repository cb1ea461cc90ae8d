#pragma once

#include "acs/splat.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace acs::image {

/// 8-bit RGBA PNG. Channels are clamped to [0, 1] then rounded.
std::vector<std::uint8_t> encode_png(const splat::Image& img);
splat::Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const splat::Image& img, const std::filesystem::path& path);

/// Opaque copy over a white background.
splat::Image flatten_on_white(const splat::Image& img);

/// Images side by side, separated by `gap` white columns. All must share a height.
splat::Image hstack(const std::vector<splat::Image>& images, int gap = 2);

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::array<double, 3> color{0.1, 0.3, 0.8};
};

/// Minimal line chart: axes box, zero line when in range, one polyline per series.
splat::Image line_plot(const std::vector<Series>& series, int height = 240, int width = 480);

}  // namespace acs::image
