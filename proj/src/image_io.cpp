#include "acs/image_io.hpp"

#include "acs/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace acs::image {

namespace {

void on_png_error(png_structp, png_const_charp msg) { throw FormatError(std::string("png: ") + msg, 0); }
void on_png_warning(png_structp, png_const_charp) {}

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_nothing(png_structp) {}

struct Reader {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos = 0;
};

void read_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* r = static_cast<Reader*>(png_get_io_ptr(png));
  if (r->pos + len > r->bytes->size()) throw FormatError("png: truncated stream", r->pos);
  std::memcpy(data, r->bytes->data() + r->pos, len);
  r->pos += len;
}

std::uint8_t to_byte(double v) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void put(splat::Image& img, int x, int y, const std::array<double, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
  img.at(y, x, 3) = 1.0;
}

void draw_line(splat::Image& img, double x0, double y0, double x1, double y1, const std::array<double, 3>& c) {
  const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    put(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const splat::Image& img) {
  if (img.height < 1 || img.width < 1) throw ShapeError("cannot encode an empty image");
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 4);
  try {
    png_set_write_fn(png, &out, append_bytes, flush_nothing);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 4; ++c) row[x * 4 + c] = to_byte(img.at(y, x, c));
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

splat::Image decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG stream", 0);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
  png_infop info = png_create_info_struct(png);
  Reader reader{&bytes, 0};
  splat::Image img;
  try {
    png_set_read_fn(png, &reader, read_bytes);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_gray_to_rgb(png);
    png_set_add_alpha(png, 0xff, PNG_FILLER_AFTER);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    img = splat::Image(h, w);
    std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 4; ++c) img.at(y, x, c) = row[x * 4 + c] / 255.0;
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const splat::Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path.string());
}

splat::Image flatten_on_white(const splat::Image& img) {
  splat::Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double a = std::clamp(img.at(y, x, 3), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c) + (1.0 - a);
      out.at(y, x, 3) = 1.0;
    }
  return out;
}

splat::Image hstack(const std::vector<splat::Image>& images, int gap) {
  if (images.empty()) throw ShapeError("hstack: no images");
  const int h = images.front().height;
  int w = 0;
  for (const auto& im : images) {
    if (im.height != h) throw ShapeError("hstack: heights differ");
    w += im.width;
  }
  w += gap * static_cast<int>(images.size() - 1);
  splat::Image out(h, w);
  std::fill(out.rgba.begin(), out.rgba.end(), 1.0);
  int x0 = 0;
  for (const auto& im : images) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < im.width; ++x)
        for (int c = 0; c < 4; ++c) out.at(y, x0 + x, c) = im.at(y, x, c);
    x0 += im.width + gap;
  }
  return out;
}

splat::Image line_plot(const std::vector<Series>& series, int height, int width) {
  splat::Image img(height, width);
  std::fill(img.rgba.begin(), img.rgba.end(), 1.0);
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("line_plot: x and y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  const int margin = 12;
  const std::array<double, 3> grey{0.6, 0.6, 0.6};
  draw_line(img, margin, margin, width - margin, margin, grey);
  draw_line(img, margin, height - margin, width - margin, height - margin, grey);
  draw_line(img, margin, margin, margin, height - margin, grey);
  draw_line(img, width - margin, margin, width - margin, height - margin, grey);
  if (!(xlo <= xhi)) return img;
  if (xhi == xlo) xhi = xlo + 1.0;
  if (yhi == ylo) {
    ylo -= 0.5;
    yhi += 0.5;
  }
  const auto px = [&](double x) { return margin + (x - xlo) / (xhi - xlo) * (width - 2 * margin); };
  const auto py = [&](double y) { return height - margin - (y - ylo) / (yhi - ylo) * (height - 2 * margin); };
  if (ylo < 0.0 && yhi > 0.0) draw_line(img, margin, py(0.0), width - margin, py(0.0), {0.85, 0.85, 0.85});
  for (const auto& s : series)
    for (std::size_t i = 1; i < s.x.size(); ++i)
      draw_line(img, px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.color);
  return img;
}

}  // namespace acs::image
