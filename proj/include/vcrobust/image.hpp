#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vcrobust/errors.hpp"

namespace vcrobust {

/// Dense H x W x 3 image of intensities in [0, 1], row-major, channel
/// innermost. Immutable once constructed.
class Image {
 public:
  static constexpr int kChannels = 3;

  /// Validates dimensions, length and range; throws ShapeError/DomainError.
  Image(int height, int width, std::vector<double> data)
      : height_(height), width_(width), data_(std::move(data)) {
    check_dims(height_, width_);
    if (data_.size() != expected_size(height_, width_)) {
      throw ShapeError("image data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(height_) + "x" +
                       std::to_string(width_) + "x3");
    }
    for (double v : data_) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw DomainError("image intensity outside [0,1]");
      }
    }
  }

  /// Builds an image from arbitrary reals, clipping to [0, 1]. NaN maps to 0.
  static Image clipped(int height, int width, std::vector<double> data) {
    for (double& v : data) v = (v > 0.0) ? std::min(v, 1.0) : 0.0;
    return Image(height, width, std::move(data));
  }

  static Image filled(int height, int width, double value) {
    check_dims(height, width);
    return Image(height, width,
                 std::vector<double>(expected_size(height, width), value));
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }

  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) * kChannels + static_cast<std::size_t>(c);
  }

  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

  static std::size_t expected_size(int height, int width) {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           kChannels;
  }

 private:
  static void check_dims(int height, int width) {
    if (height < 1 || width < 1) {
      throw ShapeError("image dimensions must be >= 1, got " +
                       std::to_string(height) + "x" + std::to_string(width));
    }
  }

  int height_;
  int width_;
  std::vector<double> data_;
};

/// Axis-aligned box in pixel coordinates, (x1, y1) top-left.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  bool valid() const noexcept { return x1 <= x2 && y1 <= y2; }
  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }

  /// Clamps to [0, width] x [0, height]. Never inverts a valid box.
  BBox clamped(int image_height, int image_width) const noexcept {
    const double w = image_width;
    const double h = image_height;
    return {std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h),
            std::clamp(x2, 0.0, w), std::clamp(y2, 0.0, h)};
  }

  static BBox full(const Image& img) {
    return {0.0, 0.0, static_cast<double>(img.width()),
            static_cast<double>(img.height())};
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

namespace detail {

inline int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

}  // namespace detail

/// Reflect-101 boundary index (mirror without repeating the edge sample),
/// valid for any offset.
inline int reflect_index(long long i, int n) noexcept {
  if (n == 1) return 0;
  const long long period = 2LL * (n - 1);
  long long r = i % period;
  if (r < 0) r += period;
  if (r >= n) r = period - r;
  return static_cast<int>(r);
}

/// Extracts the pixels of `box` after clamping to the image and rounding the
/// coordinates half-up. The result is at least 1x1.
inline Image crop(const Image& img, const BBox& box) {
  if (!box.valid()) throw ValidationError("crop box has x1 > x2 or y1 > y2");
  const int W = img.width();
  const int H = img.height();
  if (!(box.x1 < W && box.y1 < H && box.x2 > 0.0 && box.y2 > 0.0)) {
    throw EmptyRegionError("crop box lies entirely outside the image");
  }
  const BBox c = box.clamped(H, W);
  int x1 = std::min(detail::round_half_up(c.x1), W - 1);
  int y1 = std::min(detail::round_half_up(c.y1), H - 1);
  int x2 = std::max(detail::round_half_up(c.x2), x1 + 1);
  int y2 = std::max(detail::round_half_up(c.y2), y1 + 1);
  const int out_w = x2 - x1;
  const int out_h = y2 - y1;
  std::vector<double> out;
  out.reserve(Image::expected_size(out_h, out_w));
  for (int y = y1; y < y2; ++y) {
    const auto row = img.data().subspan(img.index(y, x1, 0),
                                        static_cast<std::size_t>(out_w) * 3);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Image(out_h, out_w, std::move(out));
}

enum class ResizeMode { kBilinear, kNearest };

/// Resamples with pixel-center alignment: source coordinate of output pixel
/// i is (i + 0.5) * in / out - 0.5.
inline Image resize(const Image& img, int new_h, int new_w, ResizeMode mode) {
  if (new_h < 1 || new_w < 1) throw ShapeError("resize target must be >= 1x1");
  const int H = img.height();
  const int W = img.width();
  if (new_h == H && new_w == W) return img;
  const double sy = static_cast<double>(H) / new_h;
  const double sx = static_cast<double>(W) / new_w;
  std::vector<double> out(Image::expected_size(new_h, new_w));
  std::size_t o = 0;
  if (mode == ResizeMode::kNearest) {
    for (int y = 0; y < new_h; ++y) {
      const int src_y = std::min(static_cast<int>(std::floor((y + 0.5) * sy)), H - 1);
      for (int x = 0; x < new_w; ++x) {
        const int src_x = std::min(static_cast<int>(std::floor((x + 0.5) * sx)), W - 1);
        for (int c = 0; c < 3; ++c) out[o++] = img.at(src_y, src_x, c);
      }
    }
  } else {
    for (int y = 0; y < new_h; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, H - 1.0);
      const int y0 = static_cast<int>(std::floor(fy));
      const int y1 = std::min(y0 + 1, H - 1);
      const double wy = fy - y0;
      for (int x = 0; x < new_w; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, W - 1.0);
        const int x0 = static_cast<int>(std::floor(fx));
        const int x1 = std::min(x0 + 1, W - 1);
        const double wx = fx - x0;
        for (int c = 0; c < 3; ++c) {
          const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
          const double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
          out[o++] = top * (1.0 - wy) + bot * wy;
        }
      }
    }
  }
  return Image::clipped(new_h, new_w, std::move(out));
}

/// Rounds every intensity to the nearest 1/255 step (half-up), the exact
/// set of values a PNG round trip can represent.
inline Image quantize(const Image& img) {
  std::vector<double> out(img.values());
  for (double& v : out) v = std::floor(v * 255.0 + 0.5) / 255.0;
  return Image(img.height(), img.width(), std::move(out));
}

}  // namespace vcrobust
