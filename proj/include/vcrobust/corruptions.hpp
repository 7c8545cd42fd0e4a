#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vcrobust/errors.hpp"
#include "vcrobust/image.hpp"
#include "vcrobust/rng.hpp"

namespace vcrobust {

enum class CorruptionKind {
  kGaussianNoise,
  kShotNoise,
  kImpulseNoise,
  kDefocusBlur,
  kZoomBlur,
  kPixelate,
  kElasticTransform,
  kContrast,
};

inline constexpr std::array<CorruptionKind, 8> kAllCorruptions = {
    CorruptionKind::kGaussianNoise, CorruptionKind::kShotNoise,
    CorruptionKind::kImpulseNoise,  CorruptionKind::kDefocusBlur,
    CorruptionKind::kZoomBlur,      CorruptionKind::kPixelate,
    CorruptionKind::kElasticTransform, CorruptionKind::kContrast,
};

constexpr std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kGaussianNoise: return "gaussian_noise";
    case CorruptionKind::kShotNoise: return "shot_noise";
    case CorruptionKind::kImpulseNoise: return "impulse_noise";
    case CorruptionKind::kDefocusBlur: return "defocus_blur";
    case CorruptionKind::kZoomBlur: return "zoom_blur";
    case CorruptionKind::kPixelate: return "pixelate";
    case CorruptionKind::kElasticTransform: return "elastic_transform";
    case CorruptionKind::kContrast: return "contrast";
  }
  return "unknown";
}

/// Accepts canonical names ("gaussian_noise") and the short forms used on
/// the command line ("gaussian", "defocus", "elastic", ...).
inline std::optional<CorruptionKind> parse_corruption(std::string_view name) {
  for (CorruptionKind k : kAllCorruptions) {
    const std::string_view full = to_string(k);
    if (name == full) return k;
    if (name == full.substr(0, full.find('_'))) return k;
  }
  return std::nullopt;
}

/// Parameters of one (kind, severity) cell of the preset table.
struct CorruptionPreset {
  CorruptionKind kind;
  int level;
  std::vector<std::pair<std::string, double>> params;

  double param(std::string_view name) const {
    for (const auto& [k, v] : params) {
      if (k == name) return v;
    }
    throw SpecError("preset has no parameter " + std::string(name));
  }

  std::string describe() const {
    std::string out = std::string(to_string(kind)) + " severity " + std::to_string(level) + ":";
    for (const auto& [k, v] : params) {
      char buf[64];
      std::snprintf(buf, sizeof buf, " %s=%g", k.c_str(), v);
      out += buf;
    }
    return out;
  }
};

inline CorruptionPreset corruption_preset(CorruptionKind kind, int level) {
  if (level < 1 || level > 5) {
    throw SpecError("severity must be in 1..5, got " + std::to_string(level));
  }
  const auto i = static_cast<std::size_t>(level - 1);
  switch (kind) {
    case CorruptionKind::kGaussianNoise: {
      constexpr std::array<double, 5> sigma = {0.08, 0.12, 0.18, 0.26, 0.38};
      return {kind, level, {{"sigma", sigma[i]}}};
    }
    case CorruptionKind::kShotNoise: {
      constexpr std::array<double, 5> c = {60, 25, 12, 5, 3};
      return {kind, level, {{"c", c[i]}}};
    }
    case CorruptionKind::kImpulseNoise: {
      constexpr std::array<double, 5> p = {0.03, 0.06, 0.09, 0.17, 0.27};
      return {kind, level, {{"p", p[i]}}};
    }
    case CorruptionKind::kDefocusBlur: {
      constexpr std::array<std::pair<double, double>, 5> ra = {
          {{3, 0.1}, {4, 0.5}, {6, 0.5}, {8, 0.5}, {10, 0.5}}};
      return {kind, level, {{"radius", ra[i].first}, {"alias_blur", ra[i].second}}};
    }
    case CorruptionKind::kZoomBlur: {
      constexpr std::array<std::pair<double, double>, 5> stop_step = {
          {{1.10, 0.01}, {1.15, 0.01}, {1.21, 0.02}, {1.26, 0.02}, {1.33, 0.03}}};
      return {kind, level,
              {{"zoom_start", 1.0}, {"zoom_stop", stop_step[i].first},
               {"zoom_step", stop_step[i].second}}};
    }
    case CorruptionKind::kPixelate: {
      constexpr std::array<double, 5> ratio = {0.6, 0.5, 0.4, 0.3, 0.25};
      return {kind, level, {{"ratio", ratio[i]}}};
    }
    case CorruptionKind::kElasticTransform: {
      // Rows 1-2 are not monotone with rows 3-5; kept as tabulated.
      constexpr std::array<std::array<double, 3>, 5> t = {{{2, 0.7, 0.1},
                                                           {2, 0.08, 0.2},
                                                           {0.05, 0.01, 0.02},
                                                           {0.07, 0.01, 0.02},
                                                           {0.12, 0.01, 0.02}}};
      return {kind, level,
              {{"alpha", 224 * t[i][0]}, {"sigma", 224 * t[i][1]},
               {"alpha_affine", 224 * t[i][2]}}};
    }
    case CorruptionKind::kContrast: {
      constexpr std::array<double, 5> c = {0.4, 0.3, 0.2, 0.1, 0.05};
      return {kind, level, {{"c", c[i]}}};
    }
  }
  throw SpecError("unknown corruption kind");
}

// ---------------------------------------------------------------------------
// Filtering helpers

/// Normalized 1-D Gaussian, truncated at 4 sigma. sigma == 0 gives {1}.
inline std::vector<double> gaussian_kernel1d(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian smoothing of one H x W plane with reflect-101 borders.
inline std::vector<double> gaussian_smooth(const std::vector<double>& plane, int h, int w,
                                           double sigma) {
  const auto k = gaussian_kernel1d(sigma);
  const int r = static_cast<int>(k.size() / 2);
  if (r == 0) return plane;
  std::vector<double> tmp(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int j = -r; j <= r; ++j) {
        acc += k[static_cast<std::size_t>(j + r)] *
               plane[static_cast<std::size_t>(y) * w + reflect_index(x + j, w)];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  std::vector<double> out(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int j = -r; j <= r; ++j) {
        acc += k[static_cast<std::size_t>(j + r)] *
               tmp[static_cast<std::size_t>(reflect_index(y + j, h)) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

/// Square (2*half+1)^2 kernel, row-major.
struct Kernel2D {
  int half = 0;
  std::vector<double> weights;

  int size() const noexcept { return 2 * half + 1; }
  double at(int dy, int dx) const {
    return weights[static_cast<std::size_t>((dy + half) * size() + (dx + half))];
  }
};

/// Disk of the given radius (cells whose center lies within the radius),
/// optionally smoothed by a Gaussian of std `alias_blur`; entries sum to 1.
inline Kernel2D defocus_kernel(double radius, double alias_blur) {
  Kernel2D k;
  k.half = static_cast<int>(std::ceil(radius)) +
           (alias_blur > 0.0 ? static_cast<int>(std::ceil(4.0 * alias_blur)) : 0);
  const int n = k.size();
  k.weights.assign(static_cast<std::size_t>(n) * n, 0.0);
  double sum = 0.0;
  for (int dy = -k.half; dy <= k.half; ++dy) {
    for (int dx = -k.half; dx <= k.half; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) {
        k.weights[static_cast<std::size_t>((dy + k.half) * n + dx + k.half)] = 1.0;
        sum += 1.0;
      }
    }
  }
  for (double& v : k.weights) v /= sum;
  if (alias_blur > 0.0) {
    // Zero-padded separable smoothing; the grid is wide enough that no mass
    // falls off before renormalization.
    const auto g = gaussian_kernel1d(alias_blur);
    const int r = static_cast<int>(g.size() / 2);
    auto pass = [&](const std::vector<double>& in, bool horizontal) {
      std::vector<double> out(in.size(), 0.0);
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          double acc = 0.0;
          for (int j = -r; j <= r; ++j) {
            const int yy = horizontal ? y : y + j;
            const int xx = horizontal ? x + j : x;
            if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
            acc += g[static_cast<std::size_t>(j + r)] * in[static_cast<std::size_t>(yy * n + xx)];
          }
          out[static_cast<std::size_t>(y * n + x)] = acc;
        }
      }
      return out;
    };
    k.weights = pass(pass(k.weights, true), false);
    double s = 0.0;
    for (double v : k.weights) s += v;
    for (double& v : k.weights) v /= s;
  }
  return k;
}

/// Per-channel 2-D correlation with reflect-101 borders.
inline Image convolve(const Image& img, const Kernel2D& k) {
  const int H = img.height();
  const int W = img.width();
  std::vector<double> out(img.size(), 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int dy = -k.half; dy <= k.half; ++dy) {
        const int yy = reflect_index(y + dy, H);
        for (int dx = -k.half; dx <= k.half; ++dx) {
          const double w = k.at(dy, dx);
          if (w == 0.0) continue;
          const std::size_t base = img.index(yy, reflect_index(x + dx, W), 0);
          for (int c = 0; c < 3; ++c) acc[c] += w * img.data()[base + c];
        }
      }
      for (int c = 0; c < 3; ++c) out[img.index(y, x, c)] = acc[c];
    }
  }
  return Image::clipped(H, W, std::move(out));
}

namespace detail {

/// Bilinear sample of channel c at fractional (fy, fx) with reflect-101 borders.
inline double sample_reflect(const Image& img, double fy, double fx, int c) {
  const double y0f = std::floor(fy);
  const double x0f = std::floor(fx);
  const double wy = fy - y0f;
  const double wx = fx - x0f;
  const auto y0 = static_cast<long long>(y0f);
  const auto x0 = static_cast<long long>(x0f);
  const int ya = reflect_index(y0, img.height());
  const int yb = reflect_index(y0 + 1, img.height());
  const int xa = reflect_index(x0, img.width());
  const int xb = reflect_index(x0 + 1, img.width());
  const double top = img.at(ya, xa, c) * (1.0 - wx) + img.at(ya, xb, c) * wx;
  const double bot = img.at(yb, xa, c) * (1.0 - wx) + img.at(yb, xb, c) * wx;
  return top * (1.0 - wy) + bot * wy;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operators

/// The additive field gaussian_noise draws for an image of `n_values`
/// intensities: n_values independent N(0, sigma^2) samples.
inline std::vector<double> gaussian_noise_field(std::size_t n_values, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw DomainError("gaussian_noise: sigma must be >= 0");
  std::vector<double> field(n_values);
  for (double& v : field) v = sigma * rng.normal();
  return field;
}

/// clip(img + gaussian_noise_field(img.size(), sigma, rng)).
inline Image gaussian_noise(const Image& img, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw DomainError("gaussian_noise: sigma must be >= 0");
  if (sigma == 0.0) return img;
  const auto field = gaussian_noise_field(img.size(), sigma, rng);
  std::vector<double> out(img.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += field[i];
  return Image::clipped(img.height(), img.width(), std::move(out));
}

inline Image shot_noise(const Image& img, double c, Rng& rng) {
  if (!(c > 0.0)) throw DomainError("shot_noise: c must be > 0");
  std::vector<double> out(img.values());
  for (double& v : out) v = static_cast<double>(rng.poisson(v * c)) / c;
  return Image::clipped(img.height(), img.width(), std::move(out));
}

/// Each pixel is replaced with probability p by black or white (equal odds),
/// all three channels together.
inline Image impulse_noise(const Image& img, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("impulse_noise: p must be in [0,1]");
  std::vector<double> out(img.values());
  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    if (rng.uniform() < p) {
      const double v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      out[px * 3] = out[px * 3 + 1] = out[px * 3 + 2] = v;
    }
  }
  return Image(img.height(), img.width(), std::move(out));
}

inline Image defocus_blur(const Image& img, double radius, double alias_blur) {
  if (!(radius > 0.0)) throw DomainError("defocus_blur: radius must be > 0");
  if (!(alias_blur >= 0.0)) throw DomainError("defocus_blur: alias_blur must be >= 0");
  return convolve(img, defocus_kernel(radius, alias_blur));
}

/// Scales by `factor` about the image center (bilinear, edge-clamped) and
/// keeps the original frame.
inline Image center_zoom(const Image& img, double factor) {
  if (factor == 1.0) return img;
  const int H = img.height();
  const int W = img.width();
  std::vector<double> out(img.size());
  std::size_t o = 0;
  for (int y = 0; y < H; ++y) {
    const double fy = std::clamp((y + 0.5 - H / 2.0) / factor + H / 2.0 - 0.5, 0.0, H - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - y0;
    for (int x = 0; x < W; ++x) {
      const double fx = std::clamp((x + 0.5 - W / 2.0) / factor + W / 2.0 - 0.5, 0.0, W - 1.0);
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
  return Image::clipped(H, W, std::move(out));
}

/// Zoom factors start, start+step, ..., stop (inclusive).
inline std::vector<double> zoom_factors(double start, double stop, double step) {
  const auto n = static_cast<int>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> f(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) f[static_cast<std::size_t>(i)] = start + i * step;
  return f;
}

inline Image zoom_blur(const Image& img, double zoom_start, double zoom_stop, double zoom_step) {
  if (zoom_start != 1.0 || zoom_stop < zoom_start || !(zoom_step > 0.0)) {
    throw DomainError("zoom_blur: need 1.0 = start <= stop and step > 0");
  }
  const auto factors = zoom_factors(zoom_start, zoom_stop, zoom_step);
  std::vector<double> acc(img.size(), 0.0);
  for (double z : factors) {
    const Image frame = center_zoom(img, z);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += frame.data()[i];
  }
  for (double& v : acc) v /= static_cast<double>(factors.size());
  return Image::clipped(img.height(), img.width(), std::move(acc));
}

inline Image pixelate(const Image& img, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw DomainError("pixelate: ratio must be in (0,1]");
  // The small slack keeps e.g. 5 * 0.6 from rounding up to 4.
  const int small_h = std::max(1, static_cast<int>(std::ceil(img.height() * ratio - 1e-9)));
  const int small_w = std::max(1, static_cast<int>(std::ceil(img.width() * ratio - 1e-9)));
  const Image small = resize(img, small_h, small_w, ResizeMode::kBilinear);
  return resize(small, img.height(), img.width(), ResizeMode::kNearest);
}

/// Affine jitter of three control points followed by a smoothed random
/// displacement field; bilinear resampling with reflect-101 borders.
inline Image elastic_transform(const Image& img, double alpha, double sigma,
                               double alpha_affine, Rng& rng) {
  if (!(sigma > 0.0)) throw DomainError("elastic_transform: sigma must be > 0");
  const int H = img.height();
  const int W = img.width();

  // Control points are (x, y); the jitter is drawn even when unused so the
  // stream position does not depend on the image size.
  const double cx = W / 2;
  const double cy = H / 2;
  const double s = std::min(H, W) / 3;
  const std::array<std::array<double, 2>, 3> src = {
      {{cx + s, cy + s}, {cx + s, cy - s}, {cx - s, cy - s}}};
  std::array<std::array<double, 2>, 3> dst{};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      dst[i][j] = src[i][j] + rng.uniform(-alpha_affine, alpha_affine);
    }
  }

  Image warped = img;
  if (alpha_affine != 0.0 && s > 0.0) {
    // Solve [x' y'] = A [x y] + t from the three correspondences.
    const double x1 = src[0][0], y1 = src[0][1];
    const double x2 = src[1][0], y2 = src[1][1];
    const double x3 = src[2][0], y3 = src[2][1];
    const double det = x1 * (y2 - y3) - y1 * (x2 - x3) + (x2 * y3 - x3 * y2);
    auto solve = [&](double r1, double r2, double r3) {
      // Cramer's rule for [x y 1] * (a, b, c)^T = r.
      const double a = (r1 * (y2 - y3) - y1 * (r2 - r3) + (r2 * y3 - r3 * y2)) / det;
      const double b = (x1 * (r2 - r3) - r1 * (x2 - x3) + (x2 * r3 - x3 * r2)) / det;
      const double c = (x1 * (y2 * r3 - y3 * r2) - y1 * (x2 * r3 - x3 * r2) +
                        r1 * (x2 * y3 - x3 * y2)) / det;
      return std::array<double, 3>{a, b, c};
    };
    const auto row_x = solve(dst[0][0], dst[1][0], dst[2][0]);
    const auto row_y = solve(dst[0][1], dst[1][1], dst[2][1]);
    // Inverse map: destination pixel -> source location.
    const double a = row_x[0], b = row_x[1], tx = row_x[2];
    const double c = row_y[0], d = row_y[1], ty = row_y[2];
    const double inv_det = 1.0 / (a * d - b * c);
    std::vector<double> out(img.size());
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double u = x - tx;
        const double v = y - ty;
        const double sx = (d * u - b * v) * inv_det;
        const double sy = (-c * u + a * v) * inv_det;
        for (int ch = 0; ch < 3; ++ch) {
          out[img.index(y, x, ch)] = detail::sample_reflect(img, sy, sx, ch);
        }
      }
    }
    warped = Image::clipped(H, W, std::move(out));
  }

  const auto n = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);
  std::vector<double> dx(n);
  std::vector<double> dy(n);
  for (double& v : dx) v = rng.uniform(-1.0, 1.0);
  for (double& v : dy) v = rng.uniform(-1.0, 1.0);
  if (alpha == 0.0) return warped;
  dx = gaussian_smooth(dx, H, W, sigma);
  dy = gaussian_smooth(dy, H, W, sigma);

  std::vector<double> out(img.size());
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      const double fy = y + alpha * dy[p];
      const double fx = x + alpha * dx[p];
      for (int ch = 0; ch < 3; ++ch) {
        out[img.index(y, x, ch)] = detail::sample_reflect(warped, fy, fx, ch);
      }
    }
  }
  return Image::clipped(H, W, std::move(out));
}

inline std::array<double, 3> channel_means(const Image& img) {
  std::array<double, 3> mean{};
  for (std::size_t i = 0; i < img.size(); ++i) mean[i % 3] += img.data()[i];
  for (double& m : mean) m /= static_cast<double>(img.pixel_count());
  return mean;
}

inline Image contrast(const Image& img, double c) {
  if (!(c > 0.0 && c <= 1.0)) throw DomainError("contrast: c must be in (0,1]");
  if (c == 1.0) return img;
  const auto mean = channel_means(img);
  std::vector<double> out(img.values());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (out[i] - mean[i % 3]) * c + mean[i % 3];
  }
  return Image::clipped(img.height(), img.width(), std::move(out));
}

inline Image apply_corruption(const Image& img, const CorruptionPreset& preset, Rng& rng) {
  switch (preset.kind) {
    case CorruptionKind::kGaussianNoise:
      return gaussian_noise(img, preset.param("sigma"), rng);
    case CorruptionKind::kShotNoise:
      return shot_noise(img, preset.param("c"), rng);
    case CorruptionKind::kImpulseNoise:
      return impulse_noise(img, preset.param("p"), rng);
    case CorruptionKind::kDefocusBlur:
      return defocus_blur(img, preset.param("radius"), preset.param("alias_blur"));
    case CorruptionKind::kZoomBlur:
      return zoom_blur(img, preset.param("zoom_start"), preset.param("zoom_stop"),
                       preset.param("zoom_step"));
    case CorruptionKind::kPixelate:
      return pixelate(img, preset.param("ratio"));
    case CorruptionKind::kElasticTransform:
      return elastic_transform(img, preset.param("alpha"), preset.param("sigma"),
                               preset.param("alpha_affine"), rng);
    case CorruptionKind::kContrast:
      return contrast(img, preset.param("c"));
  }
  throw SpecError("unknown corruption kind");
}

inline Image apply_corruption(const Image& img, CorruptionKind kind, int level, Rng& rng) {
  return apply_corruption(img, corruption_preset(kind, level), rng);
}

}  // namespace vcrobust
