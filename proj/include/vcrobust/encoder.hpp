#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "vcrobust/errors.hpp"
#include "vcrobust/image.hpp"
#include "vcrobust/rng.hpp"

namespace vcrobust {

using Embedding = std::vector<double>;

/// Raw H x W x 3 pixel buffer. Unlike Image, values may leave [0, 1]
/// (e.g. PGD evaluates x + delta before the final clip).
struct PixelView {
  std::span<const double> data;
  int height = 0;
  int width = 0;

  static PixelView of(const Image& img) { return {img.data(), img.height(), img.width()}; }
};

/// Only the embedding MSE is shipped.
enum class LossKind { kEmbeddingMse };

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  ///< d loss / d pixel, same layout as the input
};

/// Mean of squared componentwise differences.
inline double mse_embed_loss(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("embedding dimensions differ: " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw ShapeError("empty embeddings");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// A differentiable image -> embedding map. Implementations must be safe for
/// concurrent const use.
class EncoderModel {
 public:
  virtual ~EncoderModel() = default;

  virtual std::size_t dim() const = 0;
  virtual Embedding embed(PixelView x) const = 0;

  /// Loss value and its gradient with respect to every input intensity.
  virtual LossGrad loss_grad(PixelView x, const Embedding& reference,
                             LossKind kind = LossKind::kEmbeddingMse) const = 0;

  Embedding embed(const Image& img) const { return embed(PixelView::of(img)); }

  std::vector<double> grad_input(const Image& img, LossKind kind,
                                 const Embedding& reference) const {
    return loss_grad(PixelView::of(img), reference, kind).grad;
  }
};

/// Average pool (window x window, partial windows at the edges) ->
/// flatten -> seeded dense projection -> tanh.
///
/// The projection for a given pooled shape is generated from the seed, so any
/// input size is accepted and the embedding dimension stays fixed.
class ToyEncoder final : public EncoderModel {
 public:
  struct Options {
    int window = 4;
    std::size_t dim = 32;
    std::uint64_t seed = 0;
    bool use_tanh = true;
    /// Projection entries are gain * U(-sqrt(3/P), sqrt(3/P)). At gain 1 the
    /// encoder is so flat that the l2-penalized C&W objective is minimized
    /// at x_adv = x for every preset C; 128 puts lambda_max(J^T J) well above
    /// dim / C on typical inputs.
    double gain = 128.0;
    /// Subtracted from pooled intensities before projection, keeping the
    /// high-gain tanh units out of saturation.
    double center = 0.5;
  };

  ToyEncoder() : ToyEncoder(Options{}) {}
  explicit ToyEncoder(Options opts) : opts_(opts) {
    if (opts_.window < 1 || opts_.dim < 1) throw ConfigError("ToyEncoder: window and dim must be >= 1");
    if (!(opts_.gain > 0.0)) throw ConfigError("ToyEncoder: gain must be positive");
  }

  using EncoderModel::embed;

  const Options& options() const noexcept { return opts_; }
  std::size_t dim() const override { return opts_.dim; }

  Embedding embed(PixelView x) const override {
    const Shape s = shape_of(x);
    const auto pooled = pool(x, s);
    const auto& w = projection(s);
    Embedding z(opts_.dim, 0.0);
    for (std::size_t k = 0; k < opts_.dim; ++k) {
      double a = 0.0;
      const double* row = w.data() + k * s.features;
      for (std::size_t j = 0; j < s.features; ++j) a += row[j] * pooled[j];
      z[k] = opts_.use_tanh ? std::tanh(a) : a;
    }
    return z;
  }

  LossGrad loss_grad(PixelView x, const Embedding& reference,
                     LossKind /*kind*/ = LossKind::kEmbeddingMse) const override {
    if (reference.size() != opts_.dim) throw ShapeError("reference embedding has wrong dimension");
    const Shape s = shape_of(x);
    const auto pooled = pool(x, s);
    const auto& w = projection(s);
    const double inv_d = 1.0 / static_cast<double>(opts_.dim);

    LossGrad out;
    std::vector<double> d_pre(opts_.dim);
    for (std::size_t k = 0; k < opts_.dim; ++k) {
      double a = 0.0;
      const double* row = w.data() + k * s.features;
      for (std::size_t j = 0; j < s.features; ++j) a += row[j] * pooled[j];
      const double z = opts_.use_tanh ? std::tanh(a) : a;
      const double diff = z - reference[k];
      out.loss += diff * diff * inv_d;
      const double dz = 2.0 * diff * inv_d;
      d_pre[k] = opts_.use_tanh ? dz * (1.0 - z * z) : dz;
    }
    std::vector<double> d_pooled(s.features, 0.0);
    for (std::size_t k = 0; k < opts_.dim; ++k) {
      const double* row = w.data() + k * s.features;
      for (std::size_t j = 0; j < s.features; ++j) d_pooled[j] += row[j] * d_pre[k];
    }
    out.grad.assign(x.data.size(), 0.0);
    for (int y = 0; y < x.height; ++y) {
      const int py = y / opts_.window;
      for (int xx = 0; xx < x.width; ++xx) {
        const int px = xx / opts_.window;
        const double inv_count = 1.0 / window_count(s, py, px, x);
        for (int c = 0; c < 3; ++c) {
          out.grad[(static_cast<std::size_t>(y) * x.width + xx) * 3 + c] =
              d_pooled[feature(s, py, px, c)] * inv_count;
        }
      }
    }
    return out;
  }

 private:
  struct Shape {
    int pooled_h;
    int pooled_w;
    std::size_t features;
  };

  Shape shape_of(PixelView x) const {
    if (x.height < 1 || x.width < 1 ||
        x.data.size() != Image::expected_size(x.height, x.width)) {
      throw ShapeError("ToyEncoder: pixel buffer does not match its dimensions");
    }
    const int ph = (x.height + opts_.window - 1) / opts_.window;
    const int pw = (x.width + opts_.window - 1) / opts_.window;
    return {ph, pw, static_cast<std::size_t>(ph) * static_cast<std::size_t>(pw) * 3};
  }

  static std::size_t feature(const Shape& s, int py, int px, int c) {
    return (static_cast<std::size_t>(py) * static_cast<std::size_t>(s.pooled_w) +
            static_cast<std::size_t>(px)) * 3 + static_cast<std::size_t>(c);
  }

  double window_count(const Shape&, int py, int px, PixelView x) const {
    const int h = std::min(opts_.window, x.height - py * opts_.window);
    const int w = std::min(opts_.window, x.width - px * opts_.window);
    return static_cast<double>(h * w);
  }

  std::vector<double> pool(PixelView x, const Shape& s) const {
    std::vector<double> pooled(s.features, 0.0);
    for (int y = 0; y < x.height; ++y) {
      const int py = y / opts_.window;
      for (int xx = 0; xx < x.width; ++xx) {
        const int px = xx / opts_.window;
        for (int c = 0; c < 3; ++c) {
          pooled[feature(s, py, px, c)] +=
              x.data[(static_cast<std::size_t>(y) * x.width + xx) * 3 + c];
        }
      }
    }
    for (int py = 0; py < s.pooled_h; ++py) {
      for (int px = 0; px < s.pooled_w; ++px) {
        const double inv = 1.0 / window_count(s, py, px, x);
        for (int c = 0; c < 3; ++c) {
          double& v = pooled[feature(s, py, px, c)];
          v = v * inv - opts_.center;
        }
      }
    }
    return pooled;
  }

  // Entries gain * uniform in [-sqrt(3/P), sqrt(3/P)], drawn
  // from a counter-based hash of (seed, pooled shape, index).
  const std::vector<double>& projection(const Shape& s) const {
    const std::pair<int, int> key{s.pooled_h, s.pooled_w};
    std::lock_guard<std::mutex> lock(cache_->mutex);
    auto it = cache_->matrices.find(key);
    if (it != cache_->matrices.end()) return *it->second;
    const std::uint64_t base =
        mix_seed(mix_seed(opts_.seed, static_cast<std::uint64_t>(s.pooled_h)),
                 static_cast<std::uint64_t>(s.pooled_w));
    const double scale = opts_.gain * std::sqrt(3.0 / static_cast<double>(s.features));
    auto m = std::make_unique<std::vector<double>>(opts_.dim * s.features);
    for (std::size_t i = 0; i < m->size(); ++i) {
      const double u = static_cast<double>(splitmix64(base + i) >> 11) * 0x1.0p-53;
      (*m)[i] = scale * (2.0 * u - 1.0);
    }
    return *cache_->matrices.emplace(key, std::move(m)).first->second;
  }

  struct Cache {
    std::mutex mutex;
    std::map<std::pair<int, int>, std::unique_ptr<std::vector<double>>> matrices;
  };

  Options opts_;
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares loss_grad against central differences of the embedding MSE to
/// `reference` on `samples` random coordinates. Relative error uses
/// max(|analytic|, |numeric|, 1e-8) as the denominator.
inline GradCheckReport grad_check(const EncoderModel& enc, const Image& img,
                                  const Embedding& reference, double h, Rng& rng,
                                  std::size_t samples = 64) {
  if (!(h > 0.0)) throw DomainError("grad_check: h must be > 0");
  for (double v : img.data()) {
    if (v < h || v > 1.0 - h) throw DomainError("grad_check: image must be interior to [h, 1-h]");
  }
  const auto analytic = enc.loss_grad(PixelView::of(img), reference).grad;
  std::vector<double> probe(img.values());
  const PixelView view{probe, img.height(), img.width()};
  GradCheckReport r;
  r.coordinates = samples;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto i = static_cast<std::size_t>(rng.next_u64() % probe.size());
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = mse_embed_loss(enc.embed(view), reference);
    probe[i] = orig - h;
    const double down = mse_embed_loss(enc.embed(view), reference);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
    r.max_abs_analytic = std::max(r.max_abs_analytic, std::abs(a));
    r.max_abs_numeric = std::max(r.max_abs_numeric, std::abs(numeric));
  }
  return r;
}

/// As above, with the reference taken from a copy of `img` jittered by
/// uniform noise of amplitude `jitter`.
inline GradCheckReport grad_check(const EncoderModel& enc, const Image& img, double h, Rng& rng,
                                  std::size_t samples = 64, double jitter = 0.1) {
  std::vector<double> ref_px(img.values());
  for (double& v : ref_px) v += rng.uniform(-jitter, jitter);
  const Embedding reference = enc.embed(PixelView{ref_px, img.height(), img.width()});
  return grad_check(enc, img, reference, h, rng, samples);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::size_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam step, in place. An all-zero gradient leaves the
/// parameters untouched (moments still decay and t still advances).
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
                      double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment lengths differ");
  }
  if (!(lr > 0.0)) throw DomainError("adam_step: lr must be > 0");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  bool any = false;
  for (double g : grads) any = any || g != 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    if (!any) continue;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace vcrobust
