#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "vcrobust/encoder.hpp"
#include "vcrobust/errors.hpp"
#include "vcrobust/image.hpp"
#include "vcrobust/rng.hpp"

namespace vcrobust {

enum class AttackKind { kFgsm, kBim, kPgd, kCw };

inline constexpr std::array<AttackKind, 4> kAllAttacks = {AttackKind::kBim, AttackKind::kFgsm,
                                                          AttackKind::kPgd, AttackKind::kCw};

constexpr std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kBim: return "bim";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kCw: return "cw";
  }
  return "unknown";
}

inline std::optional<AttackKind> parse_attack(std::string_view name) {
  for (AttackKind k : kAllAttacks) {
    if (name == to_string(k)) return k;
  }
  if (name == "c&w" || name == "carlini_wagner") return AttackKind::kCw;
  return std::nullopt;
}

/// Resolved attack parameters. Fields a kind does not use stay empty.
struct AttackConfig {
  AttackKind kind = AttackKind::kFgsm;
  int level = 1;
  std::optional<double> epsilon;   ///< l-inf budget (FGSM/BIM/PGD)
  std::optional<double> alpha;     ///< step size (BIM/PGD)
  int iters = 0;                   ///< T (BIM/PGD/CW)
  std::optional<double> c_weight;  ///< C (CW)
  std::optional<double> lr;        ///< eta (CW)

  std::string describe() const {
    std::string out = fmt::format("{} severity {}:", to_string(kind), level);
    if (epsilon) out += fmt::format(" epsilon={:g} ({:g}/255)", *epsilon, *epsilon * 255.0);
    if (alpha) out += fmt::format(" alpha={:g} ({:g}/255)", *alpha, *alpha * 255.0);
    if (kind != AttackKind::kFgsm) out += fmt::format(" T={}", iters);
    if (c_weight) out += fmt::format(" C={:g}", *c_weight);
    if (lr) out += fmt::format(" eta={:g}", *lr);
    return out;
  }
};

inline AttackConfig attack_preset(AttackKind kind, int level) {
  if (level < 1 || level > 5) {
    throw ConfigError("attack severity must be in 1..5, got " + std::to_string(level));
  }
  const auto i = static_cast<std::size_t>(level - 1);
  constexpr std::array<double, 5> eps255 = {1, 2, 4, 6, 8};
  constexpr std::array<double, 5> alpha255 = {0.2, 0.4, 0.8, 1.0, 1.2};
  constexpr std::array<int, 5> iters = {100, 200, 300, 400, 500};
  AttackConfig cfg;
  cfg.kind = kind;
  cfg.level = level;
  switch (kind) {
    case AttackKind::kFgsm:
      cfg.epsilon = eps255[i] / 255.0;
      break;
    case AttackKind::kBim:
    case AttackKind::kPgd:
      cfg.epsilon = eps255[i] / 255.0;
      cfg.alpha = alpha255[i] / 255.0;
      cfg.iters = iters[i];
      break;
    case AttackKind::kCw: {
      constexpr std::array<double, 5> c = {0.1, 0.5, 1.0, 2.0, 5.0};
      constexpr std::array<double, 5> eta = {1e-3, 1e-3, 5e-4, 1e-4, 1e-4};
      cfg.c_weight = c[i];
      cfg.lr = eta[i];
      cfg.iters = iters[i];
      break;
    }
  }
  return cfg;
}

struct AttackOptions {
  /// FGSM/BIM start from delta ~ U(-s*eps, s*eps) instead of 0: the
  /// embedding MSE has an exactly zero gradient at delta = 0. For C&W the
  /// same scale (times eta) jitters the tanh-space start with a fixed stream.
  bool symmetry_break = true;
  double symmetry_scale = 1e-3;
  /// Run C&W as literally written (descend +C*L_embed + L_l2), which pulls
  /// x_adv toward x. Default maximizes the embedding deviation instead.
  bool cw_literal = false;
};

struct AttackResult {
  Image image;
  std::uint64_t seed = 0;
  /// Embedding MSE to the clean embedding: entry 0 at the start point, entry
  /// t after update t.
  std::vector<double> loss_trace;
  double linf = 0.0;
  double l2 = 0.0;
};

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline void fill_norms(AttackResult& r, const Image& clean) {
  double linf = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = r.image.data()[i] - clean.data()[i];
    linf = std::max(linf, std::abs(d));
    sq += d * d;
  }
  r.linf = linf;
  r.l2 = std::sqrt(sq);
}

inline void require_kind(const AttackConfig& cfg, AttackKind kind) {
  if (cfg.kind != kind) {
    throw ConfigError(fmt::format("{} called with a {} config", to_string(kind), to_string(cfg.kind)));
  }
  if (cfg.iters < 0) throw ConfigError("iteration count must be >= 0");
  if (cfg.epsilon && *cfg.epsilon < 0.0) throw ConfigError("epsilon must be >= 0");
}

inline double require(const std::optional<double>& v, const char* name) {
  if (!v) throw ConfigError(std::string("attack config is missing ") + name);
  return *v;
}

/// Shared sign-gradient ascent for BIM and PGD.
inline AttackResult iterative_sign_attack(const Image& img, const EncoderModel& enc,
                                          const AttackConfig& cfg, Rng& rng,
                                          std::vector<double> delta, bool clip_each_step) {
  const double eps = require(cfg.epsilon, "epsilon");
  const double alpha = require(cfg.alpha, "alpha");
  const Embedding z_clean = enc.embed(img);
  const auto& x = img.values();
  std::vector<double> probe(x.size());
  const PixelView view{probe, img.height(), img.width()};
  AttackResult r{img, rng.seed(), {}, 0.0, 0.0};
  r.loss_trace.reserve(static_cast<std::size_t>(cfg.iters) + 1);
  for (int t = 0; t <= cfg.iters; ++t) {
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] + delta[i];
    if (t == cfg.iters) {
      r.loss_trace.push_back(mse_embed_loss(enc.embed(view), z_clean));
      break;
    }
    const LossGrad lg = enc.loss_grad(view, z_clean);
    r.loss_trace.push_back(lg.loss);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double d = delta[i] + alpha * sign(lg.grad[i]);
      d = std::clamp(d, -eps, eps);
      if (clip_each_step) d = std::clamp(x[i] + d, 0.0, 1.0) - x[i];
      delta[i] = d;
    }
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + delta[i];
  r.image = Image::clipped(img.height(), img.width(), std::move(out));
  fill_norms(r, img);
  return r;
}

inline std::vector<double> small_start(const Image& img, double eps, const AttackOptions& opts,
                                       Rng& rng) {
  std::vector<double> delta(img.size(), 0.0);
  if (!opts.symmetry_break) return delta;
  const double s = opts.symmetry_scale * eps;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double d = rng.uniform(-s, s);
    delta[i] = std::clamp(img.data()[i] + d, 0.0, 1.0) - img.data()[i];
  }
  return delta;
}

}  // namespace detail

/// Single sign-gradient step of size epsilon.
inline AttackResult fgsm(const Image& img, const EncoderModel& enc, const AttackConfig& cfg,
                         Rng& rng, const AttackOptions& opts = {}) {
  detail::require_kind(cfg, AttackKind::kFgsm);
  const double eps = detail::require(cfg.epsilon, "epsilon");
  const Embedding z_clean = enc.embed(img);
  const auto& x = img.values();
  const auto delta0 = detail::small_start(img, eps, opts, rng);
  std::vector<double> probe(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] + delta0[i];
  const LossGrad lg = enc.loss_grad(PixelView{probe, img.height(), img.width()}, z_clean);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + eps * detail::sign(lg.grad[i]);
  AttackResult r{Image::clipped(img.height(), img.width(), std::move(out)), rng.seed(), {}, 0.0, 0.0};
  r.loss_trace = {lg.loss, mse_embed_loss(enc.embed(r.image), z_clean)};
  detail::fill_norms(r, img);
  return r;
}

/// Basic iterative method: T sign steps of size alpha, projected to the
/// epsilon ball and to valid pixels after every step.
inline AttackResult bim(const Image& img, const EncoderModel& enc, const AttackConfig& cfg,
                        Rng& rng, const AttackOptions& opts = {}) {
  detail::require_kind(cfg, AttackKind::kBim);
  const double eps = detail::require(cfg.epsilon, "epsilon");
  auto start = cfg.iters > 0 ? detail::small_start(img, eps, opts, rng) : std::vector<double>(img.size(), 0.0);
  return detail::iterative_sign_attack(img, enc, cfg, rng, std::move(start), /*clip_each_step=*/true);
}

/// Projected gradient descent with a uniform random start in the epsilon
/// ball; pixels are clipped to [0, 1] only at the end.
inline AttackResult pgd(const Image& img, const EncoderModel& enc, const AttackConfig& cfg,
                        Rng& rng, const AttackOptions& /*opts*/ = {}) {
  detail::require_kind(cfg, AttackKind::kPgd);
  const double eps = detail::require(cfg.epsilon, "epsilon");
  std::vector<double> delta(img.size());
  for (double& d : delta) d = rng.uniform(-eps, eps);
  return detail::iterative_sign_attack(img, enc, cfg, rng, std::move(delta),
                                       /*clip_each_step=*/false);
}

/// Untargeted C&W in tanh space, optimized with Adam. Deterministic.
///
/// Default objective: minimize -C * MSE(f(x_adv), f(x)) + ||x_adv - x||^2.
/// With opts.cw_literal the first term's sign is flipped.
inline AttackResult cw(const Image& img, const EncoderModel& enc, const AttackConfig& cfg,
                       const AttackOptions& opts = {}) {
  detail::require_kind(cfg, AttackKind::kCw);
  const double c_weight = detail::require(cfg.c_weight, "c_weight");
  const double lr = detail::require(cfg.lr, "lr");
  constexpr double kClampLo = 1e-6;
  constexpr double kClampHi = 1.0 - 1e-6;
  constexpr std::uint64_t kJitterSeed = 0x5EEDC0DEULL;

  const Embedding z_clean = enc.embed(img);
  const auto& x = img.values();
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    w[i] = std::atanh(2.0 * std::clamp(x[i], kClampLo, kClampHi) - 1.0);
  }
  if (opts.symmetry_break && cfg.iters > 0) {
    Rng jitter(kJitterSeed);
    const double s = opts.symmetry_scale * lr;
    for (double& wi : w) wi += jitter.uniform(-s, s);
  }

  const double embed_sign = opts.cw_literal ? 1.0 : -1.0;
  std::vector<double> x_adv(x.size());
  auto map_back = [&] {
    for (std::size_t i = 0; i < w.size(); ++i) x_adv[i] = 0.5 * (std::tanh(w[i]) + 1.0);
  };
  const PixelView view{x_adv, img.height(), img.width()};

  AttackResult r{img, 0, {}, 0.0, 0.0};
  r.loss_trace.reserve(static_cast<std::size_t>(cfg.iters) + 1);
  AdamState adam(w.size());
  std::vector<double> grad_w(w.size());
  for (int t = 0; t < cfg.iters; ++t) {
    map_back();
    const LossGrad lg = enc.loss_grad(view, z_clean);
    r.loss_trace.push_back(lg.loss);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d_total = embed_sign * c_weight * lg.grad[i] + 2.0 * (x_adv[i] - x[i]);
      const double th = std::tanh(w[i]);
      grad_w[i] = d_total * 0.5 * (1.0 - th * th);
    }
    adam_step(adam, w, grad_w, lr);
  }
  map_back();
  r.loss_trace.push_back(mse_embed_loss(enc.embed(view), z_clean));
  // tanh saturates to exactly +-1 in double for |w| > ~19; keep the output
  // strictly inside (0, 1).
  for (double& v : x_adv) v = std::clamp(v, kClampLo * 0.5, 1.0 - kClampLo * 0.5);
  r.image = Image(img.height(), img.width(), x_adv);
  detail::fill_norms(r, img);
  return r;
}

/// Resolves the preset for (kind, level) and runs it. The result carries the
/// seed, loss trace and final perturbation norms.
inline AttackResult apply_attack(const Image& img, const EncoderModel& enc, AttackKind kind,
                                 int level, Rng& rng, const AttackOptions& opts = {}) {
  const AttackConfig cfg = attack_preset(kind, level);
  AttackResult r = [&] {
    switch (kind) {
      case AttackKind::kFgsm: return fgsm(img, enc, cfg, rng, opts);
      case AttackKind::kBim: return bim(img, enc, cfg, rng, opts);
      case AttackKind::kPgd: return pgd(img, enc, cfg, rng, opts);
      case AttackKind::kCw: return cw(img, enc, cfg, opts);
    }
    throw ConfigError("unknown attack kind");
  }();
  r.seed = rng.seed();
  return r;
}

inline void write_loss_trace_csv(const std::filesystem::path& path,
                                 const std::vector<double>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << fmt::format("{},{}\n", i, trace[i]);
  if (!out) throw IoError("error writing " + path.string());
}

}  // namespace vcrobust
