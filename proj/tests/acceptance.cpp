// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <fmt/core.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vcrobust/attacks.hpp"
#include "vcrobust/cli.hpp"
#include "vcrobust/corruptions.hpp"
#include "vcrobust/encoder.hpp"
#include "vcrobust/harness.hpp"
#include "vcrobust/metrics.hpp"

namespace fs = std::filesystem;
using namespace vcrobust;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("vcrobust_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image random_image(Rng& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
  std::vector<double> px(Image::expected_size(h, w));
  for (double& v : px) v = rng.uniform(lo, hi);
  return Image(h, w, std::move(px));
}

double variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

// ---------------------------------------------------------------------------

Outcome pdr_fixtures() {
  struct Cell {
    double clean, perturbed, expected;
  };
  // Accuracy pairs and the expected drop, percent.
  const std::vector<Cell> cells = {{76.0, 66.0, 13.2}, {58.0, 64.0, -10.3}, {33.0, 24.0, 27.3},
                                   {76.0, 58.0, 23.7}, {76.0, 78.0, -2.6},  {9.0, 2.0, 77.8},
                                   {17.0, 11.0, 35.3}, {61.6, 19.0, 69.1}};
  Outcome o;
  double worst = 0.0;
  for (const auto& c : cells) {
    const double got = 100.0 * pdr(c.clean / 100.0, c.perturbed / 100.0);
    worst = std::max(worst, std::abs(got - c.expected));
    if (std::abs(got - c.expected) > 0.15) {
      o.pass = false;
      o.detail += fmt::format("({}, {}) gave {:.3f}, expected {}; ", c.clean, c.perturbed, got, c.expected);
    }
  }
  o.detail += fmt::format("{} cells, worst deviation {:.3f} pp", cells.size(), worst);
  return o;
}

Outcome corruption_statistics() {
  Outcome o;
  const Image gray = Image::filled(256, 256, 0.5);
  std::string gauss, field_info;
  for (int level = 1; level <= 5; ++level) {
    const double sigma = corruption_preset(CorruptionKind::kGaussianNoise, level).param("sigma");
    Rng rng(100 + level);
    const Image out = gaussian_noise(gray, sigma, rng);
    std::vector<double> resid(out.size());
    for (std::size_t i = 0; i < resid.size(); ++i) resid[i] = out.data()[i] - gray.data()[i];
    const double ratio = variance(resid) / (sigma * sigma);
    const bool ok = std::abs(ratio - 1.0) <= 0.05;
    o.pass = o.pass && ok;
    gauss += fmt::format(" s{}={:.3f}{}", level, ratio, ok ? "" : "!");
    Rng frng(100 + level);
    field_info += fmt::format(" {:.3f}", variance(gaussian_noise_field(gray.size(), sigma, frng)) / (sigma * sigma));
  }
  std::string impulse;
  for (int level = 1; level <= 5; ++level) {
    const double p = corruption_preset(CorruptionKind::kImpulseNoise, level).param("p");
    Rng rng(200 + level);
    const Image out = impulse_noise(gray, p, rng);
    std::size_t changed = 0;
    for (std::size_t px = 0; px < gray.pixel_count(); ++px) {
      bool any = false;
      for (int c = 0; c < 3; ++c) any = any || out.data()[px * 3 + c] != 0.5;
      changed += any ? 1 : 0;
    }
    const double frac = static_cast<double>(changed) / static_cast<double>(gray.pixel_count());
    const bool ok = std::abs(frac - p) <= 0.01;
    o.pass = o.pass && ok;
    impulse += fmt::format(" s{}={:+.4f}{}", level, frac - p, ok ? "" : "!");
  }
  double worst_contrast = 0.0;
  Rng img_rng(300);
  const Image mid = random_image(img_rng, 256, 256, 0.25, 0.75);
  for (int level = 1; level <= 5; ++level) {
    const double c = corruption_preset(CorruptionKind::kContrast, level).param("c");
    const Image out = contrast(mid, c);
    for (int ch = 0; ch < 3; ++ch) {
      std::vector<double> a, b;
      for (std::size_t px = 0; px < mid.pixel_count(); ++px) {
        a.push_back(mid.data()[px * 3 + ch]);
        b.push_back(out.data()[px * 3 + ch]);
      }
      worst_contrast = std::max(worst_contrast, std::abs(variance(b) / variance(a) - c * c));
    }
  }
  o.pass = o.pass && worst_contrast <= 1e-6;
  o.detail = fmt::format("gaussian var/sigma^2:{} (pre-clip field:{}); impulse frac-p:{}; contrast max|ratio-c^2|={:.2e}",
                         gauss, field_info, impulse, worst_contrast);
  return o;
}

Outcome attack_constraints() {
  const ToyEncoder enc;
  Outcome o;
  Rng meta(400);
  std::string summary;
  for (AttackKind kind : {AttackKind::kFgsm, AttackKind::kBim, AttackKind::kPgd, AttackKind::kCw}) {
    std::size_t bad = 0;
    double worst_excess = -1.0;
    for (int k = 0; k < 500; ++k) {
      const double lo = meta.uniform(0.0, 0.5);
      const Image img = random_image(meta, 32, 32, lo, meta.uniform(lo + 0.1, 1.0));
      const int level = 1 + static_cast<int>(meta.next_u64() % 5);
      Rng rng(meta.next_u64());
      const auto res = apply_attack(img, enc, kind, level, rng);
      bool ok = true;
      for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = res.image.data()[i];
        if (kind == AttackKind::kCw) {
          ok = ok && v > 0.0 && v < 1.0;
        } else {
          const double eps = *attack_preset(kind, level).epsilon;
          const double excess = std::abs(v - img.data()[i]) - eps;
          worst_excess = std::max(worst_excess, excess);
          ok = ok && v >= 0.0 && v <= 1.0 && excess <= 1e-9;
        }
      }
      bad += ok ? 0 : 1;
    }
    o.pass = o.pass && bad == 0;
    summary += fmt::format(" {}: {}/500 ok", to_string(kind), 500 - bad);
    if (kind != AttackKind::kCw) summary += fmt::format(" (max linf-eps {:.1e})", worst_excess);
    summary += ";";
  }
  summary.pop_back();
  o.detail = summary.substr(1);
  return o;
}

Outcome gradient_correctness() {
  Outcome o;
  double worst = 0.0, worst_linear = 0.0;
  ToyEncoder::Options linear_opts;
  linear_opts.use_tanh = false;
  const ToyEncoder enc, linear(linear_opts);
  for (int k = 0; k < 10; ++k) {
    Rng rng(500 + k);
    const int side = 8 + 8 * (k % 3);
    const Image img = random_image(rng, side, side, 0.01, 0.99);
    worst = std::max(worst, grad_check(enc, img, 1e-4, rng).max_rel_error);
    worst_linear = std::max(worst_linear, grad_check(linear, img, 1e-4, rng).max_rel_error);
  }
  o.pass = worst < 1e-4 && worst_linear < 1e-8;
  o.detail = fmt::format("toy max rel err {:.2e}, linear {:.2e} over 10 cases", worst, worst_linear);
  return o;
}

Outcome attack_effectiveness() {
  const ToyEncoder enc;
  Outcome o;
  std::string pgd_info;
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng batch_rng(600 + seed);
    std::vector<Image> batch;
    for (int i = 0; i < 32; ++i) batch.push_back(random_image(batch_rng, 32, 32));
    std::vector<double> means;
    for (int level = 1; level <= 5; ++level) {
      double sum = 0.0;
      Rng rng(seed * 1000 + level);
      for (const auto& img : batch) {
        const auto res = apply_attack(img, enc, AttackKind::kPgd, level, rng);
        sum += mse_embed_loss(enc.embed(res.image), enc.embed(img));
      }
      means.push_back(sum / 32.0);
    }
    bool increasing = true;
    for (int l = 1; l < 5; ++l) increasing = increasing && means[l] > means[l - 1];
    o.pass = o.pass && increasing;
    pgd_info += fmt::format("{}seed{}: {:.3f} {:.3f} {:.3f} {:.3f} {:.3f}{}", seed == 1 ? " " : ", ", seed, means[0], means[1], means[2],
                            means[3], means[4], increasing ? "" : " (not increasing)");
  }
  std::string rates;
  for (AttackKind kind : {AttackKind::kBim, AttackKind::kCw}) {
    int up = 0;
    const int runs = 50;
    Rng meta(700 + static_cast<int>(kind));
    for (int k = 0; k < runs; ++k) {
      const Image img = random_image(meta, 32, 32);
      Rng rng(meta.next_u64());
      const auto res = apply_attack(img, enc, kind, 1 + k % 5, rng);
      const double final_loss = mse_embed_loss(enc.embed(res.image), enc.embed(img));
      up += final_loss > res.loss_trace.front() ? 1 : 0;
    }
    const bool ok = up >= 0.95 * runs;
    o.pass = o.pass && ok;
    rates += fmt::format("; {} final>initial {}/{}", to_string(kind), up, runs);
  }
  o.detail = "PGD mean MSE by severity:" + pgd_info + rates;
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  Rng rng(800);
  int iou_mismatch = 0;
  for (int k = 0; k < 100; ++k) {
    int b[2][4];
    for (auto& box : b) {
      int x1 = static_cast<int>(rng.next_u64() % 20), x2 = static_cast<int>(rng.next_u64() % 20);
      int y1 = static_cast<int>(rng.next_u64() % 20), y2 = static_cast<int>(rng.next_u64() % 20);
      box[0] = std::min(x1, x2);
      box[2] = std::max(x1, x2) + 1;
      box[1] = std::min(y1, y2);
      box[3] = std::max(y1, y2) + 1;
    }
    int inter = 0, uni = 0;
    for (int y = 0; y < 21; ++y) {
      for (int x = 0; x < 21; ++x) {
        const bool a = x >= b[0][0] && x < b[0][2] && y >= b[0][1] && y < b[0][3];
        const bool c = x >= b[1][0] && x < b[1][2] && y >= b[1][1] && y < b[1][3];
        inter += a && c;
        uni += a || c;
      }
    }
    const double got = iou({double(b[0][0]), double(b[0][1]), double(b[0][2]), double(b[0][3])},
                           {double(b[1][0]), double(b[1][1]), double(b[1][2]), double(b[1][3])});
    iou_mismatch += got == static_cast<double>(inter) / uni ? 0 : 1;
  }
  double worst_uniform = 0.0;
  for (int n : {1, 2, 3, 4, 7, 16, 49, 100, 576, 1024}) {
    worst_uniform = std::max(worst_uniform,
                             std::abs(attention_entropy({1, n, std::vector<double>(n, 0.37)}) - std::log(n)));
  }
  double worst_scale = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int rows = 1 + static_cast<int>(rng.next_u64() % 24), cols = 1 + static_cast<int>(rng.next_u64() % 24);
    AttentionMap m{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
    for (double& v : m.scores) v = rng.uniform();
    m.scores[0] += 1e-3;
    AttentionMap scaled = m;
    const double factor = std::exp(rng.uniform(-5.0, 5.0));
    for (double& v : scaled.scores) v *= factor;
    worst_scale = std::max(worst_scale, std::abs(attention_entropy(m) - attention_entropy(scaled)));
  }
  o.pass = iou_mismatch == 0 && worst_uniform <= 1e-9 && worst_scale <= 1e-9;
  o.detail = fmt::format("iou mismatches {}/100, uniform max err {:.1e}, scale-invariance max err {:.1e}",
                         iou_mismatch, worst_uniform, worst_scale);
  return o;
}

// --- end-to-end --------------------------------------------------------------

fs::path copy_dataset(const std::string& name) {
  const fs::path dir = scratch(name);
  fs::copy(VCROBUST_DATA_DIR, dir, fs::copy_options::recursive);
  fs::remove_all(dir / "out");
  return dir;
}

int evaluate_dir(const fs::path& dir, bool resume, std::string& err_text) {
  std::vector<std::string> args = {"evaluate",          "--config",       (dir / "config.json").string(),
                                   "--mock-model",      (dir / "mock_model.json").string(),
                                   "--mock-judge",      (dir / "mock_judge.json").string(),
                                   "--mock-grounder",   (dir / "mock_grounder.json").string()};
  if (resume) args.push_back("--resume");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  err_text += err.str();
  return code;
}

int report_dir(const fs::path& dir, std::string& err_text) {
  std::ostringstream out, err;
  const int code = run_cli({"report", "--results", (dir / "out" / "results.jsonl").string(), "--out",
                            (dir / "report").string()},
                           out, err);
  err_text += err.str();
  return code;
}

const std::vector<std::string> kReportFiles = {"pdr_table.csv",      "pdr_table_raw.csv",   "accuracy_table.csv",
                                               "accuracy_table_raw.csv", "severity_curves.csv", "entropy_summary.csv",
                                               "iou_vs_pdr.csv"};

fs::path g_sweep_dir;  // first full run, reused by later criteria

Outcome end_to_end_determinism() {
  Outcome o;
  std::string err;
  const fs::path a = copy_dataset("run_a"), b = copy_dataset("run_b");
  const int ca = evaluate_dir(a, false, err), cb = evaluate_dir(b, false, err);
  const int ra = report_dir(a, err), rb = report_dir(b, err);
  if (ca != 0 || cb != 0 || ra != 0 || rb != 0) {
    o.pass = false;
    o.detail = fmt::format("exit codes {} {} {} {}: {}", ca, cb, ra, rb, err.substr(0, 200));
    return o;
  }
  g_sweep_dir = a;
  const std::string results = slurp(a / "out" / "results.jsonl");
  const auto n_records = static_cast<std::size_t>(std::count(results.begin(), results.end(), '\n'));
  const bool same_results = results == slurp(b / "out" / "results.jsonl");
  std::size_t same_csv = 0;
  for (const auto& f : kReportFiles) same_csv += slurp(a / "report" / f) == slurp(b / "report" / f) ? 1 : 0;

  // Resume: drop the last 37 records, leave a torn line, and finish the run.
  const fs::path c = copy_dataset("run_c");
  fs::create_directories(c / "out");
  std::size_t cut = results.size();
  for (int k = 0; k < 38; ++k) cut = results.rfind('\n', cut - 1);
  {
    std::ofstream torn(c / "out" / "results.jsonl", std::ios::binary);
    torn << results.substr(0, cut + 1) << results.substr(cut + 1, 25);
  }
  const int cc = evaluate_dir(c, true, err);
  const bool same_resumed = cc == 0 && slurp(c / "out" / "results.jsonl") == results;

  o.pass = n_records == 10 * 61 * 3 && same_results && same_csv == kReportFiles.size() && same_resumed;
  o.detail = fmt::format("{} records; results identical: {}; report CSVs identical: {}/{}; resumed file identical: {}",
                         n_records, same_results ? "yes" : "no", same_csv, kReportFiles.size(),
                         same_resumed ? "yes" : "no");
  return o;
}

Outcome grounded_pipeline() {
  Outcome o;
  const fs::path data = VCROBUST_DATA_DIR;
  const auto samples = load_dataset(data / "dataset.jsonl", data);
  Services services;
  auto model = std::make_shared<ScriptedModel>(Json::parse(slurp(data / "mock_model.json")));
  services.model = model;
  services.grounder = std::make_shared<ScriptedGrounder>(Json::parse(slurp(data / "mock_grounder.json")));
  services.grounding_threshold = 0.4;
  const Condition cond{Paradigm::kViscotGrounded, std::nullopt, PerturbLocation::kGlobalOnly, 7};
  std::size_t good = 0;
  for (const auto& s : samples) {
    const auto rec = evaluate_sample("synthetic", s, cond, services);
    good += rec.n_ground_patches == 2 && !rec.error ? 1 : 0;
  }
  std::size_t four_images = 0;
  for (const auto& call : model->calls()) {
    if (call.mode == ModelMode::kDirectAnswer) four_images += call.n_images == 4 ? 1 : 0;
  }
  // The full sweep's grounded records as well.
  std::size_t sweep_grounded = 0, sweep_ok = 0;
  if (!g_sweep_dir.empty()) {
    for (const auto& r : read_records(g_sweep_dir / "out" / "results.jsonl")) {
      if (r.paradigm != "viscot_grounded") continue;
      ++sweep_grounded;
      sweep_ok += r.n_ground_patches == 2 ? 1 : 0;
    }
  }
  o.pass = good == samples.size() && four_images == samples.size() && sweep_grounded > 0 &&
           sweep_ok == sweep_grounded;
  o.detail = fmt::format("scores 0.9/0.5/0.3 at threshold 0.4: n_ground_patches=2 for {}/{} samples, "
                         "4-image answer requests {}/{}; sweep records with 2 patches {}/{}",
                         good, samples.size(), four_images, samples.size(), sweep_ok, sweep_grounded);
  return o;
}

Outcome severity_curve_shape() {
  Outcome o;
  if (g_sweep_dir.empty()) return {false, "no sweep output available"};
  std::ifstream in(g_sweep_dir / "report" / "severity_curves.csv");
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::map<int, double>> curves;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < 6 || cells[5].empty()) continue;
    curves[cells[0] + "/" + cells[1] + "/" + cells[2] + "/" + cells[3]][std::stoi(cells[4])] = std::stod(cells[5]);
  }
  std::size_t monotone = 0, dropping = 0, complete = 0;
  for (const auto& [key, curve] : curves) {
    complete += curve.size() == 5 ? 1 : 0;
    bool ok = true;
    for (auto it = std::next(curve.begin()); it != curve.end(); ++it) ok = ok && it->second <= std::prev(it)->second;
    monotone += ok ? 1 : 0;
    dropping += curve.rbegin()->second < curve.begin()->second ? 1 : 0;
  }
  o.pass = !curves.empty() && monotone == curves.size() && complete == curves.size() && dropping > 0;
  o.detail = fmt::format("{} curves, monotone nonincreasing {}/{}, with a drop from severity 1 to 5: {}",
                         curves.size(), monotone, curves.size(), dropping);
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    std::string title;
    std::function<Outcome()> run;
    double time_limit_s;  // 0: no bound
  };
  const std::vector<Criterion> criteria = {
      {"PDR reproduces reference cells", pdr_fixtures, 1.0},
      {"corruption statistics", corruption_statistics, 10.0},
      {"attack constraints", attack_constraints, 120.0},
      {"gradient correctness", gradient_correctness, 0.0},
      {"attack effectiveness", attack_effectiveness, 0.0},
      {"metric oracles", metric_oracles, 0.0},
      {"end-to-end determinism and resume", end_to_end_determinism, 60.0},
      {"grounded pipeline patch filtering", grounded_pipeline, 0.0},
      {"severity curve shape", severity_curve_shape, 0.0},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt::format("{:.2f} s", secs);
    if (criteria[i].time_limit_s > 0.0) {
      timing += fmt::format(" of {:g} s allowed", criteria[i].time_limit_s);
      if (secs > criteria[i].time_limit_s) o.pass = false;
    }
    failures += o.pass ? 0 : 1;
    fmt::print("{} criterion {}: {} ({}; {})\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].title, o.detail,
               timing);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
