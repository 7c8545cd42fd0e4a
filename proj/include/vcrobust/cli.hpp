#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "vcrobust/attacks.hpp"
#include "vcrobust/config.hpp"
#include "vcrobust/corruptions.hpp"
#include "vcrobust/encoder.hpp"
#include "vcrobust/errors.hpp"
#include "vcrobust/harness.hpp"
#include "vcrobust/http_transport.hpp"
#include "vcrobust/image_io.hpp"
#include "vcrobust/report.hpp"
#include "vcrobust/synthetic.hpp"

namespace vcrobust {

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

namespace cli {

struct CorruptArgs {
  std::filesystem::path in, out;
  std::string kind;
  int severity = 1;
  std::uint64_t seed = 0;
};

struct AttackArgs {
  std::filesystem::path in, out, trace;
  std::string kind;
  std::string encoder = "toy";
  int severity = 1;
  std::uint64_t seed = 0;
  bool cw_literal = false;
};

struct EvaluateArgs {
  std::filesystem::path config;
  std::filesystem::path mock_model, mock_judge, mock_grounder;
  bool resume = false;
  bool fixed_timing = false;
  int concurrency = 0;
};

struct ReportArgs {
  std::filesystem::path results, out, attention;
  int table_severity = 5;
};

struct SynthArgs {
  std::filesystem::path out;
  int n_samples = 10;
  int size = 32;
};

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file not found: " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

inline int corrupt(const CorruptArgs& a, std::ostream& out, std::ostream& err) {
  const auto kind = parse_corruption(a.kind);
  if (!kind) throw ConfigError("unknown corruption kind: " + a.kind);
  const CorruptionPreset preset = corruption_preset(*kind, a.severity);
  err << preset.describe() << '\n';
  Rng rng(a.seed);
  save_image(apply_corruption(load_image(a.in), preset, rng), a.out);
  out << "wrote " << a.out.string() << '\n';
  return kExitOk;
}

inline int attack(const AttackArgs& a, std::ostream& out, std::ostream& err) {
  const auto kind = parse_attack(a.kind);
  if (!kind) throw ConfigError("unknown attack kind: " + a.kind);
  if (a.encoder != "toy") throw ConfigError("unsupported encoder: " + a.encoder);
  const AttackConfig cfg = attack_preset(*kind, a.severity);
  err << cfg.describe() << '\n';
  AttackOptions opts;
  opts.cw_literal = a.cw_literal;
  const ToyEncoder encoder;
  Rng rng(a.seed);
  const AttackResult r = apply_attack(load_image(a.in), encoder, *kind, a.severity, rng, opts);
  save_image(r.image, a.out);
  std::filesystem::path trace = a.trace;
  if (trace.empty()) trace = std::filesystem::path(a.out).replace_extension(".loss.csv");
  write_loss_trace_csv(trace, r.loss_trace);
  out << fmt::format("linf={} ({:.4f}/255)\n", r.linf, r.linf * 255.0);
  out << fmt::format("l2={}\n", r.l2);
  out << fmt::format("loss_trace={}\n", trace.string());
  return kExitOk;
}

inline void print_summary(const SweepSummary& s, std::ostream& out) {
  out << fmt::format("{:<16} {:<18} {:>3} {:<16} {:>5} {:>8} {:>8}\n", "paradigm", "perturbation", "sev",
                     "location", "n", "acc(%)", "pdr(%)");
  for (const auto& c : s.conditions) {
    out << fmt::format("{:<16} {:<18} {:>3} {:<16} {:>5} {:>8} {:>8}\n", c.paradigm, c.perturbation,
                       c.severity ? std::to_string(*c.severity) : "-", c.perturb_location, c.n_records,
                       c.accuracy ? fmt::format("{:.1f}", *c.accuracy * 100.0) : "-",
                       c.pdr ? fmt::format("{:.1f}", *c.pdr * 100.0) : "-");
  }
  out << fmt::format("written={} skipped={} errors={} unjudged={}\n", s.n_written, s.n_skipped, s.n_errors,
                     s.n_unjudged);
}

inline int evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_run_config(a.config);
  if (a.fixed_timing) cfg.fixed_timing = true;
  if (a.concurrency > 0) cfg.concurrency = a.concurrency;
  cfg.validate();
  const auto samples = load_dataset(cfg.dataset, cfg.image_root);
  const auto conditions = cfg.conditions();

  ClientSettings settings;
  settings.limiter = std::make_shared<InflightLimiter>(cfg.concurrency);
  auto transport = std::make_shared<HttplibTransport>();
  auto need = [](const EndpointConfig& e, const char* what) {
    if (e.endpoint.empty()) {
      throw ConfigError(fmt::format("no {} endpoint configured and no mock given", what));
    }
  };

  Services services;
  services.fixed_timing = cfg.fixed_timing;
  services.grounding_threshold = cfg.grounding_threshold;
  if (!a.mock_model.empty()) {
    services.model = std::make_shared<ScriptedModel>(read_json_file(a.mock_model));
  } else {
    need(cfg.model, "model");
    services.model = std::make_shared<RemoteModelClient>(cfg.model.endpoint, transport, settings,
                                                         cfg.model.style, cfg.model.model_name);
  }
  if (!a.mock_judge.empty()) {
    services.judge = std::make_shared<ScriptedJudge>(
        read_json_file(a.mock_judge).value("verdict", std::string("exact")));
  } else if (cfg.judge == JudgeKind::kRemote) {
    need(cfg.judge_endpoint, "judge");
    const std::string name = cfg.judge_endpoint.model_name.empty() ? "gpt-4o" : cfg.judge_endpoint.model_name;
    services.judge = std::make_shared<RemoteJudge>(cfg.judge_endpoint.endpoint, transport, settings, name);
  }
  const bool grounded = std::find(cfg.paradigms.begin(), cfg.paradigms.end(), Paradigm::kViscotGrounded) !=
                        cfg.paradigms.end();
  if (!a.mock_grounder.empty()) {
    services.grounder = std::make_shared<ScriptedGrounder>(read_json_file(a.mock_grounder));
  } else if (grounded) {
    need(cfg.grounder, "grounder");
    services.grounder = std::make_shared<RemoteGrounder>(cfg.grounder.endpoint, transport, settings);
  }

  std::filesystem::create_directories(cfg.output_dir);
  SweepOptions opts;
  opts.resume = a.resume;
  opts.concurrency = cfg.concurrency;
  const SweepSummary summary = run_sweep(cfg.dataset_name, samples, conditions, services, cfg.results_path(), opts);
  print_summary(summary, out);
  out << "results=" << cfg.results_path().string() << '\n';
  if (!summary.ok()) {
    err << summary.n_errors << " record(s) carry errors; see the error field in the results file\n";
    return kExitRuntime;
  }
  return kExitOk;
}

inline int report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  if (a.table_severity < 1 || a.table_severity > 5) throw ConfigError("--table-severity must be in 1..5");
  std::optional<std::filesystem::path> attention;
  if (!a.attention.empty()) attention = a.attention;
  const Aggregate agg = aggregate(a.results, attention);
  for (const auto& w : agg.warnings) err << "warning: " << w << '\n';
  if (agg.rows.empty()) {
    err << "no records in " << a.results.string() << '\n';
    return kExitRuntime;
  }
  for (const auto& p : write_report(agg, a.out, {a.table_severity})) out << "wrote " << p.string() << '\n';
  return kExitOk;
}

inline int synth(const SynthArgs& a, std::ostream& out, std::ostream&) {
  if (a.n_samples < 1 || a.size < 8) throw ConfigError("need --samples >= 1 and --size >= 8");
  write_synthetic_dataset(a.out, {a.n_samples, a.size});
  out << "wrote synthetic dataset to " << a.out.string() << '\n';
  return kExitOk;
}

}  // namespace cli

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Robustness benchmarking for Visual-CoT style VQA pipelines"};
  app.require_subcommand(1);

  cli::CorruptArgs ca;
  auto* c = app.add_subcommand("corrupt", "Apply a natural corruption preset to an image");
  c->add_option("--in", ca.in, "Input image (PNG or JPEG)")->required();
  c->add_option("--out", ca.out, "Output PNG")->required();
  c->add_option("--kind", ca.kind, "Corruption kind, e.g. gaussian_noise or gaussian")->required();
  c->add_option("--severity", ca.severity, "Severity 1..5")->required();
  c->add_option("--seed", ca.seed, "RNG seed");

  cli::AttackArgs aa;
  auto* at = app.add_subcommand("attack", "Run a white-box embedding attack preset");
  at->add_option("--in", aa.in, "Input image (PNG or JPEG)")->required();
  at->add_option("--out", aa.out, "Output PNG")->required();
  at->add_option("--kind", aa.kind, "fgsm, bim, pgd or cw")->required();
  at->add_option("--severity", aa.severity, "Severity 1..5")->required();
  at->add_option("--seed", aa.seed, "RNG seed");
  at->add_option("--encoder", aa.encoder, "Surrogate encoder (toy)");
  at->add_option("--trace", aa.trace, "Loss trace CSV (default: <out>.loss.csv)");
  at->add_flag("--cw-literal", aa.cw_literal, "C&W: minimize C*L_embed + L2 instead of maximizing the deviation");

  cli::EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Run the evaluation sweep described by a config file");
  ev->add_option("--config", ea.config, "Run config JSON")->required();
  ev->add_option("--mock-model", ea.mock_model, "Scripted model JSON");
  ev->add_option("--mock-judge", ea.mock_judge, "Scripted judge JSON");
  ev->add_option("--mock-grounder", ea.mock_grounder, "Scripted grounder JSON");
  ev->add_flag("--resume", ea.resume, "Skip records already in the results file");
  ev->add_flag("--fixed-timing", ea.fixed_timing, "Record wall_time_ms as 1 (byte-stable output)");
  ev->add_option("--concurrency", ea.concurrency, "Override the worker count");

  cli::ReportArgs ra;
  auto* rp = app.add_subcommand("report", "Aggregate a results file into CSV tables");
  rp->add_option("--results", ra.results, "Results JSONL")->required();
  rp->add_option("--out", ra.out, "Output directory")->required();
  rp->add_option("--attention", ra.attention, "Attention map sidecar JSONL");
  rp->add_option("--table-severity", ra.table_severity, "Severity shown in the PDR and accuracy tables");

  cli::SynthArgs sa;
  auto* sy = app.add_subcommand("synth", "Write the synthetic demo dataset and mock scripts");
  sy->add_option("--out", sa.out, "Output directory")->required();
  sy->add_option("--samples", sa.n_samples, "Number of samples");
  sy->add_option("--size", sa.size, "Image side in pixels");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c->parsed()) return cli::corrupt(ca, out, err);
    if (at->parsed()) return cli::attack(aa, out, err);
    if (ev->parsed()) return cli::evaluate(ea, out, err);
    if (rp->parsed()) return cli::report(ra, out, err);
    if (sy->parsed()) return cli::synth(sa, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SpecError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace vcrobust
