#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "vcrobust/attacks.hpp"
#include "vcrobust/clients.hpp"
#include "vcrobust/corruptions.hpp"
#include "vcrobust/encoder.hpp"
#include "vcrobust/errors.hpp"
#include "vcrobust/image.hpp"
#include "vcrobust/image_io.hpp"
#include "vcrobust/metrics.hpp"
#include "vcrobust/rng.hpp"

namespace vcrobust {

using OrderedJson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Conditions

enum class Paradigm { kStandard, kViscot, kViscotGrounded };
enum class PerturbLocation { kGlobalOnly, kGlobalAndLocal };

constexpr std::string_view to_string(Paradigm p) {
  switch (p) {
    case Paradigm::kStandard: return "standard";
    case Paradigm::kViscot: return "viscot";
    case Paradigm::kViscotGrounded: return "viscot_grounded";
  }
  return "unknown";
}

constexpr std::string_view to_string(PerturbLocation l) {
  return l == PerturbLocation::kGlobalOnly ? "global_only" : "global_and_local";
}

inline std::optional<Paradigm> parse_paradigm(std::string_view s) {
  for (auto p : {Paradigm::kStandard, Paradigm::kViscot, Paradigm::kViscotGrounded}) {
    if (s == to_string(p)) return p;
  }
  return std::nullopt;
}

inline std::optional<PerturbLocation> parse_location(std::string_view s) {
  for (auto l : {PerturbLocation::kGlobalOnly, PerturbLocation::kGlobalAndLocal}) {
    if (s == to_string(l)) return l;
  }
  return std::nullopt;
}

constexpr bool is_viscot(Paradigm p) { return p != Paradigm::kStandard; }

/// One corruption or attack at a severity level.
struct Perturbation {
  std::variant<CorruptionKind, AttackKind> kind;
  int severity = 1;

  bool is_attack() const { return std::holds_alternative<AttackKind>(kind); }

  std::string name() const {
    return std::visit([](auto k) { return std::string(to_string(k)); }, kind);
  }

  static std::optional<std::variant<CorruptionKind, AttackKind>> parse_kind(std::string_view name) {
    if (auto c = parse_corruption(name)) return *c;
    if (auto a = parse_attack(name)) return *a;
    return std::nullopt;
  }
};

/// The 12 perturbations in reporting order (8 corruptions, then BIM, FGSM,
/// PGD, C&W).
inline std::vector<std::string> all_perturbation_names() {
  std::vector<std::string> out;
  for (auto k : kAllCorruptions) out.emplace_back(to_string(k));
  for (auto k : kAllAttacks) out.emplace_back(to_string(k));
  return out;
}

inline int perturbation_rank(const std::string& name) {
  if (name == "none") return -1;
  const auto all = all_perturbation_names();
  const auto it = std::find(all.begin(), all.end(), name);
  return it == all.end() ? static_cast<int>(all.size()) : static_cast<int>(it - all.begin());
}

struct Condition {
  Paradigm paradigm = Paradigm::kStandard;
  std::optional<Perturbation> perturbation;
  PerturbLocation location = PerturbLocation::kGlobalOnly;
  std::uint64_t seed = 0;  ///< master seed

  std::string perturbation_name() const { return perturbation ? perturbation->name() : "none"; }
  std::optional<int> severity() const {
    return perturbation ? std::optional<int>(perturbation->severity) : std::nullopt;
  }

  /// Human-readable identity, independent of the seed.
  std::string key() const {
    return fmt::format("{}|{}|{}|{}", to_string(paradigm), perturbation_name(),
                       perturbation ? perturbation->severity : 0, to_string(location));
  }

  /// Identity used for resumption; covers the seed as well.
  std::string hash() const { return hash_hex(fmt::format("{}|seed={}", key(), seed)); }

  void validate() const {
    if (location == PerturbLocation::kGlobalAndLocal && !is_viscot(paradigm)) {
      throw ConfigError("global_and_local applies only to Visual-CoT paradigms");
    }
    if (location == PerturbLocation::kGlobalAndLocal && !perturbation) {
      throw ConfigError("the clean condition has no perturb location");
    }
    if (perturbation && (perturbation->severity < 1 || perturbation->severity > 5)) {
      throw ConfigError("severity must be in 1..5");
    }
  }
};

/// Per paradigm: the clean condition, then every perturbation x severity
/// (x location; global_and_local only for Visual-CoT paradigms).
inline std::vector<Condition> build_conditions(const std::vector<Paradigm>& paradigms,
                                               const std::vector<std::string>& perturbations,
                                               const std::vector<int>& severities,
                                               const std::vector<PerturbLocation>& locations,
                                               std::uint64_t master_seed, bool include_clean = true) {
  std::vector<Condition> out;
  for (Paradigm p : paradigms) {
    if (include_clean) out.push_back({p, std::nullopt, PerturbLocation::kGlobalOnly, master_seed});
    for (const auto& name : perturbations) {
      const auto kind = Perturbation::parse_kind(name);
      if (!kind) throw ConfigError("unknown perturbation: " + name);
      for (int s : severities) {
        for (PerturbLocation loc : locations) {
          if (loc == PerturbLocation::kGlobalAndLocal && !is_viscot(p)) continue;
          Condition c{p, Perturbation{*kind, s}, loc, master_seed};
          c.validate();
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

/// 12 perturbations x 5 severities + clean, global-only, for each paradigm.
inline std::vector<Condition> default_conditions(const std::vector<Paradigm>& paradigms,
                                                 std::uint64_t master_seed) {
  return build_conditions(paradigms, all_perturbation_names(), {1, 2, 3, 4, 5},
                          {PerturbLocation::kGlobalOnly}, master_seed);
}

/// Seed for one (sample, condition); independent of processing order.
inline std::uint64_t derive_seed(std::uint64_t master_seed, const std::string& sample_id,
                                 const std::string& condition_key) {
  return mix_seed(mix_seed(master_seed, fnv1a64(sample_id)), fnv1a64(condition_key));
}

// ---------------------------------------------------------------------------
// Dataset

struct VqaSample {
  std::string id;
  std::string question;
  std::filesystem::path image_path;
  std::string ground_truth;
  std::optional<BBox> gt_bbox;
};

inline std::optional<BBox> bbox_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array() || j.size() != 4) throw ValidationError("bbox must be [x1, y1, x2, y2]");
  for (const auto& v : j) {
    if (!v.is_number()) throw ValidationError("bbox entries must be numbers");
  }
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw ValidationError("bbox has x1 > x2 or y1 > y2");
  return b;
}

inline OrderedJson bbox_to_json(const std::optional<BBox>& b) {
  if (!b) return nullptr;
  return OrderedJson::array({b->x1, b->y1, b->x2, b->y2});
}

/// One JSON object per line: {"id","question","image","ground_truth","gt_bbox"?}.
/// Image paths are resolved against `image_root`. Blank lines are skipped.
inline std::vector<VqaSample> load_dataset(const std::filesystem::path& path,
                                           const std::filesystem::path& image_root) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<VqaSample> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(lineno, "expected a JSON object");
    VqaSample s;
    try {
      for (const char* field : {"id", "question", "image", "ground_truth"}) {
        if (!j.contains(field) || !j[field].is_string()) {
          throw ParseError(lineno, std::string("missing or non-string field '") + field + "'");
        }
      }
      s.id = j["id"].get<std::string>();
      s.question = j["question"].get<std::string>();
      s.image_path = image_root / j["image"].get<std::string>();
      s.ground_truth = j["ground_truth"].get<std::string>();
      if (j.contains("gt_bbox")) s.gt_bbox = bbox_from_json(j["gt_bbox"]);
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
    if (!seen.insert(s.id).second) {
      throw ValidationError(fmt::format("line {}: duplicate sample id '{}'", lineno, s.id));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Records

struct EvalRecord {
  std::string dataset;
  std::string sample_id;
  std::string paradigm;
  std::string perturbation = "none";
  std::string perturbation_family = "none";  ///< none | corruption | attack
  std::optional<int> severity;
  std::string perturb_location = "global_only";
  std::uint64_t master_seed = 0;
  std::uint64_t seed = 0;  ///< derived per (sample, condition)
  std::string condition_key;
  std::string condition_hash;
  std::string raw_answer;
  std::optional<bool> judged_correct;
  std::optional<BBox> pred_bbox;
  std::optional<BBox> gt_bbox;
  std::optional<double> iou;
  bool bbox_parse_miss = false;
  int n_ground_patches = 0;
  bool grounder_failed = false;
  std::string judge_version;
  std::optional<std::string> judge_error;
  std::optional<std::string> error;
  std::int64_t wall_time_ms = 0;

  OrderedJson to_json() const {
    OrderedJson j;
    j["dataset"] = dataset;
    j["sample_id"] = sample_id;
    j["paradigm"] = paradigm;
    j["perturbation"] = perturbation;
    j["perturbation_family"] = perturbation_family;
    j["severity"] = severity ? OrderedJson(*severity) : OrderedJson(nullptr);
    j["perturb_location"] = perturb_location;
    j["master_seed"] = master_seed;
    j["seed"] = seed;
    j["condition_key"] = condition_key;
    j["condition_hash"] = condition_hash;
    j["raw_answer"] = raw_answer;
    j["judged_correct"] = judged_correct ? OrderedJson(*judged_correct) : OrderedJson(nullptr);
    j["pred_bbox"] = bbox_to_json(pred_bbox);
    j["gt_bbox"] = bbox_to_json(gt_bbox);
    j["iou"] = iou ? OrderedJson(*iou) : OrderedJson(nullptr);
    j["bbox_parse_miss"] = bbox_parse_miss;
    j["n_ground_patches"] = n_ground_patches;
    j["grounder_failed"] = grounder_failed;
    j["judge_version"] = judge_version;
    j["judge_error"] = judge_error ? OrderedJson(*judge_error) : OrderedJson(nullptr);
    j["error"] = error ? OrderedJson(*error) : OrderedJson(nullptr);
    j["wall_time_ms"] = wall_time_ms;
    return j;
  }

  std::string to_line() const { return to_json().dump() + "\n"; }

  static EvalRecord from_json(const Json& j) {
    EvalRecord r;
    auto opt_str = [&](const char* k) -> std::optional<std::string> {
      if (!j.contains(k) || j[k].is_null()) return std::nullopt;
      return j[k].get<std::string>();
    };
    r.dataset = j.at("dataset").get<std::string>();
    r.sample_id = j.at("sample_id").get<std::string>();
    r.paradigm = j.at("paradigm").get<std::string>();
    r.perturbation = j.value("perturbation", std::string("none"));
    r.perturbation_family = j.value("perturbation_family", std::string("none"));
    if (j.contains("severity") && !j["severity"].is_null()) r.severity = j["severity"].get<int>();
    r.perturb_location = j.value("perturb_location", std::string("global_only"));
    r.master_seed = j.value("master_seed", std::uint64_t{0});
    r.seed = j.value("seed", std::uint64_t{0});
    r.condition_key = j.value("condition_key", std::string());
    r.condition_hash = j.at("condition_hash").get<std::string>();
    r.raw_answer = j.value("raw_answer", std::string());
    if (j.contains("judged_correct") && !j["judged_correct"].is_null()) {
      r.judged_correct = j["judged_correct"].get<bool>();
    }
    if (j.contains("pred_bbox")) r.pred_bbox = bbox_from_json(j["pred_bbox"]);
    if (j.contains("gt_bbox")) r.gt_bbox = bbox_from_json(j["gt_bbox"]);
    if (j.contains("iou") && !j["iou"].is_null()) r.iou = j["iou"].get<double>();
    r.bbox_parse_miss = j.value("bbox_parse_miss", false);
    r.n_ground_patches = j.value("n_ground_patches", 0);
    r.grounder_failed = j.value("grounder_failed", false);
    r.judge_version = j.value("judge_version", std::string());
    r.judge_error = opt_str("judge_error");
    r.error = opt_str("error");
    r.wall_time_ms = j.value("wall_time_ms", std::int64_t{0});
    return r;
  }
};

/// Reads every complete line of a results file. A trailing line without a
/// newline is ignored (interrupted write). Throws ParseError on bad lines.
inline std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open results " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  std::vector<EvalRecord> out;
  std::size_t pos = 0;
  std::size_t lineno = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;
    ++lineno;
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      out.push_back(EvalRecord::from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw ParseError(lineno, std::string("bad result record: ") + e.what());
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Services and single-sample pipelines

struct Services {
  std::shared_ptr<ModelClient> model;
  std::shared_ptr<Judge> judge = std::make_shared<ExactMatchJudge>();
  std::shared_ptr<Grounder> grounder;  ///< required for viscot_grounded
  std::shared_ptr<const EncoderModel> encoder = std::make_shared<ToyEncoder>();
  double grounding_threshold = 0.4;
  AttackOptions attack_options;
  /// Report 1 ms per record instead of measuring, so result files are
  /// byte-reproducible.
  bool fixed_timing = false;
};

/// Identifies the sample/condition a pipeline is working on.
struct SampleRun {
  std::string dataset;
  const VqaSample& sample;
  const Condition& condition;
  std::uint64_t seed;  ///< derive_seed(master, sample.id, condition.key())
};

/// Applies the condition's perturbation, or returns the image unchanged.
inline Image perturb(const Image& img, const Condition& cond, std::uint64_t seed,
                     const Services& services) {
  if (!cond.perturbation) return img;
  Rng rng(seed);
  const auto& p = *cond.perturbation;
  if (const auto* c = std::get_if<CorruptionKind>(&p.kind)) {
    return apply_corruption(img, *c, p.severity, rng);
  }
  const auto kind = std::get<AttackKind>(p.kind);
  return apply_attack(img, *services.encoder, kind, p.severity, rng, services.attack_options).image;
}

namespace detail {

class Stopwatch {
 public:
  explicit Stopwatch(bool fixed) : fixed_(fixed), start_(std::chrono::steady_clock::now()) {}
  std::int64_t elapsed_ms() const {
    if (fixed_) return 1;
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                        std::chrono::steady_clock::now() - start_).count();
    return std::max<std::int64_t>(1, (us + 999) / 1000);
  }

 private:
  bool fixed_;
  std::chrono::steady_clock::time_point start_;
};

inline EvalRecord blank_record(const SampleRun& run, const Services& services) {
  EvalRecord r;
  r.dataset = run.dataset;
  r.sample_id = run.sample.id;
  r.paradigm = std::string(to_string(run.condition.paradigm));
  r.perturbation = run.condition.perturbation_name();
  r.perturbation_family = !run.condition.perturbation ? "none"
                          : run.condition.perturbation->is_attack() ? "attack"
                                                                     : "corruption";
  r.severity = run.condition.severity();
  r.perturb_location = std::string(to_string(run.condition.location));
  r.master_seed = run.condition.seed;
  r.seed = run.seed;
  r.condition_key = run.condition.key();
  r.condition_hash = run.condition.hash();
  r.gt_bbox = run.sample.gt_bbox;
  r.judge_version = services.judge->version();
  return r;
}

inline RequestContext context_of(const SampleRun& run) {
  return {run.sample.id, run.condition.key(),
          run.condition.perturbation ? run.condition.perturbation_name() : std::string(),
          run.condition.severity().value_or(0)};
}

inline void judge_into(EvalRecord& r, const SampleRun& run, Services& services) {
  try {
    r.judged_correct = services.judge->judge(r.raw_answer, run.sample.ground_truth, run.sample.question);
  } catch (const JudgeError& e) {
    r.judge_error = e.what();
  } catch (const TransportError& e) {
    r.judge_error = std::string("transport: ") + e.what();
  } catch (const EndpointError& e) {
    r.judge_error = std::string("endpoint: ") + e.what();
  }
}

inline std::string describe_error(const std::exception& e) {
  if (dynamic_cast<const TransportError*>(&e)) return std::string("transport: ") + e.what();
  if (dynamic_cast<const EndpointError*>(&e)) return std::string("endpoint: ") + e.what();
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) {
    return std::string("io: ") + e.what();
  }
  return std::string("error: ") + e.what();
}

/// Turn 1 of Visual-CoT: predicted box and its crop. A missing or unusable
/// box falls back to the full image.
struct BoxTurn {
  BBox box;
  bool parse_miss = false;
  Image patch;
};

inline BoxTurn predict_and_crop(const SampleRun& run, const Image& img, Services& services) {
  ModelRequest req{run.sample.question, {img}, ModelMode::kPredictBbox, context_of(run)};
  const ModelResponse resp = services.model->query(req);
  if (resp.parsed_bbox) {
    try {
      return {*resp.parsed_bbox, false, crop(img, *resp.parsed_bbox)};
    } catch (const EmptyRegionError&) {
    } catch (const ValidationError&) {
    }
  }
  const BBox full = BBox::full(img);
  return {full, true, img};
}

inline Image maybe_perturb_patch(const Image& patch, const SampleRun& run, std::uint64_t salt,
                                 const Services& services) {
  if (run.condition.location != PerturbLocation::kGlobalAndLocal) return patch;
  return perturb(patch, run.condition, mix_seed(run.seed, salt), services);
}

}  // namespace detail

/// Single-turn: image + question -> answer.
inline EvalRecord run_standard(const SampleRun& run, const Image& img, Services& services) {
  detail::Stopwatch watch(services.fixed_timing);
  EvalRecord r = detail::blank_record(run, services);
  try {
    ModelRequest req{run.sample.question, {img}, ModelMode::kDirectAnswer, detail::context_of(run)};
    r.raw_answer = services.model->query(req).text;
    detail::judge_into(r, run, services);
  } catch (const Error& e) {
    r.error = detail::describe_error(e);
  }
  r.wall_time_ms = watch.elapsed_ms();
  return r;
}

namespace detail {

inline EvalRecord run_viscot_impl(const SampleRun& run, const Image& img, Services& services,
                                  bool grounded) {
  Stopwatch watch(services.fixed_timing);
  EvalRecord r = blank_record(run, services);
  try {
    BoxTurn turn1 = predict_and_crop(run, img, services);
    r.pred_bbox = turn1.box;
    r.bbox_parse_miss = turn1.parse_miss;
    if (r.pred_bbox && run.sample.gt_bbox) r.iou = iou(*r.pred_bbox, *run.sample.gt_bbox);

    std::vector<Image> images{img, maybe_perturb_patch(turn1.patch, run, 1, services)};
    if (grounded) {
      std::vector<RegionProposal> proposals;
      try {
        if (!services.grounder) throw TransportError("no grounder configured");
        proposals = propose_regions(*services.grounder, img, run.sample.question,
                                    services.grounding_threshold);
      } catch (const TransportError&) {
        r.grounder_failed = true;
      } catch (const EndpointError&) {
        r.grounder_failed = true;
      }
      std::uint64_t salt = 2;
      for (const auto& p : proposals) {
        try {
          images.push_back(maybe_perturb_patch(crop(img, p.box), run, salt++, services));
          ++r.n_ground_patches;
        } catch (const EmptyRegionError&) {
        }
      }
    }
    ModelRequest req{run.sample.question, std::move(images), ModelMode::kDirectAnswer, context_of(run)};
    r.raw_answer = services.model->query(req).text;
    judge_into(r, run, services);
  } catch (const Error& e) {
    r.error = describe_error(e);
  }
  r.wall_time_ms = watch.elapsed_ms();
  return r;
}

}  // namespace detail

/// Two turns: predict a box, crop it (re-perturbed under global_and_local),
/// then answer from [image, patch]. IoU is logged when a gt box exists.
inline EvalRecord run_viscot(const SampleRun& run, const Image& img, Services& services) {
  return detail::run_viscot_impl(run, img, services, false);
}

/// Visual-CoT plus grounded patches: every proposal scoring at least the
/// threshold is cropped and appended after the predicted patch, in
/// descending score order. A failing grounder degrades to run_viscot.
inline EvalRecord run_viscot_grounded(const SampleRun& run, const Image& img, Services& services) {
  return detail::run_viscot_impl(run, img, services, true);
}

/// Loads the sample image, applies the condition and runs its paradigm.
/// Failures are captured in the record.
inline EvalRecord evaluate_sample(const std::string& dataset, const VqaSample& sample,
                                  const Condition& cond, Services& services) {
  const SampleRun run{dataset, sample, cond, derive_seed(cond.seed, sample.id, cond.key())};
  Image img = Image::filled(1, 1, 0.0);
  try {
    img = perturb(load_image(sample.image_path), cond, run.seed, services);
  } catch (const Error& e) {
    EvalRecord r = detail::blank_record(run, services);
    r.error = detail::describe_error(e);
    r.wall_time_ms = 1;
    return r;
  }
  switch (cond.paradigm) {
    case Paradigm::kStandard: return run_standard(run, img, services);
    case Paradigm::kViscot: return run_viscot(run, img, services);
    case Paradigm::kViscotGrounded: return run_viscot_grounded(run, img, services);
  }
  throw ConfigError("unknown paradigm");
}

// ---------------------------------------------------------------------------
// Sweep

struct ConditionSummary {
  std::string paradigm;
  std::string perturbation;
  std::optional<int> severity;
  std::string perturb_location;
  std::size_t n_records = 0;
  std::size_t n_judged = 0;
  std::size_t n_correct = 0;
  std::optional<double> accuracy;
  std::optional<double> pdr;
};

struct SweepSummary {
  std::size_t n_written = 0;
  std::size_t n_skipped = 0;
  std::size_t n_errors = 0;     ///< records with a client/IO error tag
  std::size_t n_unjudged = 0;   ///< judge produced no verdict
  std::vector<ConditionSummary> conditions;

  bool ok() const noexcept { return n_errors == 0; }
};

struct SweepOptions {
  bool resume = false;
  int concurrency = 4;
};

namespace detail {

inline std::tuple<std::string, std::string, std::string> record_key(const std::string& dataset,
                                                                    const std::string& sample_id,
                                                                    const std::string& cond_hash) {
  return {dataset, sample_id, cond_hash};
}

/// Truncates a trailing partial line so appends start on a fresh line.
inline void drop_partial_tail(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  in.close();
  if (content.empty() || content.back() == '\n') return;
  const auto nl = content.rfind('\n');
  std::filesystem::resize_file(path, nl == std::string::npos ? 0 : nl + 1);
}

}  // namespace detail

/// Per-condition accuracy and PDR against the clean condition of the same
/// paradigm.
inline std::vector<ConditionSummary> summarize(const std::vector<EvalRecord>& records,
                                               const std::vector<Condition>& conditions) {
  std::map<std::string, ConditionSummary> by_key;
  for (const auto& c : conditions) {
    ConditionSummary s;
    s.paradigm = std::string(to_string(c.paradigm));
    s.perturbation = c.perturbation_name();
    s.severity = c.severity();
    s.perturb_location = std::string(to_string(c.location));
    by_key.emplace(c.hash(), s);
  }
  for (const auto& r : records) {
    auto it = by_key.find(r.condition_hash);
    if (it == by_key.end()) continue;
    ++it->second.n_records;
    if (r.judged_correct) {
      ++it->second.n_judged;
      it->second.n_correct += *r.judged_correct ? 1 : 0;
    }
  }
  std::vector<ConditionSummary> out;
  std::map<std::string, double> clean_acc;
  for (const auto& c : conditions) {
    auto& s = by_key.at(c.hash());
    if (s.n_judged > 0) s.accuracy = static_cast<double>(s.n_correct) / static_cast<double>(s.n_judged);
    if (!c.perturbation && s.accuracy) clean_acc[s.paradigm] = *s.accuracy;
  }
  for (const auto& c : conditions) {
    auto s = by_key.at(c.hash());
    if (c.perturbation && s.accuracy) {
      auto it = clean_acc.find(s.paradigm);
      if (it != clean_acc.end() && it->second > 0.0) s.pdr = pdr(it->second, *s.accuracy);
    }
    out.push_back(s);
  }
  return out;
}

/// Runs every (condition x sample) not already in `out_path`, appending one
/// JSON line per record in a fixed order (conditions outer, samples inner).
/// Workers evaluate in parallel; a single writer appends in task order.
inline SweepSummary run_sweep(const std::string& dataset, const std::vector<VqaSample>& samples,
                              const std::vector<Condition>& conditions, Services& services,
                              const std::filesystem::path& out_path, const SweepOptions& options = {}) {
  for (const auto& c : conditions) c.validate();
  if (!services.model) throw ConfigError("run_sweep needs a model client");

  std::set<std::tuple<std::string, std::string, std::string>> done;
  if (options.resume && std::filesystem::exists(out_path)) {
    detail::drop_partial_tail(out_path);
    for (const auto& r : read_records(out_path)) {
      done.insert(detail::record_key(r.dataset, r.sample_id, r.condition_hash));
    }
  }
  std::ofstream out(out_path, options.resume ? std::ios::binary | std::ios::app
                                             : std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open results file " + out_path.string());

  struct Task {
    const VqaSample* sample;
    const Condition* condition;
  };
  std::vector<Task> tasks;
  SweepSummary summary;
  for (const auto& c : conditions) {
    for (const auto& s : samples) {
      if (done.count(detail::record_key(dataset, s.id, c.hash()))) {
        ++summary.n_skipped;
        continue;
      }
      tasks.push_back({&s, &c});
    }
  }

  std::vector<std::optional<EvalRecord>> slots(tasks.size());
  std::mutex mutex;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      EvalRecord rec;
      try {
        rec = evaluate_sample(dataset, *tasks[i].sample, *tasks[i].condition, services);
      } catch (const std::exception& e) {
        const Condition& c = *tasks[i].condition;
        const SampleRun run{dataset, *tasks[i].sample, c, derive_seed(c.seed, tasks[i].sample->id, c.key())};
        rec = detail::blank_record(run, services);
        rec.error = std::string("internal: ") + e.what();
        rec.wall_time_ms = 1;
      }
      {
        std::lock_guard<std::mutex> lock(mutex);
        slots[i] = std::move(rec);
      }
      ready.notify_all();
    }
  };
  const int n_workers = std::max(1, std::min<int>(options.concurrency, static_cast<int>(tasks.size())));
  std::vector<std::jthread> pool;
  if (!tasks.empty()) {
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    EvalRecord rec;
    {
      std::unique_lock<std::mutex> lock(mutex);
      ready.wait(lock, [&] { return slots[i].has_value(); });
      rec = std::move(*slots[i]);
      slots[i].reset();
    }
    out << rec.to_line();
    out.flush();
    if (!out) throw IoError("error writing " + out_path.string());
    ++summary.n_written;
    if (rec.error) ++summary.n_errors;
    if (rec.judge_error) ++summary.n_unjudged;
  }
  pool.clear();
  out.close();

  std::vector<EvalRecord> all;
  for (auto& r : read_records(out_path)) {
    if (r.dataset == dataset) all.push_back(std::move(r));
  }
  summary.conditions = summarize(all, conditions);
  return summary;
}

}  // namespace vcrobust
