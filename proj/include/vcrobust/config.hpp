#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcrobust/clients.hpp"
#include "vcrobust/errors.hpp"
#include "vcrobust/harness.hpp"

namespace vcrobust {

struct EndpointConfig {
  Endpoint endpoint;
  WireStyle style = WireStyle::kNative;
  std::string model_name;
};

enum class JudgeKind { kExact, kRemote };

/// Evaluation run settings, read from a JSON file. Relative paths resolve
/// against the directory holding the file.
struct RunConfig {
  std::filesystem::path dataset;
  std::string dataset_name;
  std::filesystem::path image_root;
  std::vector<Paradigm> paradigms{Paradigm::kStandard, Paradigm::kViscot, Paradigm::kViscotGrounded};
  std::vector<std::string> perturbations = all_perturbation_names();
  std::vector<int> severities{1, 2, 3, 4, 5};
  std::vector<PerturbLocation> locations{PerturbLocation::kGlobalOnly};
  std::uint64_t master_seed = 0;
  bool include_clean = true;
  EndpointConfig model;
  EndpointConfig judge_endpoint;
  EndpointConfig grounder;
  JudgeKind judge = JudgeKind::kExact;
  double grounding_threshold = 0.4;
  int concurrency = 4;
  std::filesystem::path output_dir;
  bool fixed_timing = false;

  std::filesystem::path results_path() const { return output_dir / "results.jsonl"; }

  std::vector<Condition> conditions() const {
    return build_conditions(paradigms, perturbations, severities, locations, master_seed, include_clean);
  }

  /// Throws ConfigError when a referenced path is missing or a value is out
  /// of range.
  void validate() const {
    if (!std::filesystem::is_regular_file(dataset)) {
      throw ConfigError("dataset file not found: " + dataset.string());
    }
    if (!std::filesystem::is_directory(image_root)) {
      throw ConfigError("image root not found: " + image_root.string());
    }
    if (paradigms.empty()) throw ConfigError("no paradigms selected");
    for (int s : severities) {
      if (s < 1 || s > 5) throw ConfigError("severity must be in 1..5, got " + std::to_string(s));
    }
    for (const auto& p : perturbations) {
      if (!Perturbation::parse_kind(p)) throw ConfigError("unknown perturbation: " + p);
    }
    if (!(grounding_threshold >= 0.0 && grounding_threshold <= 1.0)) {
      throw ConfigError("grounding_threshold must be in [0, 1]");
    }
    if (concurrency < 1) throw ConfigError("concurrency must be at least 1");
    if (output_dir.empty()) throw ConfigError("output_dir is required");
  }
};

namespace detail {

inline EndpointConfig endpoint_config(const Json& j, const char* url_env, const char* token_env) {
  EndpointConfig e;
  e.endpoint = endpoint_from_env(url_env, token_env);
  if (j.is_null()) return e;
  if (!j.is_object()) throw ConfigError("endpoint entries must be objects");
  if (j.contains("url")) e.endpoint.url = j["url"].get<std::string>();
  if (j.contains("token")) e.endpoint.token = j["token"].get<std::string>();
  const std::string style = j.value("style", std::string("native"));
  if (style == "native") {
    e.style = WireStyle::kNative;
  } else if (style == "chat") {
    e.style = WireStyle::kChatCompletions;
  } else {
    throw ConfigError("endpoint style must be native or chat");
  }
  e.model_name = j.value("model", std::string());
  return e;
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir) {
  static const std::set<std::string> known{
      "dataset",       "dataset_name", "image_root",  "paradigms",           "perturbations",
      "severities",    "perturb_locations", "master_seed", "include_clean", "endpoints",
      "judge",         "grounding_threshold", "concurrency", "output_dir", "fixed_timing"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key: " + k);
  }
  auto path_of = [&](const char* key) -> std::filesystem::path {
    if (!j.contains(key)) throw ConfigError(std::string("missing config key: ") + key);
    std::filesystem::path p = j[key].get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };

  RunConfig c;
  try {
    c.dataset = path_of("dataset");
    c.image_root = j.contains("image_root") ? path_of("image_root") : c.dataset.parent_path();
    c.output_dir = path_of("output_dir");
    c.dataset_name = j.value("dataset_name", c.dataset.stem().string());
    if (j.contains("paradigms")) {
      c.paradigms.clear();
      for (const auto& p : j["paradigms"]) {
        const auto v = parse_paradigm(p.get<std::string>());
        if (!v) throw ConfigError("unknown paradigm: " + p.get<std::string>());
        c.paradigms.push_back(*v);
      }
    }
    if (j.contains("perturbations")) c.perturbations = j["perturbations"].get<std::vector<std::string>>();
    if (j.contains("severities")) c.severities = j["severities"].get<std::vector<int>>();
    if (j.contains("perturb_locations")) {
      c.locations.clear();
      for (const auto& l : j["perturb_locations"]) {
        const auto v = parse_location(l.get<std::string>());
        if (!v) throw ConfigError("unknown perturb location: " + l.get<std::string>());
        c.locations.push_back(*v);
      }
    }
    c.master_seed = j.value("master_seed", std::uint64_t{0});
    c.include_clean = j.value("include_clean", true);
    const Json endpoints = j.value("endpoints", Json::object());
    c.model = detail::endpoint_config(endpoints.value("model", Json()), "MODEL_ENDPOINT", "MODEL_TOKEN");
    c.judge_endpoint = detail::endpoint_config(endpoints.value("judge", Json()), "JUDGE_ENDPOINT", "JUDGE_TOKEN");
    c.grounder = detail::endpoint_config(endpoints.value("grounder", Json()), "GROUNDER_ENDPOINT", nullptr);
    const std::string judge = j.value("judge", std::string("exact"));
    if (judge == "exact") {
      c.judge = JudgeKind::kExact;
    } else if (judge == "remote") {
      c.judge = JudgeKind::kRemote;
    } else {
      throw ConfigError("judge must be exact or remote");
    }
    c.grounding_threshold = j.value("grounding_threshold", 0.4);
    c.concurrency = j.value("concurrency", 4);
    c.fixed_timing = j.value("fixed_timing", false);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(j, path.parent_path());
}

}  // namespace vcrobust
