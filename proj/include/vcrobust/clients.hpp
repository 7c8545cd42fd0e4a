#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "vcrobust/errors.hpp"
#include "vcrobust/image.hpp"
#include "vcrobust/image_io.hpp"
#include "vcrobust/rng.hpp"

namespace vcrobust {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Base64 (RFC 4648, padded)

inline std::string base64_encode(std::span<const unsigned char> bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t n = bytes[i] << 16;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<unsigned char> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = value(c);
    if (v < 0) throw FormatError("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

inline std::string image_to_base64_png(const Image& img) { return base64_encode(encode_png(img)); }

// ---------------------------------------------------------------------------
// Requests and responses

enum class ModelMode { kDirectAnswer, kPredictBbox };

constexpr std::string_view to_string(ModelMode m) {
  return m == ModelMode::kDirectAnswer ? "direct_answer" : "predict_bbox";
}

/// Routing metadata about the sample being evaluated. Never serialized to a
/// remote endpoint; scripted doubles use it to decide their replies.
struct RequestContext {
  std::string sample_id;
  std::string condition_key;
  std::string perturbation;  ///< "" for the clean condition
  int severity = 0;
};

struct ModelRequest {
  std::string question;
  std::vector<Image> images;  ///< 1 = standard; original + patches for Visual-CoT
  ModelMode mode = ModelMode::kDirectAnswer;
  RequestContext context;

  void validate() const {
    if (images.empty()) throw ValidationError("model request carries no image");
    if (mode == ModelMode::kPredictBbox && images.size() != 1) {
      throw ValidationError("predict_bbox requests carry exactly one image");
    }
  }
};

struct ModelResponse {
  std::string text;
  std::optional<BBox> parsed_bbox;
};

/// Parses the first "[x1, y1, x2, y2]" group in `text`. If every value is
/// <= 1.5 the box is read as normalized and scaled by (w, h, w, h).
/// Reversed corners are reordered.
inline std::optional<BBox> parse_bbox(std::string_view text, int image_height, int image_width) {
  static const std::regex kBox(
      R"(\[\s*([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*,\s*([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*,\s*)"
      R"(([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*,\s*([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*\])");
  std::cmatch m;
  if (!std::regex_search(text.data(), text.data() + text.size(), m, kBox)) return std::nullopt;
  double v[4];
  for (int i = 0; i < 4; ++i) v[i] = std::strtod(m[i + 1].str().c_str(), nullptr);
  const bool normalized = std::all_of(v, v + 4, [](double x) { return x <= 1.5; });
  if (normalized) {
    v[0] *= image_width;
    v[1] *= image_height;
    v[2] *= image_width;
    v[3] *= image_height;
  }
  return BBox{std::min(v[0], v[2]), std::min(v[1], v[3]), std::max(v[0], v[2]),
              std::max(v[1], v[3])};
}

/// Attaches the bbox parse for predict_bbox requests.
inline ModelResponse make_response(const ModelRequest& req, std::string text) {
  ModelResponse r{std::move(text), std::nullopt};
  if (req.mode == ModelMode::kPredictBbox) {
    r.parsed_bbox = parse_bbox(r.text, req.images.front().height(), req.images.front().width());
  }
  return r;
}

struct RegionProposal {
  BBox box;
  double score = 0.0;
  std::string phrase;
};

// ---------------------------------------------------------------------------
// Transport, retries, in-flight limit

struct HttpResponse {
  int status = 0;
  std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

/// Blocking JSON POST. Throws TransportError on network failure or timeout.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& url, const std::string& body,
                            const Headers& headers, std::chrono::milliseconds timeout) = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{200};
  double multiplier = 2.0;
};

/// Runs `fn`, retrying TransportError with exponential backoff up to
/// policy.max_attempts (capped at 3) attempts in total. Other errors
/// propagate immediately.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  const int attempts = std::clamp(policy.max_attempts, 1, 3);
  auto delay = std::chrono::duration<double, std::milli>(policy.base_delay);
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (attempt >= attempts) throw;
    }
    std::this_thread::sleep_for(delay);
    delay *= policy.multiplier;
  }
}

/// Bounds the number of concurrent requests sharing one limiter.
class InflightLimiter {
 public:
  explicit InflightLimiter(int limit = 4) : sem_(std::max(1, limit)) {}

  template <typename Fn>
  auto run(Fn&& fn) -> decltype(fn()) {
    sem_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{sem_};
    return fn();
  }

 private:
  std::counting_semaphore<> sem_;
};

struct Endpoint {
  std::string url;
  std::string token;

  bool empty() const noexcept { return url.empty(); }
};

inline Endpoint endpoint_from_env(const char* url_var, const char* token_var = nullptr) {
  Endpoint e;
  if (const char* u = std::getenv(url_var)) e.url = u;
  if (token_var != nullptr) {
    if (const char* t = std::getenv(token_var)) e.token = t;
  }
  return e;
}

struct ClientSettings {
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry{};
  std::shared_ptr<InflightLimiter> limiter = std::make_shared<InflightLimiter>(4);
};

namespace detail {

inline Headers auth_headers(const Endpoint& e) {
  Headers h;
  if (!e.token.empty()) h.emplace_back("Authorization", "Bearer " + e.token);
  return h;
}

inline Json post_json(HttpTransport& transport, const Endpoint& endpoint, const Json& body,
                      const ClientSettings& settings) {
  const std::string payload = body.dump();
  const HttpResponse resp = settings.limiter->run([&] {
    return with_retries(settings.retry, [&] {
      return transport.post(endpoint.url, payload, auth_headers(endpoint), settings.timeout);
    });
  });
  if (resp.status >= 400) {
    throw EndpointError(resp.status, fmt::format("{} answered HTTP {}", endpoint.url, resp.status));
  }
  try {
    return Json::parse(resp.body);
  } catch (const Json::exception& e) {
    throw EndpointError(resp.status, std::string("response is not JSON: ") + e.what());
  }
}

inline std::string chat_content(const Json& resp) {
  try {
    return resp.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const Json::exception& e) {
    throw EndpointError(200, std::string("malformed chat completion: ") + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Answer-generating model

class ModelClient {
 public:
  virtual ~ModelClient() = default;
  /// Throws TransportError / EndpointError on failure. A bbox that cannot be
  /// parsed is not an error: parsed_bbox stays empty.
  virtual ModelResponse query(const ModelRequest& req) = 0;
};

enum class WireStyle { kNative, kChatCompletions };

/// Instruction appended in chat style for the box-prediction turn.
inline constexpr std::string_view kBboxInstruction =
    "Please provide the bounding box coordinate of the region that can help you answer the "
    "question better.";

/// Native:  POST {question, images:[base64 PNG], mode} -> {text}.
/// Chat:    POST {model, messages:[{role:user, content:[text, image_url...]}]}
///          -> {choices:[{message:{content}}]}.
class RemoteModelClient final : public ModelClient {
 public:
  RemoteModelClient(Endpoint endpoint, std::shared_ptr<HttpTransport> transport,
                    ClientSettings settings = {}, WireStyle style = WireStyle::kNative,
                    std::string model_name = "")
      : endpoint_(std::move(endpoint)),
        transport_(std::move(transport)),
        settings_(std::move(settings)),
        style_(style),
        model_name_(std::move(model_name)) {}

  static Json request_body(const ModelRequest& req, WireStyle style, const std::string& model_name) {
    if (style == WireStyle::kNative) {
      Json images = Json::array();
      for (const auto& img : req.images) images.push_back(image_to_base64_png(img));
      return {{"question", req.question}, {"images", images}, {"mode", std::string(to_string(req.mode))}};
    }
    std::string prompt = req.question;
    if (req.mode == ModelMode::kPredictBbox) prompt += "\n" + std::string(kBboxInstruction);
    Json content = Json::array();
    content.push_back({{"type", "text"}, {"text", prompt}});
    for (const auto& img : req.images) {
      content.push_back({{"type", "image_url"},
                         {"image_url", {{"url", "data:image/png;base64," + image_to_base64_png(img)}}}});
    }
    Json body = {{"messages", Json::array({{{"role", "user"}, {"content", content}}})}};
    if (!model_name.empty()) body["model"] = model_name;
    return body;
  }

  ModelResponse query(const ModelRequest& req) override {
    req.validate();
    const Json resp = detail::post_json(*transport_, endpoint_, request_body(req, style_, model_name_),
                                        settings_);
    std::string text;
    if (style_ == WireStyle::kNative) {
      if (!resp.contains("text") || !resp["text"].is_string()) {
        throw EndpointError(200, "model response lacks a text field");
      }
      text = resp["text"].get<std::string>();
    } else {
      text = detail::chat_content(resp);
    }
    return make_response(req, std::move(text));
  }

 private:
  Endpoint endpoint_;
  std::shared_ptr<HttpTransport> transport_;
  ClientSettings settings_;
  WireStyle style_;
  std::string model_name_;
};

// ---------------------------------------------------------------------------
// Judge

/// Lowercase, punctuation dropped, whitespace runs collapsed and trimmed.
inline std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
    } else if (std::ispunct(c)) {
      continue;
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(c));
    }
  }
  return out;
}

inline std::string hash_hex(std::string_view text) { return fmt::format("{:016x}", fnv1a64(text)); }

class Judge {
 public:
  virtual ~Judge() = default;
  /// Throws JudgeError when no verdict can be extracted.
  virtual bool judge(const std::string& prediction, const std::string& ground_truth,
                     const std::string& question) = 0;
  /// Stable identifier of the judging rule (template hash for LLM judges).
  virtual std::string version() const = 0;
};

class ExactMatchJudge final : public Judge {
 public:
  bool judge(const std::string& prediction, const std::string& ground_truth,
             const std::string& /*question*/) override {
    return normalize_answer(prediction) == normalize_answer(ground_truth);
  }
  std::string version() const override { return hash_hex("exact-match/normalized-v1"); }
};

inline constexpr std::string_view kJudgePromptTemplate =
    "You are grading an answer to a visual question.\n"
    "Question: {question}\n"
    "Reference answer: {ground_truth}\n"
    "Model answer: {prediction}\n"
    "Does the model answer match the reference answer, accounting for minor paraphrasing or "
    "synonym variations? Reply with exactly one word: YES or NO.";

inline std::string render_judge_prompt(const std::string& prediction, const std::string& ground_truth,
                                       const std::string& question) {
  std::string out(kJudgePromptTemplate);
  auto put = [&](std::string_view key, const std::string& value) {
    const auto pos = out.find(key);
    if (pos != std::string::npos) out.replace(pos, key.size(), value);
  };
  put("{question}", question);
  put("{ground_truth}", ground_truth);
  put("{prediction}", prediction);
  return out;
}

/// First word of the reply, case-insensitive, punctuation ignored.
inline bool parse_verdict(std::string_view reply) {
  const std::string norm = normalize_answer(reply);
  const std::string first = norm.substr(0, norm.find(' '));
  if (first == "yes") return true;
  if (first == "no") return false;
  throw JudgeError("judge reply is not YES/NO: " + std::string(reply.substr(0, 80)));
}

/// Chat-completions LLM judge.
class RemoteJudge final : public Judge {
 public:
  RemoteJudge(Endpoint endpoint, std::shared_ptr<HttpTransport> transport,
              ClientSettings settings = {}, std::string model_name = "gpt-4o")
      : endpoint_(std::move(endpoint)),
        transport_(std::move(transport)),
        settings_(std::move(settings)),
        model_name_(std::move(model_name)) {}

  bool judge(const std::string& prediction, const std::string& ground_truth,
             const std::string& question) override {
    const Json body = {
        {"model", model_name_},
        {"temperature", 0},
        {"messages", Json::array({{{"role", "user"},
                                   {"content", render_judge_prompt(prediction, ground_truth, question)}}})}};
    return parse_verdict(detail::chat_content(detail::post_json(*transport_, endpoint_, body, settings_)));
  }

  std::string version() const override { return hash_hex(kJudgePromptTemplate); }

 private:
  Endpoint endpoint_;
  std::shared_ptr<HttpTransport> transport_;
  ClientSettings settings_;
  std::string model_name_;
};

// ---------------------------------------------------------------------------
// Grounding region proposer

class Grounder {
 public:
  virtual ~Grounder() = default;
  /// All proposals the backend returns, unfiltered.
  virtual std::vector<RegionProposal> propose(const Image& img, const std::string& caption) = 0;
};

/// Wire: POST {image: base64 PNG, caption} -> {boxes:[[x1,y1,x2,y2]], scores, phrases},
/// pixel coordinates.
class RemoteGrounder final : public Grounder {
 public:
  RemoteGrounder(Endpoint endpoint, std::shared_ptr<HttpTransport> transport,
                 ClientSettings settings = {})
      : endpoint_(std::move(endpoint)), transport_(std::move(transport)), settings_(std::move(settings)) {}

  static std::vector<RegionProposal> parse_response(const Json& resp) {
    try {
      const auto& boxes = resp.at("boxes");
      const auto& scores = resp.at("scores");
      const Json phrases = resp.value("phrases", Json::array());
      if (boxes.size() != scores.size()) throw EndpointError(200, "grounder boxes/scores length mismatch");
      std::vector<RegionProposal> out;
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes.at(i);
        RegionProposal p;
        p.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        p.score = scores.at(i).get<double>();
        if (i < phrases.size()) p.phrase = phrases.at(i).get<std::string>();
        out.push_back(std::move(p));
      }
      return out;
    } catch (const Json::exception& e) {
      throw EndpointError(200, std::string("malformed grounder response: ") + e.what());
    }
  }

  std::vector<RegionProposal> propose(const Image& img, const std::string& caption) override {
    const Json body = {{"image", image_to_base64_png(img)}, {"caption", caption}};
    return parse_response(detail::post_json(*transport_, endpoint_, body, settings_));
  }

 private:
  Endpoint endpoint_;
  std::shared_ptr<HttpTransport> transport_;
  ClientSettings settings_;
};

/// Proposals with score >= threshold, descending by score (ties keep the
/// backend order). Invalid boxes are dropped.
inline std::vector<RegionProposal> propose_regions(Grounder& grounder, const Image& img,
                                                   const std::string& query_text, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw DomainError("grounding threshold must be in [0,1]");
  auto all = grounder.propose(img, query_text);
  std::vector<RegionProposal> kept;
  for (auto& p : all) {
    if (p.score >= threshold && p.box.valid()) kept.push_back(std::move(p));
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const RegionProposal& a, const RegionProposal& b) { return a.score > b.score; });
  return kept;
}

// ---------------------------------------------------------------------------
// Scripted in-process doubles

/// Deterministic model double driven by a JSON script:
///
///   answers            {sample_id: text}   correct reply per sample
///   default_answer     reply when a sample has no entry
///   wrong_answer       reply on a scripted failure
///   echo               if set, every direct_answer reply is this text
///   bbox               {sample_id: [x1,y1,x2,y2]}  box-turn reply
///   default_bbox       box when a sample has no entry (normalized ok)
///   bbox_miss          [sample_id]   box-turn reply without a box
///   failures           [{sample_id, perturbation, severity}]
///   fail_rate_per_severity   r: a perturbed sample fails when
///                      u(sample, perturbation) < r * severity
///   transport_errors   [sample_id]   every call throws TransportError
class ScriptedModel final : public ModelClient {
 public:
  explicit ScriptedModel(Json script = Json::object()) : script_(std::move(script)) {
    if (!script_.is_object()) throw ConfigError("mock model script must be a JSON object");
  }

  static double failure_draw(const std::string& sample_id, const std::string& perturbation) {
    const std::uint64_t h = mix_seed(fnv1a64(sample_id), fnv1a64(perturbation));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }

  ModelResponse query(const ModelRequest& req) override {
    req.validate();
    {
      std::lock_guard<std::mutex> lock(mutex_);
      log_.push_back({req.mode, req.images.size(), req.context});
    }
    const auto& ctx = req.context;
    if (contains(script_.value("transport_errors", Json::array()), ctx.sample_id)) {
      throw TransportError("scripted transport failure for " + ctx.sample_id);
    }
    if (req.mode == ModelMode::kPredictBbox) {
      if (contains(script_.value("bbox_miss", Json::array()), ctx.sample_id)) {
        return make_response(req, "I cannot tell where to look.");
      }
      Json box = script_.value("default_bbox", Json::array({0.25, 0.25, 0.75, 0.75}));
      if (script_.contains("bbox") && script_["bbox"].contains(ctx.sample_id)) {
        box = script_["bbox"][ctx.sample_id];
      }
      return make_response(req, fmt::format("[{}, {}, {}, {}]", box.at(0).get<double>(),
                                            box.at(1).get<double>(), box.at(2).get<double>(),
                                            box.at(3).get<double>()));
    }
    if (script_.contains("echo")) return make_response(req, script_["echo"].get<std::string>());
    if (fails(ctx)) return make_response(req, script_.value("wrong_answer", std::string("unknown")));
    std::string answer = script_.value("default_answer", std::string("unknown"));
    if (script_.contains("answers") && script_["answers"].contains(ctx.sample_id)) {
      answer = script_["answers"][ctx.sample_id].get<std::string>();
    }
    return make_response(req, answer);
  }

  struct Call {
    ModelMode mode;
    std::size_t n_images;
    RequestContext context;
  };

  std::vector<Call> calls() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return log_;
  }

 private:
  static bool contains(const Json& list, const std::string& id) {
    return std::any_of(list.begin(), list.end(), [&](const Json& v) { return v == id; });
  }

  bool fails(const RequestContext& ctx) const {
    if (ctx.perturbation.empty()) return false;
    for (const auto& f : script_.value("failures", Json::array())) {
      if (f.value("sample_id", "") == ctx.sample_id && f.value("perturbation", "") == ctx.perturbation &&
          f.value("severity", 0) == ctx.severity) {
        return true;
      }
    }
    const double rate = script_.value("fail_rate_per_severity", 0.0);
    return rate > 0.0 && failure_draw(ctx.sample_id, ctx.perturbation) < rate * ctx.severity;
  }

  Json script_;
  mutable std::mutex mutex_;
  std::vector<Call> log_;
};

/// Stands in for the LLM judge: replies with a fixed verdict text, or with
/// exact-match YES/NO when the verdict is "exact". Parsing goes through the
/// same path as RemoteJudge.
class ScriptedJudge final : public Judge {
 public:
  explicit ScriptedJudge(std::string verdict = "exact") : verdict_(std::move(verdict)) {}

  bool judge(const std::string& prediction, const std::string& ground_truth,
             const std::string& question) override {
    if (verdict_ == "exact") return ExactMatchJudge{}.judge(prediction, ground_truth, question);
    return parse_verdict(verdict_);
  }
  std::string version() const override { return hash_hex(kJudgePromptTemplate); }

 private:
  std::string verdict_;
};

/// Returns the same scripted proposals for every call, or fails every call.
///
/// Script: {"proposals": [{"box": [x1,y1,x2,y2], "score": s, "phrase": p}],
///          "fail": false}. Boxes with all values <= 1.5 are normalized.
class ScriptedGrounder final : public Grounder {
 public:
  explicit ScriptedGrounder(Json script = Json::object()) : script_(std::move(script)) {}

  std::vector<RegionProposal> propose(const Image& img, const std::string& /*caption*/) override {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      ++calls_;
    }
    if (script_.value("fail", false)) throw TransportError("scripted grounder failure");
    std::vector<RegionProposal> out;
    for (const auto& p : script_.value("proposals", Json::array())) {
      const auto& b = p.at("box");
      const std::string text = fmt::format("[{}, {}, {}, {}]", b.at(0).get<double>(), b.at(1).get<double>(),
                                           b.at(2).get<double>(), b.at(3).get<double>());
      RegionProposal r;
      r.box = *parse_bbox(text, img.height(), img.width());
      r.score = p.at("score").get<double>();
      r.phrase = p.value("phrase", std::string());
      out.push_back(std::move(r));
    }
    return out;
  }

  int calls() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return calls_;
  }

 private:
  Json script_;
  mutable std::mutex mutex_;
  int calls_ = 0;
};

}  // namespace vcrobust
