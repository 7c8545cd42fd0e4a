#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

#include "vcrobust/errors.hpp"
#include "vcrobust/image.hpp"
#include "vcrobust/image_io.hpp"
#include "vcrobust/rng.hpp"

namespace vcrobust {

struct SyntheticOptions {
  int n_samples = 10;
  int size = 32;
  std::uint64_t seed = 2024;
};

namespace detail {

struct NamedColor {
  const char* name;
  std::array<double, 3> rgb;
};

inline constexpr std::array<NamedColor, 6> kSyntheticColors = {{{"red", {0.85, 0.15, 0.15}},
                                                                {"green", {0.15, 0.75, 0.2}},
                                                                {"blue", {0.15, 0.25, 0.85}},
                                                                {"yellow", {0.9, 0.85, 0.1}},
                                                                {"purple", {0.6, 0.2, 0.7}},
                                                                {"orange", {0.95, 0.55, 0.1}}}};

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace detail

/// Writes a small "what color is the square" VQA set into `dir`: PNG images,
/// dataset.jsonl with ground-truth boxes, scripted mock files for the model,
/// judge and grounder, and a config.json running the full condition matrix
/// for all three paradigms. Output is a pure function of the options.
inline void write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticOptions& opts = {}) {
  using OJson = nlohmann::ordered_json;
  std::filesystem::create_directories(dir / "images");
  Rng rng(opts.seed);
  const int n = opts.size;

  std::ofstream dataset(dir / "dataset.jsonl", std::ios::trunc | std::ios::binary);
  if (!dataset) throw IoError("cannot write dataset in " + dir.string());
  OJson answers = OJson::object();
  OJson boxes = OJson::object();
  for (int s = 0; s < opts.n_samples; ++s) {
    const std::string id = fmt::format("s{:02d}", s);
    const auto& color = detail::kSyntheticColors[static_cast<std::size_t>(s) % detail::kSyntheticColors.size()];
    const int side = n / 4 + static_cast<int>(rng.uniform() * (n / 4));
    const int x1 = static_cast<int>(rng.uniform() * (n - side));
    const int y1 = static_cast<int>(rng.uniform() * (n - side));

    std::vector<double> px(static_cast<std::size_t>(n) * n * 3);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const bool inside = x >= x1 && x < x1 + side && y >= y1 && y < y1 + side;
        for (int c = 0; c < 3; ++c) {
          const double bg = 0.35 + 0.3 * (x + y) / (2.0 * n);
          px[(static_cast<std::size_t>(y) * n + x) * 3 + c] = inside ? color.rgb[c] : bg;
        }
      }
    }
    const std::string rel = "images/" + id + ".png";
    save_image(Image(n, n, px), dir / rel);

    const std::array<int, 4> gt{x1, y1, x1 + side, y1 + side};
    OJson rec = {{"id", id},
                 {"question", "What color is the square?"},
                 {"image", rel},
                 {"ground_truth", color.name},
                 {"gt_bbox", gt}};
    dataset << rec.dump() << '\n';
    answers[id] = color.name;
    // Predicted boxes are the ground truth shifted by one pixel, so IoU < 1.
    boxes[id] = {std::min(x1 + 1, n - 1), y1, std::min(x1 + side + 1, n), y1 + side};
  }

  OJson model = {{"answers", answers},
                 {"wrong_answer", "gray"},
                 {"bbox", boxes},
                 {"fail_rate_per_severity", 0.1}};
  if (opts.n_samples > 0) model["bbox_miss"] = {fmt::format("s{:02d}", opts.n_samples - 1)};
  detail::write_json(dir / "mock_model.json", model);
  detail::write_json(dir / "mock_judge.json", OJson{{"verdict", "exact"}});
  detail::write_json(dir / "mock_grounder.json",
                     OJson{{"proposals",
                            {{{"box", {0.1, 0.1, 0.6, 0.6}}, {"score", 0.9}, {"phrase", "square"}},
                             {{"box", {0.4, 0.4, 0.9, 0.9}}, {"score", 0.5}, {"phrase", "square"}},
                             {{"box", {0.0, 0.0, 0.3, 0.3}}, {"score", 0.3}, {"phrase", "corner"}}}}});
  detail::write_json(dir / "config.json",
                     OJson{{"dataset", "dataset.jsonl"},
                           {"dataset_name", "synthetic"},
                           {"image_root", "."},
                           {"paradigms", {"standard", "viscot", "viscot_grounded"}},
                           {"master_seed", 7},
                           {"grounding_threshold", 0.4},
                           {"concurrency", 4},
                           {"fixed_timing", true},
                           {"output_dir", "out"}});
}

}  // namespace vcrobust
