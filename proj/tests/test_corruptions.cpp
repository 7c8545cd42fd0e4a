#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "test_util.hpp"
#include "vcrobust/corruptions.hpp"

using namespace vcrobust;

namespace {

double sample_var(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); }

}  // namespace

TEST(Presets, MatchReferenceValues) {
  const std::vector<double> sigma{0.08, 0.12, 0.18, 0.26, 0.38};
  const std::vector<double> shot{60, 25, 12, 5, 3};
  const std::vector<double> impulse{0.03, 0.06, 0.09, 0.17, 0.27};
  const std::vector<std::pair<double, double>> defocus{{3, 0.1}, {4, 0.5}, {6, 0.5}, {8, 0.5}, {10, 0.5}};
  const std::vector<std::pair<double, double>> zoom{{1.10, 0.01}, {1.15, 0.01}, {1.21, 0.02}, {1.26, 0.02}, {1.33, 0.03}};
  const std::vector<double> ratio{0.6, 0.5, 0.4, 0.3, 0.25};
  const std::vector<std::array<double, 3>> elastic{
      {2, 0.7, 0.1}, {2, 0.08, 0.2}, {0.05, 0.01, 0.02}, {0.07, 0.01, 0.02}, {0.12, 0.01, 0.02}};
  const std::vector<double> contrast_c{0.4, 0.3, 0.2, 0.1, 0.05};
  for (int l = 1; l <= 5; ++l) {
    const auto i = static_cast<std::size_t>(l - 1);
    EXPECT_EQ(corruption_preset(CorruptionKind::kGaussianNoise, l).param("sigma"), sigma[i]);
    EXPECT_EQ(corruption_preset(CorruptionKind::kShotNoise, l).param("c"), shot[i]);
    EXPECT_EQ(corruption_preset(CorruptionKind::kImpulseNoise, l).param("p"), impulse[i]);
    const auto d = corruption_preset(CorruptionKind::kDefocusBlur, l);
    EXPECT_EQ(d.param("radius"), defocus[i].first);
    EXPECT_EQ(d.param("alias_blur"), defocus[i].second);
    const auto z = corruption_preset(CorruptionKind::kZoomBlur, l);
    EXPECT_EQ(z.param("zoom_start"), 1.0);
    EXPECT_EQ(z.param("zoom_stop"), zoom[i].first);
    EXPECT_EQ(z.param("zoom_step"), zoom[i].second);
    EXPECT_EQ(corruption_preset(CorruptionKind::kPixelate, l).param("ratio"), ratio[i]);
    const auto e = corruption_preset(CorruptionKind::kElasticTransform, l);
    EXPECT_DOUBLE_EQ(e.param("alpha"), 224 * elastic[i][0]);
    EXPECT_DOUBLE_EQ(e.param("sigma"), 224 * elastic[i][1]);
    EXPECT_DOUBLE_EQ(e.param("alpha_affine"), 224 * elastic[i][2]);
    EXPECT_EQ(corruption_preset(CorruptionKind::kContrast, l).param("c"), contrast_c[i]);
  }
  EXPECT_THROW(corruption_preset(CorruptionKind::kContrast, 0), SpecError);
  EXPECT_THROW(corruption_preset(CorruptionKind::kContrast, 6), SpecError);
  EXPECT_THROW(corruption_preset(static_cast<CorruptionKind>(99), 1), SpecError);
}

TEST(Presets, DescribeShowsResolvedValues) {
  EXPECT_EQ(corruption_preset(CorruptionKind::kGaussianNoise, 2).describe(), "gaussian_noise severity 2: sigma=0.12");
}

TEST(Presets, ParseAcceptsShortNames) {
  EXPECT_EQ(parse_corruption("gaussian"), CorruptionKind::kGaussianNoise);
  EXPECT_EQ(parse_corruption("elastic_transform"), CorruptionKind::kElasticTransform);
  EXPECT_EQ(parse_corruption("zoom"), CorruptionKind::kZoomBlur);
  EXPECT_FALSE(parse_corruption("fog").has_value());
}

TEST(GaussianNoise, ZeroSigmaIsIdentity) {
  Rng r(1);
  const Image img = testutil::random_image(r, 8, 8);
  EXPECT_EQ(gaussian_noise(img, 0.0, r), img);
}

TEST(GaussianNoise, OutputIsClippedSumWithField) {
  Rng gen(2);
  const Image img = testutil::random_image(gen, 16, 16);
  Rng a(3), b(3);
  const Image out = gaussian_noise(img, 0.26, a);
  const auto field = gaussian_noise_field(img.size(), 0.26, b);
  for (std::size_t i = 0; i < img.size(); ++i) {
    EXPECT_EQ(out.data()[i], std::clamp(img.data()[i] + field[i], 0.0, 1.0));
  }
}

TEST(GaussianNoise, FieldVarianceMatchesSigmaSquared) {
  for (int l = 1; l <= 5; ++l) {
    const double sigma = corruption_preset(CorruptionKind::kGaussianNoise, l).param("sigma");
    Rng r(100 + static_cast<std::uint64_t>(l));
    const auto field = gaussian_noise_field(256 * 256 * 3, sigma, r);
    EXPECT_NEAR(sample_var(field) / (sigma * sigma), 1.0, 0.05) << "severity " << l;
  }
}

TEST(GaussianNoise, UnclippedResidualMatchesTruncatedNormal) {
  const Image gray = Image::filled(256, 256, 0.5);
  for (int l = 1; l <= 5; ++l) {
    const double sigma = corruption_preset(CorruptionKind::kGaussianNoise, l).param("sigma");
    Rng r(200 + static_cast<std::uint64_t>(l));
    const Image out = gaussian_noise(gray, sigma, r);
    std::vector<double> residual;
    for (double v : out.values()) {
      if (v > 0.0 && v < 1.0) residual.push_back(v - 0.5);
    }
    // Variance of N(0, sigma^2) truncated to (-0.5, 0.5).
    const double a = 0.5 / sigma;
    const double expect = sigma * sigma * (1.0 - 2.0 * a * normal_pdf(a) / (2.0 * normal_cdf(a) - 1.0));
    EXPECT_NEAR(sample_var(residual) / expect, 1.0, 0.05) << "severity " << l;
    if (l == 2) {
      EXPECT_NEAR(sample_var(residual) / 0.0144, 1.0, 0.05);
    }
  }
}

TEST(ShotNoise, ZeroImageStaysZero) {
  Rng r(4);
  const Image zero = Image::filled(8, 8, 0.0);
  EXPECT_EQ(shot_noise(zero, 3.0, r), zero);
}

TEST(ShotNoise, VarianceFollowsPoissonIdentity) {
  Rng r(5);
  const Image half = Image::filled(200, 200, 0.5);
  const Image out = shot_noise(half, 12.0, r);
  EXPECT_NEAR(sample_var(out.values()) / (0.5 / 12.0), 1.0, 0.10);
  // Values live on the 1/c lattice.
  for (double v : out.values()) EXPECT_NEAR(v * 12.0, std::round(v * 12.0), 1e-9);
}

TEST(ImpulseNoise, ZeroProbabilityIsIdentity) {
  Rng r(6);
  const Image img = testutil::random_image(r, 8, 8);
  EXPECT_EQ(impulse_noise(img, 0.0, r), img);
}

TEST(ImpulseNoise, CorruptedFractionAndSaltPepperBalance) {
  Rng r(7);
  const Image gray = Image::filled(250, 400, 0.5);  // 10^5 pixels
  const Image out = impulse_noise(gray, 0.09, r);
  std::size_t salt = 0, pepper = 0;
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    const double v = out.data()[p * 3];
    EXPECT_EQ(out.data()[p * 3 + 1], v);
    EXPECT_EQ(out.data()[p * 3 + 2], v);
    salt += v == 1.0;
    pepper += v == 0.0;
  }
  const double frac = static_cast<double>(salt + pepper) / static_cast<double>(out.pixel_count());
  EXPECT_NEAR(frac, 0.09, 0.01);
  EXPECT_NEAR(static_cast<double>(salt) / static_cast<double>(pepper), 1.0, 0.05);
}

TEST(DefocusBlur, ConstantImageUnchanged) {
  const Image img = Image::filled(20, 20, 0.3);
  const Image out = defocus_blur(img, 6, 0.5);
  for (double v : out.values()) EXPECT_NEAR(v, 0.3, 1e-12);
}

TEST(DefocusBlur, ImpulseReproducesPlainDisk) {
  const int n = 21, c = 10;
  std::vector<double> px(Image::expected_size(n, n), 0.0);
  for (int ch = 0; ch < 3; ++ch) px[(static_cast<std::size_t>(c) * n + c) * 3 + ch] = 1.0;
  const Image out = defocus_blur(Image(n, n, px), 3.0, 0.0);
  int count = 0;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) count += dx * dx + dy * dy <= 9;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int dy = y - c, dx = x - c;
      const double expect = dx * dx + dy * dy <= 9 ? 1.0 / count : 0.0;
      EXPECT_NEAR(out.at(y, x, 1), expect, 1e-15) << y << "," << x;
    }
  }
}

TEST(DefocusBlur, ImpulseReproducesAliasedDisk) {
  // Oracle: disk indicator convolved with a sampled 2-D Gaussian, built
  // directly (non-separably) and normalized.
  const double radius = 4.0, alias = 0.5;
  const int g = static_cast<int>(std::ceil(4 * alias));
  const int half = static_cast<int>(std::ceil(radius)) + g;
  const int m = 2 * half + 1;
  std::vector<double> disk(static_cast<std::size_t>(m * m), 0.0);
  for (int y = -half; y <= half; ++y)
    for (int x = -half; x <= half; ++x)
      if (x * x + y * y <= radius * radius) disk[static_cast<std::size_t>((y + half) * m + x + half)] = 1.0;
  std::vector<double> kern(disk.size(), 0.0);
  double total = 0.0;
  for (int y = 0; y < m; ++y) {
    for (int x = 0; x < m; ++x) {
      double acc = 0.0;
      for (int v = -g; v <= g; ++v)
        for (int u = -g; u <= g; ++u) {
          const int yy = y + v, xx = x + u;
          if (yy < 0 || yy >= m || xx < 0 || xx >= m) continue;
          acc += std::exp(-(u * u + v * v) / (2 * alias * alias)) * disk[static_cast<std::size_t>(yy * m + xx)];
        }
      kern[static_cast<std::size_t>(y * m + x)] = acc;
      total += acc;
    }
  }
  const int n = 31, c = 15;
  std::vector<double> px(Image::expected_size(n, n), 0.0);
  for (int ch = 0; ch < 3; ++ch) px[(static_cast<std::size_t>(c) * n + c) * 3 + ch] = 1.0;
  const Image out = defocus_blur(Image(n, n, px), radius, alias);
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx)
      EXPECT_NEAR(out.at(c + dy, c + dx, 0), kern[static_cast<std::size_t>((dy + half) * m + dx + half)] / total, 1e-12);
  EXPECT_EQ(out.at(0, 0, 0), 0.0);
}

TEST(ZoomBlur, SeverityOneFactors) {
  const auto p = corruption_preset(CorruptionKind::kZoomBlur, 1);
  const auto f = zoom_factors(p.param("zoom_start"), p.param("zoom_stop"), p.param("zoom_step"));
  ASSERT_EQ(f.size(), 11u);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], 1.0 + 0.01 * static_cast<double>(i), 1e-12);
  EXPECT_EQ(zoom_factors(1.0, 1.33, 0.03).size(), 12u);
}

TEST(ZoomBlur, SingleUnitFactorIsIdentity) {
  Rng r(8);
  const Image img = testutil::random_image(r, 12, 9);
  EXPECT_EQ(zoom_blur(img, 1.0, 1.0, 0.01), img);
}

TEST(ZoomBlur, ConstantImageUnchanged) {
  const Image img = Image::filled(17, 23, 0.62);
  for (double v : zoom_blur(img, 1.0, 1.33, 0.03).values()) EXPECT_NEAR(v, 0.62, 1e-12);
}

TEST(Pixelate, UnitRatioIsIdentity) {
  Rng r(9);
  const Image img = testutil::random_image(r, 10, 10);
  EXPECT_EQ(pixelate(img, 1.0), img);
}

TEST(Pixelate, QuarterRatioGivesConstantBlocks) {
  Rng r(10);
  const Image out = pixelate(testutil::random_image(r, 8, 8), 0.25);
  std::set<std::vector<double>> distinct;
  for (int by = 0; by < 2; ++by) {
    for (int bx = 0; bx < 2; ++bx) {
      for (int y = by * 4; y < by * 4 + 4; ++y)
        for (int x = bx * 4; x < bx * 4 + 4; ++x)
          for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(y, x, c), out.at(by * 4, bx * 4, c));
    }
  }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) distinct.insert({out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2)});
  EXPECT_LE(distinct.size(), 4u);
}

TEST(Elastic, ZeroDisplacementIsIdentity) {
  Rng r(11);
  const Image img = testutil::random_image(r, 16, 16);
  EXPECT_EQ(elastic_transform(img, 0.0, 5.0, 0.0, r), img);
}

TEST(Elastic, SeverityThreePresetAndDeterminism) {
  const auto p = corruption_preset(CorruptionKind::kElasticTransform, 3);
  EXPECT_DOUBLE_EQ(p.param("alpha"), 224 * 0.05);
  EXPECT_DOUBLE_EQ(p.param("sigma"), 224 * 0.01);
  EXPECT_DOUBLE_EQ(p.param("alpha_affine"), 224 * 0.02);
  Rng g(12);
  const Image img = testutil::random_image(g, 24, 24);
  Rng a(5), b(5);
  const Image o1 = apply_corruption(img, p, a);
  const Image o2 = apply_corruption(img, p, b);
  EXPECT_EQ(o1, o2);
  EXPECT_NE(o1, img);
}

TEST(Contrast, UnitIsIdentity) {
  Rng r(13);
  const Image img = testutil::random_image(r, 6, 6);
  EXPECT_EQ(contrast(img, 1.0), img);
}

TEST(Contrast, ChannelVarianceScalesByCSquared) {
  Rng r(14);
  const Image img = testutil::random_image(r, 64, 64, 0.4, 0.6);
  for (double c : {0.4, 0.3, 0.2, 0.1, 0.05}) {
    const Image out = contrast(img, c);
    for (int ch = 0; ch < 3; ++ch) {
      std::vector<double> a, b;
      for (std::size_t i = static_cast<std::size_t>(ch); i < img.size(); i += 3) {
        a.push_back(img.data()[i]);
        b.push_back(out.data()[i]);
      }
      EXPECT_NEAR(sample_var(b) / sample_var(a), c * c, 1e-6);
    }
  }
}

TEST(ApplyCorruption, DispatchesToPresetParameters) {
  Rng g(15);
  const Image img = testutil::random_image(g, 20, 20);
  Rng a(1), b(1);
  EXPECT_EQ(apply_corruption(img, CorruptionKind::kGaussianNoise, 2, a), gaussian_noise(img, 0.12, b));
  Rng c(1);
  EXPECT_EQ(apply_corruption(img, CorruptionKind::kPixelate, 1, c), pixelate(img, 0.6));
}

TEST(ApplyCorruption, SameSeedSameOutputForEveryKindAndLevel) {
  Rng g(16);
  const Image img = testutil::random_image(g, 16, 16);
  for (CorruptionKind k : kAllCorruptions) {
    for (int l = 1; l <= 5; ++l) {
      Rng a(77), b(77);
      EXPECT_EQ(apply_corruption(img, k, l, a), apply_corruption(img, k, l, b)) << to_string(k) << " " << l;
    }
  }
}
