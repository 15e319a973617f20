#include <gtest/gtest.h>

#include <random>

#include "diffuforge/backend.hpp"
#include "diffuforge/geometry.hpp"
#include "diffuforge/heatmap.hpp"
#include "diffuforge/labeler.hpp"
#include "oracles.hpp"

using namespace diffuforge;

namespace {

BinaryMask random_mask(std::mt19937_64& rng, int w, int h, double density) {
  std::bernoulli_distribution b(density);
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.set(x, y, b(rng));
  }
  return m;
}

BinaryMask rect(int w, int h, int x0, int y0, int x1, int y1) {
  BinaryMask m(w, h);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) m.set(x, y);
  }
  return m;
}

}  // namespace

TEST(Otsu, BimodalFixture) {
  Histogram256 h{};
  h[50] = 10;
  h[200] = 10;
  const auto r = otsu_from_histogram(h);
  EXPECT_EQ(r.threshold, 50);
  EXPECT_TRUE(r.has_foreground);

  FloatRaster raw(20, 1);
  for (int i = 0; i < 20; ++i) raw.at(i, 0) = i < 10 ? 50.5f / 255.0f : 200.5f / 255.0f;
  const Heatmap hm(raw);
  const auto res = otsu_threshold(hm);
  EXPECT_EQ(res.threshold, 50);
  EXPECT_EQ(threshold_mask(hm, res.threshold).count(), 10u);
}

TEST(Otsu, DegenerateHasNoForeground) {
  const Heatmap flat = normalize_heatmap(FloatRaster(4, 4, 2.0f));
  EXPECT_FALSE(otsu_threshold(flat).has_foreground);
  Histogram256 single{};
  single[77] = 40;
  EXPECT_FALSE(otsu_from_histogram(single).has_foreground);
}

TEST(Otsu, AdjacentBins) {
  Histogram256 h{};
  h[100] = 3;
  h[101] = 5;
  const auto r = otsu_from_histogram(h);
  EXPECT_EQ(r.threshold, 100);
  EXPECT_TRUE(r.has_foreground);
}

TEST(Otsu, QuantizationClamps) {
  FloatRaster r(3, 1, {0.0f, 0.999f, 1.0f});
  const auto h = quantize(Heatmap(r));
  EXPECT_EQ(h[0], 1u);
  EXPECT_EQ(h[254], 1u);
  EXPECT_EQ(h[255], 1u);
}

TEST(Otsu, RandomMatchesExhaustiveOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    FloatRaster raw(64, 64);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : raw.values()) v = u(rng) * u(rng);
    const Heatmap hm = normalize_heatmap(raw);
    const auto got = otsu_threshold(hm);
    const auto want = oracle::otsu_exhaustive(got.histogram);
    ASSERT_EQ(got.threshold, want.threshold) << "trial " << trial;
    EXPECT_NEAR(got.between_class_variance, want.variance, 1e-9 * want.variance);
  }
}

TEST(Morphology, SpeckleAndHole) {
  BinaryMask speck(7, 7);
  speck.set(3, 3);
  EXPECT_EQ(open(speck, StructuringElement::square(3)).count(), 0u);

  BinaryMask holed = rect(9, 9, 2, 2, 6, 6);
  holed.set(4, 4, false);
  EXPECT_EQ(close(holed, StructuringElement::square(3)), rect(9, 9, 2, 2, 6, 6));
}

TEST(Morphology, MatchesNaiveDefinition) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 40; ++trial) {
    const int side = 1 + 2 * int(rng() % 3);
    const BinaryMask m = random_mask(rng, 5 + int(rng() % 30), 5 + int(rng() % 30), 0.6);
    const auto se = StructuringElement::square(side);
    EXPECT_EQ(erode(m, se), oracle::erode(m, side, false));
    EXPECT_EQ(dilate(m, se), oracle::dilate(m, side, false));
    EXPECT_EQ(erode(m, se, Border::foreground), oracle::erode(m, side, true));
  }
}

TEST(Morphology, DualityAndIdempotence) {
  std::mt19937_64 rng(41);
  const auto se = StructuringElement::square(3);
  for (int trial = 0; trial < 60; ++trial) {
    const BinaryMask m = random_mask(rng, 1 + int(rng() % 64), 1 + int(rng() % 64), 0.5);
    EXPECT_EQ(dilate(m.complement(), se, Border::foreground), erode(m, se).complement());
    EXPECT_EQ(erode(m.complement(), se, Border::foreground), dilate(m, se).complement());
    const BinaryMask o = open(m, se);
    EXPECT_EQ(open(o, se), o);
    const BinaryMask c = close(m, se);
    EXPECT_EQ(close(c, se), c);
    const MorphologyParams p;
    const BinaryMask r = refine_mask(m, p);
    EXPECT_EQ(refine_mask(r, p), r);
  }
}

TEST(Morphology, OpeningAntiExtensiveClosingExtensive) {
  std::mt19937_64 rng(43);
  const auto se = StructuringElement::square(3);
  for (int trial = 0; trial < 30; ++trial) {
    const BinaryMask m = random_mask(rng, 20, 20, 0.5);
    const BinaryMask o = open(m, se), c = close(m, se);
    for (int y = 0; y < 20; ++y) {
      for (int x = 0; x < 20; ++x) {
        EXPECT_TRUE(!o.at(x, y) || m.at(x, y));
        EXPECT_TRUE(!m.at(x, y) || c.at(x, y));
      }
    }
  }
}

TEST(Morphology, RejectsEvenSide) {
  EXPECT_THROW(StructuringElement::square(2), ValidationError);
}

TEST(Components, Connectivity) {
  BinaryMask diag(10, 10);
  diag.set(2, 2);
  diag.set(3, 3);
  EXPECT_EQ(extract_components(diag, 0.0).size(), 1u);

  BinaryMask gap = rect(12, 5, 0, 0, 3, 4);
  for (int y = 0; y < 5; ++y) {
    for (int x = 6; x <= 9; ++x) gap.set(x, y);
  }
  EXPECT_EQ(extract_components(gap, 0.0).size(), 2u);
}

TEST(Components, OrderAndFilter) {
  BinaryMask m(40, 40);
  for (int y = 0; y < 2; ++y) {
    for (int x = 30; x < 32; ++x) m.set(x, y);  // area 4, top-right
  }
  for (int y = 20; y < 22; ++y) {
    for (int x = 0; x < 2; ++x) m.set(x, y);  // area 4, later in raster order
  }
  for (int y = 10; y < 15; ++y) {
    for (int x = 10; x < 15; ++x) m.set(x, y);  // area 25
  }
  m.set(38, 38);  // area 1, below 0.001 * 1600
  const auto comps = extract_components(m);
  ASSERT_EQ(comps.size(), 3u);
  EXPECT_EQ(comps[0].area, 25u);
  EXPECT_EQ(comps[1].first_y, 0);
  EXPECT_EQ(comps[2].first_y, 20);
}

TEST(Components, MatchesFloodFillOracle) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 100; ++trial) {
    const BinaryMask m = random_mask(rng, 8 + int(rng() % 40), 8 + int(rng() % 40), 0.35);
    const auto comps = extract_components(m, 0.0);
    const auto labels = oracle::flood_fill(m);
    ASSERT_EQ(comps.size(), labels.areas.size());
    std::vector<std::size_t> got, want(labels.areas);
    for (const auto& c : comps) {
      got.push_back(c.area);
      const int l = labels.label[std::size_t(c.first_y) * m.width() + c.first_x];
      for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
          ASSERT_EQ(c.mask.at(x, y), labels.label[std::size_t(y) * m.width() + x] == l);
        }
      }
    }
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    EXPECT_EQ(got, want);
  }
}

TEST(Contour, SquareCorners) {
  const auto poly = trace_contour(rect(5, 5, 1, 1, 3, 3));
  ASSERT_TRUE(poly.has_value());
  EXPECT_EQ(poly->vertices, (std::vector<Point>{{1, 1}, {1, 3}, {3, 3}, {3, 1}}));
}

TEST(Contour, RectangleHasFourVertices) {
  const auto poly = trace_contour(rect(20, 20, 4, 6, 15, 9));
  ASSERT_TRUE(poly.has_value());
  EXPECT_EQ(poly->vertices.size(), 4u);
}

TEST(Contour, DegenerateShapesOmitted) {
  BinaryMask dot(5, 5);
  dot.set(2, 2);
  EXPECT_FALSE(trace_contour(dot).has_value());
  EXPECT_FALSE(trace_contour(rect(8, 8, 1, 3, 6, 3)).has_value());
}

TEST(Contour, RandomBlobsRoundTrip) {
  std::mt19937_64 rng(53);
  const auto se = StructuringElement::square(3);
  for (int trial = 0; trial < 100; ++trial) {
    const BinaryMask blob = oracle::random_blob(rng, 48, 48, 20 + int(rng() % 300));
    const auto comps = extract_components(blob, 0.0);
    ASSERT_EQ(comps.size(), 1u);
    const auto poly = trace_contour(comps[0].mask);
    ASSERT_TRUE(poly.has_value());
    EXPECT_LT(signed_area(*poly), 0.0) << "expected counter-clockwise on screen";
    const BinaryMask filled = oracle::scan_fill(poly->vertices, 48, 48);
    EXPECT_GE(oracle::mask_iou(filled, blob), 0.9) << "trial " << trial;
    const BinaryMask outer = dilate(blob, se), inner = erode(blob, se);
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 48; ++x) {
        EXPECT_TRUE(!filled.at(x, y) || outer.at(x, y));
        EXPECT_TRUE(!inner.at(x, y) || filled.at(x, y));
      }
    }
    const BoundingBox b = fit_bbox(*poly);
    EXPECT_EQ(b, fit_bbox(blob));
  }
}

TEST(Score, Examples) {
  BinaryMask full(4, 4, true);
  EXPECT_DOUBLE_EQ(score_instance(full, {0, 0, 4, 4}, Heatmap(FloatRaster(4, 4, 1.0f)), {}), 1.0);

  // Quarter-image box, mean intensity 0.8.
  BinaryMask m = rect(10, 10, 0, 0, 4, 4);
  FloatRaster r(10, 10, 0.0f);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) r.at(x, y) = 0.8f;
  }
  EXPECT_NEAR(score_instance(m, {0, 0, 5, 5}, Heatmap(r), {}), 0.525, 1e-6);
  EXPECT_THROW(score_instance(BinaryMask(10, 10), {0, 0, 5, 5}, Heatmap(r), {}), ValidationError);
  EXPECT_THROW((ScoreWeights{0.7, 0.7}.validate()), ValidationError);
}

TEST(Score, MonotoneInArea) {
  const Heatmap h(FloatRaster(20, 20, 0.5f));
  double prev = -1.0;
  for (int s = 1; s <= 20; ++s) {
    const double v = score_instance(rect(20, 20, 0, 0, s - 1, s - 1), {0, 0, s, s}, h, {});
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Labeling, DegenerateAndEmpty) {
  const std::map<std::string, Heatmap> flat{{"car", normalize_heatmap(FloatRaster(16, 16, 3.0f))}};
  EXPECT_TRUE(label_heatmaps({"car"}, flat, {}).empty());
  EXPECT_TRUE(label_heatmaps({}, flat, {}).empty());
}

TEST(Labeling, SyntheticSingleAndPair) {
  SyntheticBackend backend;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GenerationRequest req;
    req.width = req.height = 128;
    req.seed = seed;
    req.prompt.text = "a car and a dog";
    req.prompt.tokens_of_interest = seed % 2 ? std::vector<std::string>{"car", "dog"} : std::vector<std::string>{"car"};
    const auto result = backend.generate(req);
    const auto instances = label_unsupervised(result, {});
    for (const auto& gt : result.ground_truth) {
      int hits = 0;
      double best = 0.0;
      for (const auto& inst : instances) {
        if (inst.class_token != gt.token) continue;
        ++hits;
        best = std::max(best, bbox_iou(inst.bbox, gt.bbox));
      }
      EXPECT_GE(hits, 1);
      EXPECT_GE(best, 0.75) << "seed " << seed << " token " << gt.token;
    }
    for (std::size_t i = 1; i < instances.size(); ++i) EXPECT_GE(instances[i - 1].score, instances[i].score);
    for (const auto& inst : instances) {
      EXPECT_EQ(inst.source, LabelSource::unsupervised);
      if (!inst.polygons.empty()) {
        EXPECT_EQ(fit_bbox(inst.polygons), inst.bbox);
      }
    }
    EXPECT_EQ(label_unsupervised(result, {}), instances);
  }
}
