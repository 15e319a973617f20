#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "diffuforge/codec.hpp"
#include "diffuforge/error.hpp"
#include "diffuforge/geometry.hpp"
#include "diffuforge/heatmap.hpp"
#include "oracles.hpp"

using namespace diffuforge;

namespace {

FloatRaster random_raster(std::mt19937_64& rng, int w, int h, float lo = -5.0f, float hi = 5.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  FloatRaster r(w, h);
  for (auto& v : r.values()) v = u(rng);
  return r;
}

}  // namespace

TEST(Normalize, AffineExample) {
  const Heatmap h = normalize_heatmap(FloatRaster(2, 2, {2, 4, 2, 4}));
  EXPECT_EQ(h.raster().values(), (std::vector<float>{0, 1, 0, 1}));
  EXPECT_FALSE(h.degenerate());
}

TEST(Normalize, ConstantIsDegenerate) {
  const Heatmap h = normalize_heatmap(FloatRaster(2, 2, 5.0f));
  EXPECT_EQ(h.raster().values(), (std::vector<float>{0, 0, 0, 0}));
  EXPECT_TRUE(h.degenerate());
}

TEST(Normalize, RandomHitsZeroAndOne) {
  std::mt19937_64 rng(7);
  const Heatmap h = normalize_heatmap(random_raster(rng, 8, 8));
  float lo = 1e9f, hi = -1e9f;
  for (float v : h.raster().values()) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_EQ(lo, 0.0f);
  EXPECT_EQ(hi, 1.0f);
}

TEST(Normalize, RejectsNonFiniteWithPosition) {
  FloatRaster r(3, 2, 0.0f);
  r.at(2, 1) = std::numeric_limits<float>::quiet_NaN();
  try {
    normalize_heatmap(r);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 1)"), std::string::npos) << e.what();
  }
}

TEST(Normalize, IdempotentAndAffineInvariant) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const FloatRaster r = random_raster(rng, 9, 7);
    const Heatmap once = normalize_heatmap(r);
    EXPECT_EQ(normalize_heatmap(once.raster()), once);
    FloatRaster scaled = r;
    for (auto& v : scaled.values()) v = 3.5f * v + 12.0f;
    const Heatmap other = normalize_heatmap(scaled);
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_NEAR(other.raster().values()[i], once.raster().values()[i], 1e-6);
    }
  }
}

TEST(Upscale, HandComputedRows) {
  const FloatRaster out = upscale_bilinear(FloatRaster(2, 2, {0, 1, 0, 1}), 4, 4);
  for (int y = 0; y < 4; ++y) {
    EXPECT_NEAR(out.at(0, y), 0.0, 1e-7);
    EXPECT_NEAR(out.at(1, y), 1.0 / 3.0, 1e-7);
    EXPECT_NEAR(out.at(2, y), 2.0 / 3.0, 1e-7);
    EXPECT_NEAR(out.at(3, y), 1.0, 1e-7);
  }
}

TEST(Upscale, IdentityAtSameSize) {
  std::mt19937_64 rng(3);
  const FloatRaster r = random_raster(rng, 6, 5);
  EXPECT_EQ(upscale_bilinear(r, 6, 5), r);
}

TEST(Upscale, MatchesTextbookFormulaAndBounds) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int sw = 2 + int(rng() % 6), sh = 2 + int(rng() % 6);
    const int tw = 1 + int(rng() % 20), th = 1 + int(rng() % 20);
    const FloatRaster r = random_raster(rng, sw, sh);
    std::vector<std::vector<double>> grid(sh, std::vector<double>(sw));
    float lo = 1e9f, hi = -1e9f;
    for (int y = 0; y < sh; ++y) {
      for (int x = 0; x < sw; ++x) {
        grid[y][x] = r.at(x, y);
        lo = std::min(lo, r.at(x, y));
        hi = std::max(hi, r.at(x, y));
      }
    }
    const FloatRaster out = upscale_bilinear(r, tw, th);
    for (int y = 0; y < th; ++y) {
      for (int x = 0; x < tw; ++x) {
        const double fx = tw == 1 ? 0.0 : double(x) * (sw - 1) / (tw - 1);
        const double fy = th == 1 ? 0.0 : double(y) * (sh - 1) / (th - 1);
        EXPECT_NEAR(out.at(x, y), oracle::bilinear(grid, fx, fy), 1e-5);
        EXPECT_GE(out.at(x, y), lo);
        EXPECT_LE(out.at(x, y), hi);
      }
    }
    if (tw > 1 && th > 1) {
      EXPECT_EQ(out.at(0, 0), r.at(0, 0));
      EXPECT_EQ(out.at(tw - 1, th - 1), r.at(sw - 1, sh - 1));
    }
  }
}

TEST(Upscale, RejectsZeroTarget) {
  EXPECT_THROW(upscale_bilinear(FloatRaster(2, 2, 0.0f), 0, 3), ValidationError);
}

TEST(Aggregate, SingletonAndDuplicate) {
  std::mt19937_64 rng(9);
  const FloatRaster r = random_raster(rng, 4, 4);
  const Heatmap single = aggregate_heatmaps(std::vector<FloatRaster>{r}, 10, 10);
  EXPECT_EQ(single, normalize_heatmap(upscale_bilinear(r, 10, 10)));
  const Heatmap twice = aggregate_heatmaps(std::vector<FloatRaster>{r, r}, 10, 10);
  for (std::size_t i = 0; i < twice.raster().size(); ++i) {
    EXPECT_NEAR(twice.raster().values()[i], single.raster().values()[i], 1e-6);
  }
}

TEST(Aggregate, PermutationInvariant) {
  std::mt19937_64 rng(13);
  const std::vector<FloatRaster> maps{random_raster(rng, 3, 3), random_raster(rng, 8, 5), random_raster(rng, 16, 16)};
  const std::vector<FloatRaster> reversed(maps.rbegin(), maps.rend());
  const Heatmap a = aggregate_heatmaps(maps, 16, 16);
  const Heatmap b = aggregate_heatmaps(reversed, 16, 16);
  for (std::size_t i = 0; i < a.raster().size(); ++i) {
    EXPECT_NEAR(a.raster().values()[i], b.raster().values()[i], 1e-6);
  }
}

TEST(Aggregate, TwoBlobsPeakAtCenters) {
  auto blob = [](int cx, int cy) {
    FloatRaster r(32, 32);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) r.at(x, y) = float(std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / 8.0));
    }
    return r;
  };
  const Heatmap h = aggregate_heatmaps(std::vector<FloatRaster>{blob(8, 8), blob(24, 20)}, 32, 32);
  // Local maxima by brute-force scan of each half.
  auto argmax = [&](int x0, int x1) {
    std::pair<int, int> best{x0, 0};
    for (int y = 0; y < 32; ++y) {
      for (int x = x0; x < x1; ++x) {
        if (h.at(x, y) > h.at(best.first, best.second)) best = {x, y};
      }
    }
    return best;
  };
  const auto a = argmax(0, 16), b = argmax(16, 32);
  EXPECT_LE(std::abs(a.first - 8), 1);
  EXPECT_LE(std::abs(a.second - 8), 1);
  EXPECT_LE(std::abs(b.first - 24), 1);
  EXPECT_LE(std::abs(b.second - 20), 1);
}

TEST(Aggregate, EmptyListRejected) {
  EXPECT_THROW(aggregate_heatmaps(std::vector<FloatRaster>{}, 4, 4), ValidationError);
}

TEST(Hm32, RoundTripAndLayout) {
  const FloatRaster r(3, 2, {0.f, 0.25f, 0.5f, 0.75f, 1.f, -2.f});
  const auto bytes = encode_hm32(r);
  ASSERT_EQ(bytes.size(), 8u + 6 * 4);
  EXPECT_EQ(bytes[0], 3);
  EXPECT_EQ(bytes[4], 2);
  // 1.0f little-endian is 00 00 80 3f.
  EXPECT_EQ(bytes[8 + 4 * 4 + 2], 0x80);
  EXPECT_EQ(bytes[8 + 4 * 4 + 3], 0x3f);
  EXPECT_EQ(decode_hm32(bytes), r);

  const auto path = std::filesystem::temp_directory_path() / "diffuforge_test.hm32";
  write_hm32(path, r);
  EXPECT_EQ(read_hm32(path), r);
  std::filesystem::remove(path);
}

TEST(Hm32, TruncatedRejected) {
  auto bytes = encode_hm32(FloatRaster(2, 2, 1.0f));
  bytes.pop_back();
  EXPECT_THROW(decode_hm32(bytes), FormatError);
  EXPECT_THROW(decode_hm32(std::vector<std::uint8_t>{1, 0}), FormatError);
}

TEST(Codec, PngRoundTrips) {
  ImageRaster img(5, 3);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 5; ++x) {
      img.pixel(x, y)[0] = std::uint8_t(x * 40);
      img.pixel(x, y)[1] = std::uint8_t(y * 80);
      img.pixel(x, y)[2] = 7;
    }
  }
  EXPECT_EQ(decode_png_rgb(encode_png_rgb(img)), img);

  BinaryMask m(4, 4);
  m.set(1, 2);
  m.set(3, 0);
  EXPECT_EQ(mask_from_png(mask_to_png(m)), m);
  int w = 0, h = 0;
  const auto gray = decode_png_gray(mask_to_png(m), w, h);
  EXPECT_EQ(gray[2 * 4 + 1], 255);
  EXPECT_EQ(gray[0], 0);
  EXPECT_THROW(decode_png_rgb(std::vector<std::uint8_t>{1, 2, 3}), FormatError);
}

TEST(Codec, Base64AndDigest) {
  const std::vector<std::uint8_t> bytes{'f', 'o', 'o', 'b', 'a', 'r'};
  EXPECT_EQ(base64_encode(bytes), "Zm9vYmFy");
  EXPECT_EQ(base64_decode("Zm9vYmFy"), bytes);
  EXPECT_THROW(base64_decode("Zm9vYmF"), FormatError);
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Geometry, SquareAreaAndBox) {
  const Polygon square{{{1, 1}, {1, 3}, {3, 3}, {3, 1}}};
  EXPECT_NEAR(std::abs(signed_area(square)), 4.0, 1e-12);
  EXPECT_NEAR(pixel_area(square), 9.0, 1e-6);
  EXPECT_EQ(boundary_lattice_points(square), 8);
  EXPECT_EQ(fit_bbox(square), (BoundingBox{1, 1, 3, 3}));
  EXPECT_TRUE(contains(square, 2, 2));
  EXPECT_TRUE(contains(square, 1, 2));
  EXPECT_FALSE(contains(square, 0, 2));
}

TEST(Geometry, FitBboxExamples) {
  BinaryMask m(30, 30);
  for (int y = 10; y <= 20; ++y) {
    for (int x = 5; x <= 15; ++x) m.set(x, y);
  }
  EXPECT_EQ(fit_bbox(m), (BoundingBox{5, 10, 11, 11}));
  BinaryMask dot(10, 10);
  dot.set(7, 7);
  EXPECT_EQ(fit_bbox(dot), (BoundingBox{7, 7, 1, 1}));
  EXPECT_THROW(fit_bbox(BinaryMask(4, 4)), ValidationError);
}

TEST(Geometry, FitBboxContainsAndTouchesExtremes) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const BinaryMask m = oracle::random_blob(rng, 40, 40, 5 + int(rng() % 200));
    const BoundingBox b = fit_bbox(m);
    bool top = false, bottom = false, left = false, right = false;
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 40; ++x) {
        if (!m.at(x, y)) continue;
        ASSERT_TRUE(x >= b.x && x <= b.x_max() && y >= b.y && y <= b.y_max());
        top |= y == b.y;
        bottom |= y == b.y_max();
        left |= x == b.x;
        right |= x == b.x_max();
      }
    }
    EXPECT_TRUE(top && bottom && left && right);
  }
}

TEST(Geometry, RasterizeMatchesScanFill) {
  const Polygon tri{{{2, 2}, {12, 4}, {5, 11}}};
  const BinaryMask a = rasterize(std::vector<Polygon>{tri}, 16, 16);
  EXPECT_EQ(a, oracle::scan_fill(tri.vertices, 16, 16));
}

TEST(Geometry, BboxIou) {
  EXPECT_DOUBLE_EQ(bbox_iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(bbox_iou({0, 0, 10, 10}, {20, 20, 5, 5}), 0.0);
  EXPECT_NEAR(bbox_iou({0, 0, 10, 10}, {5, 0, 10, 10}), 50.0 / 150.0, 1e-12);
}

TEST(Types, StringConversions) {
  for (auto t : {TaskKind::text_to_image, TaskKind::image_to_image, TaskKind::inpaint}) {
    EXPECT_EQ(task_kind_from_string(to_string(t)), t);
  }
  EXPECT_THROW(task_kind_from_string("txt2img"), ValidationError);
  EXPECT_EQ(label_source_from_string("supervised"), LabelSource::supervised);
}

TEST(Types, HeatmapRejectsOutOfRange) {
  EXPECT_THROW(Heatmap(FloatRaster(1, 1, 1.5f)), ValidationError);
  EXPECT_THROW(ImageRaster(2, 2, std::vector<std::uint8_t>(5)), ValidationError);
}
