#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "diffuforge/codec.hpp"
#include "diffuforge/dataset.hpp"
#include "diffuforge/error.hpp"
#include "diffuforge/geometry.hpp"
#include "diffuforge/overlay.hpp"

using namespace diffuforge;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("diffuforge_" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

LabeledInstance square_instance(const std::string& cls, int x0, int y0, int side, double score) {
  LabeledInstance i;
  i.class_token = cls;
  const double x1 = x0 + side - 1, y1 = y0 + side - 1;
  i.polygons = {Polygon{{{double(x0), double(y0)}, {double(x0), y1}, {x1, y1}, {x1, double(y0)}}}};
  i.bbox = {x0, y0, side, side};
  i.score = score;
  return i;
}

DatasetRecord record(const std::string& id, int w, int h, std::vector<LabeledInstance> instances) {
  DatasetRecord r;
  r.image_id = id;
  r.image_path = "images/" + id + ".png";
  r.width = w;
  r.height = h;
  r.prompt = "a red car";
  r.tokens = {"car"};
  r.heatmap_paths = {{"car", "heatmaps/" + id + "__0_car.hm32"}};
  r.instances = std::move(instances);
  r.provenance = {"cars", {{"color", "red"}}, 42, TaskKind::text_to_image, "synthetic-v1"};
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<DatasetRecord> random_records(std::mt19937_64& rng, int n) {
  const std::vector<std::string> classes{"car", "dog", "tree"};
  std::vector<DatasetRecord> out;
  for (int k = 0; k < n; ++k) {
    const int w = 32 + int(rng() % 64), h = 32 + int(rng() % 64);
    std::vector<LabeledInstance> inst;
    for (int j = int(rng() % 4); j > 0; --j) {
      const int side = 3 + int(rng() % 10);
      auto i = square_instance(classes[rng() % 3], int(rng() % (w - side)), int(rng() % (h - side)), side,
                               double(rng() % 1000) / 1000.0);
      if (rng() % 4 == 0) i.polygons.clear();  // bbox-only instance
      if (rng() % 3 == 0) i.source = LabelSource::supervised;
      inst.push_back(std::move(i));
    }
    out.push_back(record("img" + std::to_string(k), w, h, std::move(inst)));
  }
  return out;
}

}  // namespace

TEST(Manifest, RoundTrip) {
  TempDir dir;
  Manifest m;
  m.dataset_id = "d";
  m.created_at = "2026-01-01T00:00:00Z";
  m.config_digest = sha256_hex("{}");
  m.backend_id = "synthetic-v1";
  m.labeling = {{"open_iterations", 1}};
  m.records = {record("a", 64, 48, {square_instance("car", 1, 1, 3, 0.7)})};
  m.records[0].ground_truth = {{"car", 10.5, 12.25, 8.0, 4.0, 0.3, {3, 8, 15, 9}}};
  write_manifest(dir.path() / "manifest.json", m);
  EXPECT_EQ(read_manifest(dir.path() / "manifest.json"), m);
}

TEST(Manifest, DuplicateIdsRejected) {
  Manifest m;
  m.records = {record("a", 8, 8, {}), record("a", 8, 8, {})};
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Registry, SortedFromOne) {
  auto recs = std::vector<DatasetRecord>{record("a", 20, 20, {square_instance("zebra", 1, 1, 3, 0.5)})};
  recs[0].tokens = {"car", "apple"};
  const auto reg = ClassRegistry::from_records(recs);
  EXPECT_EQ(reg.names(), (std::vector<std::string>{"apple", "car", "zebra"}));
  EXPECT_EQ(reg.id("apple"), 1);
  EXPECT_EQ(reg.id("zebra"), 3);
  EXPECT_THROW(reg.id("bus"), ValidationError);
}

TEST(Coco, SingleInstanceDocument) {
  const auto recs = std::vector<DatasetRecord>{record("a", 20, 20, {square_instance("car", 1, 1, 3, 0.7)})};
  const ClassRegistry reg({"car"});
  const auto doc = coco_document(recs, reg);
  ASSERT_EQ(doc["images"].size(), 1u);
  ASSERT_EQ(doc["categories"].size(), 1u);
  ASSERT_EQ(doc["annotations"].size(), 1u);
  const auto& ann = doc["annotations"][0];
  EXPECT_NEAR(ann["area"].get<double>(), 9.0, 1e-6);
  EXPECT_EQ(ann["bbox"], nlohmann::ordered_json({1, 1, 3, 3}));
  EXPECT_EQ(ann["segmentation"][0], nlohmann::ordered_json({1, 1, 1, 3, 3, 3, 3, 1}));
  EXPECT_DOUBLE_EQ(ann["diffuforge_score"].get<double>(), 0.7);
  EXPECT_EQ(doc["images"][0]["file_name"], "images/a.png");
}

TEST(Coco, EmptyDataset) {
  const auto doc = coco_document({}, ClassRegistry{});
  EXPECT_TRUE(doc["images"].empty());
  EXPECT_TRUE(doc["annotations"].empty());
  EXPECT_TRUE(doc["categories"].empty());
}

TEST(Coco, RoundTripAndDeterminism) {
  std::mt19937_64 rng(71);
  TempDir dir;
  const auto recs = random_records(rng, 20);
  const auto reg = ClassRegistry::from_records(recs);
  write_coco(recs, reg, dir.path() / "a.json");
  write_coco(recs, reg, dir.path() / "b.json");
  EXPECT_EQ(slurp(dir.path() / "a.json"), slurp(dir.path() / "b.json"));
  const auto back = read_coco(nlohmann::json::parse(slurp(dir.path() / "a.json")));
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].file_name, recs[i].image_path);
    EXPECT_EQ(back[i].width, recs[i].width);
    EXPECT_EQ(back[i].instances, recs[i].instances);
  }
}

TEST(Coco, GeometryOutsideImageRejected) {
  const auto recs = std::vector<DatasetRecord>{record("a", 10, 10, {square_instance("car", 8, 8, 5, 0.5)})};
  EXPECT_THROW(coco_document(recs, ClassRegistry({"car"})), ValidationError);
  const auto ok = std::vector<DatasetRecord>{record("a", 10, 10, {square_instance("bus", 1, 1, 3, 0.5)})};
  EXPECT_THROW(coco_document(ok, ClassRegistry({"car"})), ValidationError);
}

TEST(Yolo, Examples) {
  EXPECT_EQ(yolo_line(4, {5, 10, 11, 11}, 100, 100), "4 0.105000 0.155000 0.110000 0.110000");
  EXPECT_EQ(yolo_line(0, {0, 0, 100, 50}, 100, 50), "0 0.500000 0.500000 1.000000 1.000000");
}

TEST(Yolo, RoundTripWithinHalfPixel) {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 1000; ++trial) {
    const int w = 1 + int(rng() % 4000), h = 1 + int(rng() % 4000);
    BoundingBox b;
    b.x = int(rng() % w);
    b.y = int(rng() % h);
    b.width = 1 + int(rng() % (w - b.x));
    b.height = 1 + int(rng() % (h - b.y));
    const auto [cls, back] = parse_yolo_line(yolo_line(3, b, w, h), w, h);
    EXPECT_EQ(cls, 3);
    EXPECT_LE(std::abs(back.x - b.x), 0.5);
    EXPECT_LE(std::abs(back.y - b.y), 0.5);
    EXPECT_LE(std::abs(back.width - b.width), 0.5);
    EXPECT_LE(std::abs(back.height - b.height), 0.5);
  }
}

TEST(Yolo, FilesPerImage) {
  TempDir dir;
  const auto recs = std::vector<DatasetRecord>{
      record("a", 100, 100, {square_instance("car", 5, 10, 11, 0.5)}), record("b", 50, 50, {})};
  write_yolo(recs, ClassRegistry({"bus", "car"}), dir.path());
  EXPECT_EQ(slurp(dir.path() / "a.txt"), "1 0.105000 0.155000 0.110000 0.110000\n");
  EXPECT_EQ(slurp(dir.path() / "b.txt"), "");
  EXPECT_EQ(slurp(dir.path() / "classes.txt"), "bus\ncar\n");
}

TEST(Masks, ValueSetsAndPrecedence) {
  const ClassRegistry reg({"a", "b", "car"});
  const auto single = record("s", 20, 20, {square_instance("car", 2, 2, 5, 0.5)});
  const auto map = semantic_label_map(single, reg);
  EXPECT_EQ(std::set<std::uint8_t>(map.begin(), map.end()), (std::set<std::uint8_t>{0, 3}));

  const auto overlap = record("o", 20, 20, {square_instance("a", 2, 2, 6, 0.9), square_instance("b", 4, 4, 6, 0.4)});
  const auto m2 = semantic_label_map(overlap, reg);
  EXPECT_EQ(m2[5 * 20 + 5], 1);
  EXPECT_EQ(m2[9 * 20 + 9], 2);

  const auto empty = semantic_label_map(record("e", 8, 8, {}), reg);
  EXPECT_EQ(std::set<std::uint8_t>(empty.begin(), empty.end()), std::set<std::uint8_t>{0});

  std::vector<std::string> many;
  for (int i = 0; i < 256; ++i) many.push_back("c" + std::to_string(1000 + i));
  TempDir dir;
  EXPECT_THROW(write_semantic_masks({single}, ClassRegistry(many), dir.path()), ValidationError);
}

TEST(Masks, PngMatchesInstanceIds) {
  std::mt19937_64 rng(79);
  TempDir dir;
  const auto recs = random_records(rng, 10);
  const auto reg = ClassRegistry::from_records(recs);
  write_semantic_masks(recs, reg, dir.path() / "m1");
  write_semantic_masks(recs, reg, dir.path() / "m2");
  for (const auto& r : recs) {
    const auto bytes = read_file_bytes(dir.path() / "m1" / (r.image_id + ".png"));
    EXPECT_EQ(bytes, read_file_bytes(dir.path() / "m2" / (r.image_id + ".png")));
    int w = 0, h = 0;
    const auto gray = decode_png_gray(bytes, w, h);
    EXPECT_EQ(w, r.width);
    std::set<std::uint8_t> got(gray.begin(), gray.end()), want{0};
    for (const auto& i : r.instances) want.insert(std::uint8_t(reg.id(i.class_token)));
    for (auto v : got) EXPECT_TRUE(want.count(v)) << int(v);
  }
}

TEST(Overlay, IdentityDeterminismAndVisibility) {
  ImageRaster img(40, 30);
  for (int y = 0; y < 30; ++y) {
    for (int x = 0; x < 40; ++x) img.pixel(x, y)[1] = std::uint8_t(x * 5);
  }
  EXPECT_EQ(render_overlay(img, {}), img);
  const std::vector<LabeledInstance> inst{square_instance("car", 10, 12, 8, 0.8)};
  const ImageRaster a = render_overlay(img, inst, Heatmap(FloatRaster(40, 30, 0.5f)));
  EXPECT_EQ(a, render_overlay(img, inst, Heatmap(FloatRaster(40, 30, 0.5f))));
  const ImageRaster b = render_overlay(img, inst);
  bool differs = false;
  for (int x = 10; x <= 17; ++x) {
    differs |= !std::equal(b.pixel(x, 19), b.pixel(x, 19) + 3, img.pixel(x, 19));
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(render_overlay(img, inst, Heatmap(FloatRaster(4, 4, 0.5f))), ValidationError);
}
