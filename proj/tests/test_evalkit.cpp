#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ento/evalkit.hpp"
#include "ento/image_io.hpp"
#include "ento/rng.hpp"
#include "ento/taxonomy.hpp"

#ifndef ENTO_DATA_DIR
#define ENTO_DATA_DIR "data"
#endif

using namespace ento;
using evalkit::DatasetManifest;
using evalkit::DatasetSpec;
using evalkit::RunMetrics;
using evalkit::SplitRatios;
using evalkit::Variant;

namespace {

const taxonomy::TaxonomyTree& bundled_tree() {
  static taxonomy::TaxonomyTree tree =
      taxonomy::TaxonomyTree::parse_file(std::string(ENTO_DATA_DIR) +
                                         "/taxonomy.tsv");
  return tree;
}

std::vector<int> block_labels(const std::vector<int>& sizes) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < sizes.size(); ++c)
    labels.insert(labels.end(), static_cast<std::size_t>(sizes[c]),
                  static_cast<int>(c));
  return labels;
}

std::string parse_failure(const std::string& text) {
  std::istringstream in(text);
  try {
    evalkit::parse_manifest(in, "mem", bundled_tree());
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("stratified split produces the stated per-class counts") {
  std::vector<int> sizes = {10, 7, 5, 1};
  std::vector<int> labels;
  // interleave so counts cannot come from input order
  for (int i = 0; i < 10; ++i)
    for (std::size_t c = 0; c < sizes.size(); ++c)
      if (i < sizes[c]) labels.push_back(static_cast<int>(c));

  auto split = evalkit::stratified_split(labels, SplitRatios{}, 1);
  CHECK(split.tags.size() == labels.size());
  CHECK(split.seed == 1);

  std::vector<std::array<int, 4>> want = {
      {0, 6, 2, 2}, {1, 5, 1, 1}, {2, 3, 1, 1}, {3, 1, 0, 0}};
  CHECK(split.class_counts == want);

  // recount from the tags themselves
  std::map<int, std::array<int, 3>> seen;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int slot = split.tags[i] == "train" ? 0 : split.tags[i] == "val" ? 1 : 2;
    seen[labels[i]][static_cast<std::size_t>(slot)]++;
  }
  for (const auto& row : want) {
    CHECK(seen[row[0]][0] == row[1]);
    CHECK(seen[row[0]][1] == row[2]);
    CHECK(seen[row[0]][2] == row[3]);
  }
}

TEST_CASE("stratified split invariants on random label sets") {
  rng::Generator g(99);
  for (int rep = 0; rep < 25; ++rep) {
    int classes = 1 + static_cast<int>(g.below(6));
    std::vector<int> sizes;
    for (int c = 0; c < classes; ++c)
      sizes.push_back(1 + static_cast<int>(g.below(12)));
    std::vector<int> labels = block_labels(sizes);
    g.shuffle(labels);
    std::uint64_t seed = g.below(1000);

    auto a = evalkit::stratified_split(labels, SplitRatios{}, seed);
    auto b = evalkit::stratified_split(labels, SplitRatios{}, seed);
    CHECK(a.tags == b.tags);

    std::map<int, int> totals;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      bool known = a.tags[i] == "train" || a.tags[i] == "val" ||
                   a.tags[i] == "test";
      CHECK(known);
      totals[labels[i]]++;
    }
    for (const auto& row : a.class_counts) {
      CHECK(row[1] + row[2] + row[3] == totals[row[0]]);
      CHECK(row[1] >= static_cast<int>(0.6 * totals[row[0]]));
    }

    auto c = evalkit::stratified_split(labels, SplitRatios{}, seed + 1);
    CHECK(c.class_counts == a.class_counts);
  }
}

TEST_CASE("stratified split rejects bad input") {
  CHECK_THROWS_AS(evalkit::stratified_split(std::vector<int>{}, SplitRatios{}, 1),
                  DomainError);
  CHECK_THROWS_AS(evalkit::stratified_split(std::vector<int>{0, -1},
                                            SplitRatios{}, 1),
                  DomainError);
  SplitRatios bad;
  bad.test = 0.1;
  CHECK_THROWS_AS(evalkit::stratified_split({0, 0}, bad, 1), DomainError);
}

TEST_CASE("manifest parsing accepts 2 to 4 fields") {
  std::string text =
      "a.ppm\tApis mellifica\n"
      "b.ppm\tPieris rapae\tb_mask.pgm\n"
      "\r\n"
      "c.ppm\tBombus terrestris\tc_mask.pgm\ttest\r\n";
  std::istringstream in(text);
  DatasetManifest m = evalkit::parse_manifest(in, "mem", bundled_tree());
  REQUIRE(m.records.size() == 3);
  CHECK(m.records[0].image == "a.ppm");
  CHECK(m.records[0].class_index == 8);
  CHECK(m.records[0].mask.empty());
  CHECK(m.records[0].split.empty());
  CHECK(m.records[1].class_index == 15);
  CHECK(m.records[1].mask == "b_mask.pgm");
  CHECK(m.records[2].split == "test");
}

TEST_CASE("manifest errors carry the line number") {
  CHECK(parse_failure("lonely_field\n").find("mem:1") == 0);
  CHECK(parse_failure("a\tb\tc\td\te\n").find("mem:1") == 0);
  CHECK(parse_failure("a.ppm\tApis mellifica\na.ppm\tPieris rapae\n")
            .find("mem:2") == 0);
  CHECK(parse_failure("a.ppm\tMadeuptus fakeus\n").find("unknown species") !=
        std::string::npos);
  CHECK(parse_failure("a.ppm\tApis mellifica\t\tholdout\n")
            .find("unknown split tag") != std::string::npos);
  CHECK(parse_failure("\tApis mellifica\n").find("empty image path") !=
        std::string::npos);
}

TEST_CASE("manifest save and load round trip with split tags") {
  DatasetManifest m;
  m.records.push_back({"x.ppm", "Apis mellifica", "x.pgm", "", 8});
  m.records.push_back({"y.ppm", "Lasius niger", "", "", 12});
  auto split = evalkit::stratified_split(m, SplitRatios{1.0, 0.0, 0.0}, 4);
  evalkit::apply_split(m, split);
  CHECK(m.records[0].split == "train");

  std::string path = temp_path("ento_manifest_rt.tsv");
  evalkit::save_manifest(path, m);
  DatasetManifest back = evalkit::load_manifest(path, bundled_tree());
  REQUIRE(back.records.size() == m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    CHECK(back.records[i].image == m.records[i].image);
    CHECK(back.records[i].species == m.records[i].species);
    CHECK(back.records[i].mask == m.records[i].mask);
    CHECK(back.records[i].split == m.records[i].split);
    CHECK(back.records[i].class_index == m.records[i].class_index);
  }
  std::remove(path.c_str());

  evalkit::SplitAssignment wrong;
  wrong.tags = {"train"};
  CHECK_THROWS_AS(evalkit::apply_split(m, wrong), ShapeError);
}

TEST_CASE("class histogram and imbalance ratio") {
  DatasetManifest m;
  m.records.push_back({"a", "Apis mellifica", "", "", 8});
  m.records.push_back({"b", "Lasius niger", "", "", 13});
  m.records.push_back({"c", "Formica rufa", "", "", 13});
  auto h = evalkit::class_histogram(m, 16);
  REQUIRE(h.counts.size() == 16);
  CHECK(h.counts[8] == 1);
  CHECK(h.counts[13] == 2);
  CHECK(h.counts[0] == 0);
  CHECK(h.imbalance_ratio == doctest::Approx(2.0));
  CHECK_THROWS_AS(evalkit::class_histogram(m, 10), DomainError);
  CHECK_THROWS_AS(evalkit::class_histogram(m, 0), DomainError);

  DatasetManifest empty;
  CHECK(evalkit::class_histogram(empty, 4).imbalance_ratio == 0.0);
}

TEST_CASE("class weights rebalance to the dataset size") {
  std::vector<int> counts = {10, 7, 5, 1};
  auto w = evalkit::class_weights(counts);
  REQUIRE(w.size() == 4);
  double n = 23.0;
  CHECK(w[0] == doctest::Approx(n / (4 * 10)).epsilon(1e-12));
  CHECK(w[3] == doctest::Approx(n / 4).epsilon(1e-12));
  double mass = 0;
  for (std::size_t c = 0; c < w.size(); ++c) mass += w[c] * counts[c];
  CHECK(mass == doctest::Approx(n).epsilon(1e-12));

  auto flat = evalkit::class_weights({3, 3, 3});
  for (double v : flat) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(evalkit::class_weights({}), DomainError);
  CHECK_THROWS_AS(evalkit::class_weights({2, 0}), DomainError);
}

TEST_CASE("oversampling equalizes class totals") {
  std::vector<std::vector<std::size_t>> per_class = {{0, 1, 2}, {3}, {4, 5}};
  auto idx = evalkit::oversample(per_class, 7);
  CHECK(idx.size() == 9);

  std::map<std::size_t, int> hits;
  for (std::size_t i : idx) hits[i]++;
  CHECK(hits[3] == 3);
  CHECK(hits[0] >= 1);
  CHECK(hits[1] >= 1);
  CHECK(hits[2] >= 1);
  CHECK(hits[0] + hits[1] + hits[2] == 3);
  CHECK(hits[4] + hits[5] == 3);

  auto again = evalkit::oversample(per_class, 7);
  CHECK(again == idx);

  // balanced input comes back as a permutation
  auto perm = evalkit::oversample({{0, 1}, {2, 3}}, 5);
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3});

  CHECK_THROWS_AS(evalkit::oversample({{0}, {}}, 1), DomainError);
}

TEST_CASE("confusion matrix counts, flags and accuracy") {
  std::vector<int> labels = {0, 1, 0, 2};
  std::vector<int> preds = {0, 1, 1, 2};
  auto cm = evalkit::confusion_matrix(preds, labels, 4);
  CHECK(cm.k == 4);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.at(2, 2) == 1);
  CHECK(cm.total() == 4);
  CHECK(cm.accuracy() == doctest::Approx(0.75));
  CHECK(evalkit::top1_accuracy(preds, labels) == doctest::Approx(0.75));

  CHECK(cm.recall[0] == doctest::Approx(0.5));
  CHECK(cm.recall_defined[0]);
  CHECK_FALSE(cm.recall_defined[3]);
  CHECK(cm.precision[1] == doctest::Approx(0.5));
  CHECK_FALSE(cm.precision_defined[3]);
  CHECK_FALSE(cm.never_predicted[0]);
  CHECK_FALSE(cm.never_predicted[3]);

  // supported class that never lands on its own diagonal gets flagged
  auto miss = evalkit::confusion_matrix({1, 1}, {0, 1}, 2);
  CHECK(miss.never_predicted[0]);
  CHECK(miss.recall[0] == 0.0);

  CHECK_THROWS_AS(evalkit::confusion_matrix({0}, {0, 1}, 2), ShapeError);
  CHECK_THROWS_AS(evalkit::confusion_matrix({5}, {0}, 2), DomainError);
  CHECK_THROWS_AS(evalkit::confusion_matrix({0}, {0}, 0), DomainError);
  CHECK_THROWS_AS(evalkit::top1_accuracy({}, {}), DomainError);
}

TEST_CASE("confusion csv layout is stable") {
  auto cm = evalkit::confusion_matrix({0, 1, 1}, {0, 1, 0}, 2);
  std::string path = temp_path("ento_confusion.csv");
  evalkit::write_confusion_csv(path, cm, {"a", "b"});
  CHECK(slurp(path) == "true\\pred,a,b\na,1,1\nb,0,1\n");
  CHECK_THROWS_AS(evalkit::write_confusion_csv(path, cm, {"a"}), ShapeError);
  std::remove(path.c_str());
}

TEST_CASE("confusion heatmap normalizes per row") {
  auto cm = evalkit::confusion_matrix({0, 1, 1, 0}, {0, 1, 0, 0}, 2);
  // row 0: 2 and 1 -> 255 and 127; row 1: 0 and 1 -> 0 and 255
  std::string path = temp_path("ento_confusion.ppm");
  evalkit::write_confusion_heatmap(path, cm, 2);
  Frame img = io::read_ppm(path);
  CHECK(img.width == 4);
  CHECK(img.height == 4);
  CHECK(img.px(0, 0)[0] == 255);
  CHECK(img.px(1, 1)[0] == 255);
  CHECK(img.px(2, 0)[0] == 127);
  CHECK(img.px(0, 2)[0] == 0);
  CHECK(img.px(3, 3)[0] == 255);
  CHECK_THROWS_AS(evalkit::write_confusion_heatmap(path, cm, 0), DomainError);
  std::remove(path.c_str());
}

TEST_CASE("run metrics json round trip") {
  auto cm = evalkit::confusion_matrix({0, 1, 1, 0}, {0, 1, 0, 0}, 2);
  RunMetrics m = evalkit::run_metrics(cm, {"a", "b"});
  CHECK(m.overall_accuracy == doctest::Approx(0.75));
  CHECK(m.per_class_accuracy[0] == doctest::Approx(2.0 / 3));
  CHECK(m.per_class_support == std::vector<int>{3, 1});

  RunMetrics back = evalkit::metrics_from_json(evalkit::metrics_to_json(m));
  CHECK(back.class_names == m.class_names);
  CHECK(back.overall_accuracy == m.overall_accuracy);
  CHECK(back.per_class_accuracy == m.per_class_accuracy);
  CHECK(back.per_class_support == m.per_class_support);

  CHECK_THROWS_AS(evalkit::run_metrics(cm, {"a"}), ShapeError);
  nlohmann::json bad = evalkit::metrics_to_json(m);
  bad["per_class_accuracy"] = {0.5};
  CHECK_THROWS_AS(evalkit::metrics_from_json(bad), ParseError);
}

TEST_CASE("run comparison reports deltas and the worst class") {
  RunMetrics a{{"a", "b"}, 0.875, {1.0, 0.5}, {4, 4}};
  RunMetrics b{{"a", "b"}, 0.75, {0.75, 1.0}, {4, 4}};
  auto d = evalkit::compare_runs(a, b);
  CHECK(d.overall_delta == doctest::Approx(-0.125));
  CHECK(d.per_class_delta[0] == doctest::Approx(-0.25));
  CHECK(d.per_class_delta[1] == doctest::Approx(0.5));
  CHECK(d.worst_regression_class == "a");
  CHECK(d.worst_delta == doctest::Approx(-0.25));

  auto j = evalkit::delta_to_json(d);
  CHECK(j.at("worst_regression_class") == "a");

  RunMetrics other{{"a", "c"}, 0.5, {0.5, 0.5}, {1, 1}};
  CHECK_THROWS_AS(evalkit::compare_runs(a, other), DomainError);
}

TEST_CASE("dataset spec validation") {
  DatasetSpec spec;
  spec.per_class.assign(16, 2);
  CHECK_NOTHROW(evalkit::validate(spec));
  CHECK(evalkit::dataset_size(spec) == 32);

  DatasetSpec bad = spec;
  bad.classes = 0;
  CHECK_THROWS_AS(evalkit::validate(bad), ConfigError);
  bad = spec;
  bad.classes = 17;
  CHECK_THROWS_AS(evalkit::validate(bad), ConfigError);
  bad = spec;
  bad.per_class = {2, 2};
  CHECK_THROWS_AS(evalkit::validate(bad), ConfigError);
  bad = spec;
  bad.per_class[7] = 0;
  CHECK_THROWS_AS(evalkit::validate(bad), ConfigError);
  bad = spec;
  bad.full_size = 8;
  CHECK_THROWS_AS(evalkit::validate(bad), ConfigError);
  bad = spec;
  bad.margin = -0.1;
  CHECK_THROWS_AS(evalkit::validate(bad), ConfigError);
  bad = spec;
  bad.dust_specks = -1;
  CHECK_THROWS_AS(evalkit::validate(bad), ConfigError);
}

TEST_CASE("dataset labels run class major") {
  DatasetSpec spec;
  spec.classes = 3;
  spec.per_class = {2, 1, 3};
  CHECK(evalkit::dataset_size(spec) == 6);
  CHECK(evalkit::dataset_labels(spec) ==
        std::vector<int>{0, 0, 1, 2, 2, 2});
}

TEST_CASE("long tail profile decays from top to floor") {
  auto tail = evalkit::long_tail_profile(16);
  REQUIRE(tail.size() == 16);
  CHECK(tail[0] == 300);
  CHECK(tail[1] == 242);
  CHECK(tail[2] == 195);
  CHECK(tail[15] == 12);
  for (std::size_t i = 1; i < tail.size(); ++i) {
    CHECK(tail[i] <= tail[i - 1]);
    CHECK(tail[i] >= 12);
  }
  CHECK(static_cast<double>(tail[0]) / tail[15] == doctest::Approx(25.0));

  CHECK(evalkit::long_tail_profile(1, 50, 10) == std::vector<int>{50});
  CHECK_THROWS_AS(evalkit::long_tail_profile(0), DomainError);
  CHECK_THROWS_AS(evalkit::long_tail_profile(4, 10, 20), DomainError);
}

TEST_CASE("synthetic items are deterministic and self-consistent") {
  DatasetSpec spec;
  spec.classes = 16;
  spec.per_class.assign(16, 1);
  spec.full_size = 96;
  spec.crop_size = 32;
  spec.dust_specks = 2;

  for (int index : {0, 7, 15}) {
    auto a = evalkit::synth_item(spec, index);
    auto b = evalkit::synth_item(spec, index);
    CHECK(a.full == b.full);
    CHECK(a.mask == b.mask);
    CHECK(a.tight_box == b.tight_box);
    CHECK(a.square_box == b.square_box);
    CHECK(a.label == index);

    // tight box matches the mask extents
    int min_x = spec.full_size, min_y = spec.full_size, max_x = -1, max_y = -1;
    for (int y = 0; y < a.mask.height; ++y)
      for (int x = 0; x < a.mask.width; ++x)
        if (a.mask.test(x, y)) {
          min_x = std::min(min_x, x);
          min_y = std::min(min_y, y);
          max_x = std::max(max_x, x);
          max_y = std::max(max_y, y);
        }
    REQUIRE(max_x >= 0);
    CHECK(a.tight_box.x == min_x);
    CHECK(a.tight_box.y == min_y);
    CHECK(a.tight_box.right() == max_x + 1);
    CHECK(a.tight_box.bottom() == max_y + 1);
    CHECK(a.square_box ==
          detect::square_expand(a.tight_box, spec.margin, spec.full_size,
                                spec.full_size));
  }
  CHECK_THROWS_AS(evalkit::synth_item(spec, 16), DomainError);
  CHECK_THROWS_AS(evalkit::synth_item(spec, -1), DomainError);
}

TEST_CASE("crop and resize shapes, tensor scaling") {
  DatasetSpec spec;
  spec.classes = 2;
  spec.per_class = {1, 1};
  spec.full_size = 64;
  spec.crop_size = 24;

  auto item = evalkit::synth_item(spec, 1);
  Frame c = evalkit::crop_of(spec, item);
  CHECK(c.width == 24);
  CHECK(c.height == 24);
  Frame f = evalkit::full_resized_of(spec, item);
  CHECK(f.width == 24);
  CHECK(f.height == 24);

  Frame tiny(2, 1);
  tiny.set_px(0, 0, 0, 51, 255);
  tiny.set_px(1, 0, 102, 153, 204);
  auto t = evalkit::frame_to_tensor(tiny);
  CHECK(t.shape == std::vector<int>{3, 1, 2});
  CHECK(t.data[0] == doctest::Approx(0.0f));
  CHECK(t.data[1] == doctest::Approx(102.0f / 255));
  CHECK(t.data[2] == doctest::Approx(51.0f / 255));
  CHECK(t.data[4] == doctest::Approx(255.0f / 255));
  CHECK(t.data[5] == doctest::Approx(204.0f / 255));
}

TEST_CASE("dataset tensors align with labels") {
  DatasetSpec spec;
  spec.classes = 3;
  spec.per_class = {2, 1, 1};
  spec.full_size = 48;
  spec.crop_size = 16;

  std::vector<nnet::Tensor> images;
  std::vector<int> labels;
  evalkit::dataset_tensors(spec, Variant::Cropped, images, labels);
  CHECK(images.size() == 4);
  CHECK(labels == evalkit::dataset_labels(spec));
  for (const auto& t : images) CHECK(t.shape == std::vector<int>{3, 16, 16});

  std::vector<nnet::Tensor> fulls;
  evalkit::dataset_tensors(spec, Variant::Full, fulls, labels);
  CHECK(fulls[0].shape == std::vector<int>{3, 16, 16});
  CHECK(fulls[0].data != images[0].data);
}

TEST_CASE("classes stay separable for a pixel centroid matcher") {
  DatasetSpec spec;
  spec.classes = 16;
  spec.per_class.assign(16, 6);
  spec.full_size = 96;
  spec.crop_size = 24;

  std::vector<nnet::Tensor> images;
  std::vector<int> labels;
  evalkit::dataset_tensors(spec, Variant::Cropped, images, labels);

  std::size_t dim = images[0].data.size();
  std::vector<std::vector<double>> centroid(16, std::vector<double>(dim, 0));
  std::vector<int> used(16, 0);
  std::vector<std::size_t> held;
  for (std::size_t i = 0; i < images.size(); ++i) {
    int c = labels[i];
    if (used[c] < 3) {
      for (std::size_t d = 0; d < dim; ++d)
        centroid[c][d] += images[i].data[d];
      used[c]++;
    } else {
      held.push_back(i);
    }
  }
  for (auto& vec : centroid)
    for (double& v : vec) v /= 3;

  int correct = 0;
  for (std::size_t i : held) {
    int best = -1;
    double best_d = 0;
    for (int c = 0; c < 16; ++c) {
      double d2 = 0;
      for (std::size_t d = 0; d < dim; ++d) {
        double diff = images[i].data[d] - centroid[c][d];
        d2 += diff * diff;
      }
      if (best < 0 || d2 < best_d) {
        best = c;
        best_d = d2;
      }
    }
    if (best == labels[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / held.size() >= 0.6);
}

TEST_CASE("dataset export writes images and a loadable manifest") {
  DatasetSpec spec;
  spec.classes = 2;
  spec.per_class = {1, 1};
  spec.full_size = 32;
  spec.crop_size = 16;

  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "ento_dataset_export";
  fs::remove_all(dir);

  std::string mpath =
      evalkit::write_dataset(spec, bundled_tree(), dir.string(), Variant::Full);
  DatasetManifest m = evalkit::load_manifest(mpath, bundled_tree());
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0].class_index == 0);
  CHECK(m.records[1].class_index == 1);
  for (const auto& r : m.records) {
    Frame img = io::read_ppm((dir / r.image).string());
    CHECK(img.width == 32);
    REQUIRE_FALSE(r.mask.empty());
    auto mask = io::read_pgm_mask((dir / r.mask).string());
    CHECK(mask.width == 32);
    CHECK(mask.count() > 0);
  }

  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string cpath = evalkit::write_dataset(spec, bundled_tree(),
                                             dir.string(), Variant::Cropped);
  DatasetManifest cm = evalkit::load_manifest(cpath, bundled_tree());
  CHECK(cm.records[0].mask.empty());
  Frame crop = io::read_ppm((dir / cm.records[0].image).string());
  CHECK(crop.width == 16);
  fs::remove_all(dir);
}
