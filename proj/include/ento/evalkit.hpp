#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ento/detect.hpp"
#include "ento/frame.hpp"
#include "ento/nnet.hpp"
#include "ento/taxonomy.hpp"

namespace ento::evalkit {

struct ManifestRecord {
  std::string image;
  std::string species;
  std::string mask;   // empty when absent
  std::string split;  // "", "train", "val" or "test"
  int class_index = -1;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
};

// TSV image<TAB>species<TAB>[mask]<TAB>[split]. Species must exist in the
// tree; image paths must be unique. Errors carry the line number.
DatasetManifest parse_manifest(std::istream& in, const std::string& source,
                               const taxonomy::TaxonomyTree& tree);
DatasetManifest load_manifest(const std::string& path,
                              const taxonomy::TaxonomyTree& tree);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

struct SplitRatios {
  double train = 0.6, val = 0.2, test = 0.2;
};

struct SplitAssignment {
  std::vector<std::string> tags;  // aligned with the input records
  std::uint64_t seed = 0;
  // class index -> {train, val, test} counts, classes present only
  std::vector<std::array<int, 4>> class_counts;  // {class, n_train, n_val, n_test}
};

// Per-class floor(ratio*n) with the remainder going to train, then val. Each
// class is shuffled by its own seed-derived stream, so membership changes
// with the seed but per-class counts never do.
SplitAssignment stratified_split(const std::vector<int>& labels,
                                 const SplitRatios& ratios,
                                 std::uint64_t seed);
SplitAssignment stratified_split(const DatasetManifest& manifest,
                                 const SplitRatios& ratios,
                                 std::uint64_t seed);
void apply_split(DatasetManifest& manifest, const SplitAssignment& split);

struct Histogram {
  std::vector<int> counts;  // taxonomy order, length = class count
  // largest over smallest nonzero count; 0 when no class has samples
  double imbalance_ratio = 0;
};

Histogram class_histogram(const DatasetManifest& manifest, int class_count);

// w_c = N / (K * n_c); all counts must be >= 1.
std::vector<double> class_weights(const std::vector<int>& counts);

// Every record once, plus per class (max_count - n) extra draws with
// replacement; the combined index list is shuffled. Balanced input therefore
// comes back as a permutation.
std::vector<std::size_t> oversample(
    const std::vector<std::vector<std::size_t>>& per_class,
    std::uint64_t seed);

double top1_accuracy(const std::vector<int>& predictions,
                     const std::vector<int>& labels);

struct ConfusionMatrix {
  int k = 0;
  std::vector<std::int64_t> counts;  // k*k, row = true class
  std::vector<double> recall, precision;
  std::vector<bool> recall_defined, precision_defined;
  // true class seen but never predicted right
  std::vector<bool> never_predicted;

  std::int64_t at(int true_class, int pred) const;
  std::int64_t total() const;
  double accuracy() const;  // trace / total
};

ConfusionMatrix confusion_matrix(const std::vector<int>& predictions,
                                 const std::vector<int>& labels, int k);

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm,
                         const std::vector<std::string>& names);
// Row-normalized grayscale heatmap, 0 -> black, row max -> white.
void write_confusion_heatmap(const std::string& path,
                             const ConfusionMatrix& cm, int cell_px = 16);

struct RunMetrics {
  std::vector<std::string> class_names;
  double overall_accuracy = 0;
  std::vector<double> per_class_accuracy;  // recall per class
  std::vector<int> per_class_support;
};

RunMetrics run_metrics(const ConfusionMatrix& cm,
                       const std::vector<std::string>& names);
nlohmann::json metrics_to_json(const RunMetrics& m);
RunMetrics metrics_from_json(const nlohmann::json& j);

struct DeltaReport {
  double overall_delta = 0;  // b - a
  std::vector<std::string> class_names;
  std::vector<double> per_class_delta;
  std::string worst_regression_class;
  double worst_delta = 0;
};

DeltaReport compare_runs(const RunMetrics& a, const RunMetrics& b);
nlohmann::json delta_to_json(const DeltaReport& d);

// ---- synthetic dataset ----

struct DatasetSpec {
  int classes = 16;
  std::vector<int> per_class;  // length = classes, each >= 1
  int full_size = 256;
  int crop_size = 32;
  double margin = 0.05;  // square crop margin around the tight box
  int dust_specks = 0;
  int dust_max_side = 3;
  std::uint64_t seed = 1;
};

void validate(const DatasetSpec& spec);
int dataset_size(const DatasetSpec& spec);
std::vector<int> dataset_labels(const DatasetSpec& spec);
// Geometric decay 300 down to 12, the shape insect monitoring sees.
std::vector<int> long_tail_profile(int classes, int top = 300, int floor = 12);

struct SynthItem {
  Frame full;
  detect::Mask mask;
  detect::BBox tight_box;
  detect::BBox square_box;  // square_expand of tight_box with spec margin
  int label = 0;
};

// Item i of the dataset, generated from a per-item stream derived from
// (seed, i). Bit-identical for equal spec.
SynthItem synth_item(const DatasetSpec& spec, int index);

// Tight square crop of the item resized to crop_size.
Frame crop_of(const DatasetSpec& spec, const SynthItem& item);
// Whole frame resized to crop_size.
Frame full_resized_of(const DatasetSpec& spec, const SynthItem& item);

enum class Variant { Full, Cropped };

// Net-ready tensors for the whole dataset in index order.
void dataset_tensors(const DatasetSpec& spec, Variant variant,
                     std::vector<nnet::Tensor>& images,
                     std::vector<int>& labels);

// Writes PPM images, PGM masks and a manifest (species names resolved
// against the tree) under dir. Returns the manifest path.
std::string write_dataset(const DatasetSpec& spec,
                          const taxonomy::TaxonomyTree& tree,
                          const std::string& dir, Variant variant);

// [3,H,W] float tensor scaled to [0,1]
nnet::Tensor frame_to_tensor(const Frame& frame);

}  // namespace ento::evalkit
