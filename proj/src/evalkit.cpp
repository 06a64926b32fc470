#include "ento/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <unordered_set>

#include "ento/errors.hpp"
#include "ento/image_io.hpp"
#include "ento/synth.hpp"

namespace fs = std::filesystem;

namespace ento::evalkit {

DatasetManifest parse_manifest(std::istream& in, const std::string& source,
                               const taxonomy::TaxonomyTree& tree) {
  DatasetManifest m;
  std::unordered_set<std::string> seen_paths;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError(source + ":" + std::to_string(lineno) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 4)
      fail("expected 2 to 4 tab separated fields");

    ManifestRecord r;
    r.image = fields[0];
    r.species = fields[1];
    if (fields.size() > 2) r.mask = fields[2];
    if (fields.size() > 3) r.split = fields[3];
    if (r.image.empty()) fail("empty image path");
    if (!seen_paths.insert(r.image).second)
      fail("duplicate image path '" + r.image + "'");
    if (!r.split.empty() && r.split != "train" && r.split != "val" &&
        r.split != "test")
      fail("unknown split tag '" + r.split + "'");
    try {
      r.class_index = tree.species_index(r.species);
    } catch (const Error&) {
      fail("unknown species '" + r.species + "'");
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest load_manifest(const std::string& path,
                              const taxonomy::TaxonomyTree& tree) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_manifest(in, path, tree);
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const ManifestRecord& r : manifest.records) {
    out << r.image << '\t' << r.species;
    if (!r.mask.empty() || !r.split.empty()) out << '\t' << r.mask;
    if (!r.split.empty()) out << '\t' << r.split;
    out << '\n';
  }
  if (!out) throw IoError("short write to " + path);
}

SplitAssignment stratified_split(const std::vector<int>& labels,
                                 const SplitRatios& ratios,
                                 std::uint64_t seed) {
  if (labels.empty()) throw DomainError("nothing to split");
  if (!(ratios.train >= 0) || !(ratios.val >= 0) || !(ratios.test >= 0) ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw DomainError("split ratios must be non-negative and sum to 1");

  std::map<int, std::vector<std::size_t>> per_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw DomainError("negative class index");
    per_class[labels[i]].push_back(i);
  }

  SplitAssignment out;
  out.seed = seed;
  out.tags.assign(labels.size(), "");
  for (auto& [cls, idx] : per_class) {
    if (idx.empty()) throw DomainError("empty class");
    rng::Generator g = rng::Generator::child(seed, static_cast<std::uint64_t>(cls));
    g.shuffle(idx);

    auto n = static_cast<double>(idx.size());
    int nt = static_cast<int>(std::floor(ratios.train * n + 1e-9));
    int nv = static_cast<int>(std::floor(ratios.val * n + 1e-9));
    int nx = static_cast<int>(std::floor(ratios.test * n + 1e-9));
    int rem = static_cast<int>(idx.size()) - nt - nv - nx;
    // remainder to train first, then val, then test
    for (int r = 0; r < rem; ++r) {
      if (r % 3 == 0) ++nt;
      else if (r % 3 == 1) ++nv;
      else ++nx;
    }

    for (std::size_t i = 0; i < idx.size(); ++i) {
      const char* tag = i < static_cast<std::size_t>(nt)             ? "train"
                        : i < static_cast<std::size_t>(nt + nv)      ? "val"
                                                                     : "test";
      out.tags[idx[i]] = tag;
    }
    out.class_counts.push_back({cls, nt, nv, nx});
  }
  return out;
}

SplitAssignment stratified_split(const DatasetManifest& manifest,
                                 const SplitRatios& ratios,
                                 std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(manifest.records.size());
  for (const ManifestRecord& r : manifest.records)
    labels.push_back(r.class_index);
  return stratified_split(labels, ratios, seed);
}

void apply_split(DatasetManifest& manifest, const SplitAssignment& split) {
  if (split.tags.size() != manifest.records.size())
    throw ShapeError("split does not match the manifest");
  for (std::size_t i = 0; i < split.tags.size(); ++i)
    manifest.records[i].split = split.tags[i];
}

Histogram class_histogram(const DatasetManifest& manifest, int class_count) {
  if (class_count < 1) throw DomainError("class count must be positive");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(class_count), 0);
  for (const ManifestRecord& r : manifest.records) {
    if (r.class_index < 0 || r.class_index >= class_count)
      throw DomainError("record class outside histogram range");
    ++h.counts[static_cast<std::size_t>(r.class_index)];
  }
  int lo = 0, hi = 0;
  for (int c : h.counts) {
    if (c == 0) continue;
    if (lo == 0 || c < lo) lo = c;
    hi = std::max(hi, c);
  }
  h.imbalance_ratio = lo ? static_cast<double>(hi) / lo : 0.0;
  return h;
}

std::vector<double> class_weights(const std::vector<int>& counts) {
  if (counts.empty()) throw DomainError("no classes");
  double total = 0;
  for (int c : counts) {
    if (c < 1) throw DomainError("class counts must be at least 1");
    total += c;
  }
  std::vector<double> w(counts.size());
  double k = static_cast<double>(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    w[i] = total / (k * static_cast<double>(counts[i]));
  return w;
}

std::vector<std::size_t> oversample(
    const std::vector<std::vector<std::size_t>>& per_class,
    std::uint64_t seed) {
  std::size_t max_count = 0;
  for (const auto& cls : per_class) {
    if (cls.empty()) throw DomainError("empty class");
    max_count = std::max(max_count, cls.size());
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& cls = per_class[c];
    out.insert(out.end(), cls.begin(), cls.end());
    rng::Generator g = rng::Generator::child(seed, c);
    for (std::size_t extra = cls.size(); extra < max_count; ++extra)
      out.push_back(cls[g.below(cls.size())]);
  }
  rng::Generator g = rng::Generator::child(seed, 0xffffffffull);
  g.shuffle(out);
  return out;
}

double top1_accuracy(const std::vector<int>& predictions,
                     const std::vector<int>& labels) {
  if (predictions.empty()) throw DomainError("no predictions");
  if (predictions.size() != labels.size())
    throw ShapeError("prediction and label counts differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::int64_t ConfusionMatrix::at(int true_class, int pred) const {
  if (true_class < 0 || true_class >= k || pred < 0 || pred >= k)
    throw DomainError("confusion index out of range");
  return counts[static_cast<std::size_t>(true_class) * k + pred];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (std::int64_t c : counts) t += c;
  return t;
}

double ConfusionMatrix::accuracy() const {
  std::int64_t t = total();
  if (!t) return 0.0;
  std::int64_t diag = 0;
  for (int i = 0; i < k; ++i) diag += at(i, i);
  return static_cast<double>(diag) / static_cast<double>(t);
}

ConfusionMatrix confusion_matrix(const std::vector<int>& predictions,
                                 const std::vector<int>& labels, int k) {
  if (k < 1) throw DomainError("class count must be positive");
  if (predictions.size() != labels.size())
    throw ShapeError("prediction and label counts differ");
  ConfusionMatrix cm;
  cm.k = k;
  cm.counts.assign(static_cast<std::size_t>(k) * k, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    int t = labels[i], p = predictions[i];
    if (t < 0 || t >= k || p < 0 || p >= k)
      throw DomainError("class index out of range");
    ++cm.counts[static_cast<std::size_t>(t) * k + p];
  }
  cm.recall.assign(static_cast<std::size_t>(k), 0.0);
  cm.precision.assign(static_cast<std::size_t>(k), 0.0);
  cm.recall_defined.assign(static_cast<std::size_t>(k), false);
  cm.precision_defined.assign(static_cast<std::size_t>(k), false);
  cm.never_predicted.assign(static_cast<std::size_t>(k), false);
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    std::int64_t diag = cm.at(c, c);
    if (row) {
      cm.recall[static_cast<std::size_t>(c)] =
          static_cast<double>(diag) / static_cast<double>(row);
      cm.recall_defined[static_cast<std::size_t>(c)] = true;
      if (!diag) cm.never_predicted[static_cast<std::size_t>(c)] = true;
    }
    if (col) {
      cm.precision[static_cast<std::size_t>(c)] =
          static_cast<double>(diag) / static_cast<double>(col);
      cm.precision_defined[static_cast<std::size_t>(c)] = true;
    }
  }
  return cm;
}

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm,
                         const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != cm.k)
    throw ShapeError("name list does not match matrix size");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "true\\pred";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (int t = 0; t < cm.k; ++t) {
    out << names[static_cast<std::size_t>(t)];
    for (int p = 0; p < cm.k; ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
  if (!out) throw IoError("short write to " + path);
}

void write_confusion_heatmap(const std::string& path,
                             const ConfusionMatrix& cm, int cell_px) {
  if (cell_px < 1) throw DomainError("cell size must be positive");
  int side = cm.k * cell_px;
  Frame img(side, side);
  for (int t = 0; t < cm.k; ++t) {
    std::int64_t row_max = 0;
    for (int p = 0; p < cm.k; ++p) row_max = std::max(row_max, cm.at(t, p));
    for (int p = 0; p < cm.k; ++p) {
      auto v = static_cast<std::uint8_t>(
          row_max ? (255 * cm.at(t, p)) / row_max : 0);
      for (int y = t * cell_px; y < (t + 1) * cell_px; ++y)
        for (int x = p * cell_px; x < (p + 1) * cell_px; ++x)
          img.set_px(x, y, v, v, v);
    }
  }
  io::write_ppm(path, img);
}

RunMetrics run_metrics(const ConfusionMatrix& cm,
                       const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != cm.k)
    throw ShapeError("name list does not match matrix size");
  RunMetrics m;
  m.class_names = names;
  m.overall_accuracy = cm.accuracy();
  m.per_class_accuracy = cm.recall;
  m.per_class_support.resize(static_cast<std::size_t>(cm.k));
  for (int c = 0; c < cm.k; ++c) {
    std::int64_t row = 0;
    for (int j = 0; j < cm.k; ++j) row += cm.at(c, j);
    m.per_class_support[static_cast<std::size_t>(c)] = static_cast<int>(row);
  }
  return m;
}

nlohmann::json metrics_to_json(const RunMetrics& m) {
  return nlohmann::json{{"class_names", m.class_names},
                        {"overall_accuracy", m.overall_accuracy},
                        {"per_class_accuracy", m.per_class_accuracy},
                        {"per_class_support", m.per_class_support}};
}

RunMetrics metrics_from_json(const nlohmann::json& j) {
  RunMetrics m;
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.overall_accuracy = j.at("overall_accuracy").get<double>();
  m.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
  if (j.contains("per_class_support"))
    m.per_class_support = j.at("per_class_support").get<std::vector<int>>();
  if (m.per_class_accuracy.size() != m.class_names.size())
    throw ParseError("metrics fields disagree on class count");
  return m;
}

DeltaReport compare_runs(const RunMetrics& a, const RunMetrics& b) {
  if (a.class_names != b.class_names)
    throw DomainError("runs cover different class sets");
  if (a.per_class_accuracy.size() != b.per_class_accuracy.size())
    throw ShapeError("per-class metric lengths differ");
  DeltaReport d;
  d.class_names = a.class_names;
  d.overall_delta = b.overall_accuracy - a.overall_accuracy;
  d.per_class_delta.resize(a.per_class_accuracy.size());
  std::size_t worst = 0;
  for (std::size_t i = 0; i < a.per_class_accuracy.size(); ++i) {
    d.per_class_delta[i] = b.per_class_accuracy[i] - a.per_class_accuracy[i];
    if (d.per_class_delta[i] < d.per_class_delta[worst]) worst = i;
  }
  d.worst_regression_class = d.class_names[worst];
  d.worst_delta = d.per_class_delta[worst];
  return d;
}

nlohmann::json delta_to_json(const DeltaReport& d) {
  return nlohmann::json{{"class_names", d.class_names},
                        {"overall_delta", d.overall_delta},
                        {"per_class_delta", d.per_class_delta},
                        {"worst_regression_class", d.worst_regression_class},
                        {"worst_delta", d.worst_delta}};
}

void validate(const DatasetSpec& spec) {
  if (spec.classes < 1 || spec.classes > synth::kClassCount)
    throw ConfigError("classes must be 1.." +
                      std::to_string(synth::kClassCount));
  if (spec.per_class.size() != static_cast<std::size_t>(spec.classes))
    throw ConfigError("per_class length must equal the class count");
  for (int c : spec.per_class)
    if (c < 1) throw ConfigError("per_class entries must be at least 1");
  if (spec.full_size < 16 || spec.crop_size < 16)
    throw ConfigError("image sizes must be at least 16 px");
  if (!(spec.margin >= 0)) throw ConfigError("margin must be non-negative");
  if (spec.dust_specks < 0 || spec.dust_max_side < 1)
    throw ConfigError("bad dust settings");
}

int dataset_size(const DatasetSpec& spec) {
  validate(spec);
  int n = 0;
  for (int c : spec.per_class) n += c;
  return n;
}

std::vector<int> dataset_labels(const DatasetSpec& spec) {
  validate(spec);
  std::vector<int> labels;
  for (int c = 0; c < spec.classes; ++c)
    labels.insert(labels.end(),
                  static_cast<std::size_t>(spec.per_class[static_cast<std::size_t>(c)]),
                  c);
  return labels;
}

std::vector<int> long_tail_profile(int classes, int top, int floor) {
  if (classes < 1 || floor < 1 || top < floor)
    throw DomainError("bad long tail parameters");
  std::vector<int> out(static_cast<std::size_t>(classes));
  if (classes == 1) {
    out[0] = top;
    return out;
  }
  double decay = std::log(static_cast<double>(floor) / top) / (classes - 1);
  for (int i = 0; i < classes; ++i)
    out[static_cast<std::size_t>(i)] = std::max(
        floor, static_cast<int>(std::lround(top * std::exp(decay * i))));
  return out;
}

SynthItem synth_item(const DatasetSpec& spec, int index) {
  validate(spec);
  if (index < 0 || index >= dataset_size(spec))
    throw DomainError("dataset index out of range");
  std::vector<int> labels = dataset_labels(spec);

  SynthItem item;
  item.label = labels[static_cast<std::size_t>(index)];
  rng::Generator g = rng::Generator::child(spec.seed, static_cast<std::uint64_t>(index));

  item.full = Frame(spec.full_size, spec.full_size);
  item.mask = detect::Mask(spec.full_size, spec.full_size);
  synth::fill_background(item.full, g);
  synth::Pose pose =
      synth::sample_pose(spec.full_size, spec.full_size, g, 0.0, 0.25);
  synth::InsectStyle style = synth::style_for_class(item.label);
  item.tight_box = synth::render_insect(item.full, item.mask, style, pose);
  item.square_box = detect::square_expand(item.tight_box, spec.margin,
                                          spec.full_size, spec.full_size);
  if (spec.dust_specks > 0)
    synth::add_dust(item.full, item.tight_box, spec.dust_specks,
                    spec.dust_max_side, g);
  return item;
}

Frame crop_of(const DatasetSpec& spec, const SynthItem& item) {
  Frame c = detect::crop(item.full, item.square_box);
  return detect::resize_bilinear(c, spec.crop_size, spec.crop_size);
}

Frame full_resized_of(const DatasetSpec& spec, const SynthItem& item) {
  return detect::resize_bilinear(item.full, spec.crop_size, spec.crop_size);
}

void dataset_tensors(const DatasetSpec& spec, Variant variant,
                     std::vector<nnet::Tensor>& images,
                     std::vector<int>& labels) {
  int n = dataset_size(spec);
  images.clear();
  images.reserve(static_cast<std::size_t>(n));
  labels.clear();
  labels.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SynthItem item = synth_item(spec, i);
    Frame f = variant == Variant::Cropped ? crop_of(spec, item)
                                          : full_resized_of(spec, item);
    images.push_back(frame_to_tensor(f));
    labels.push_back(item.label);
  }
}

std::string write_dataset(const DatasetSpec& spec,
                          const taxonomy::TaxonomyTree& tree,
                          const std::string& dir, Variant variant) {
  validate(spec);
  if (spec.classes > tree.species_count())
    throw ConfigError("taxonomy has fewer species than dataset classes");
  fs::create_directories(dir);
  DatasetManifest manifest;
  int n = dataset_size(spec);
  char name[64];
  for (int i = 0; i < n; ++i) {
    SynthItem item = synth_item(spec, i);
    // full variant keeps the whole frame; shrinking happens at training time
    Frame img = variant == Variant::Cropped ? crop_of(spec, item) : item.full;
    std::snprintf(name, sizeof name, "img_%05d.ppm", i);
    io::write_ppm((fs::path(dir) / name).string(), img);

    ManifestRecord r;
    r.image = name;
    r.species = tree.entry(item.label).species;
    r.class_index = item.label;
    if (variant == Variant::Full) {
      std::snprintf(name, sizeof name, "mask_%05d.pgm", i);
      io::write_pgm_mask((fs::path(dir) / name).string(), item.mask);
      r.mask = name;
    }
    manifest.records.push_back(std::move(r));
  }
  std::string mpath = (fs::path(dir) / "manifest.tsv").string();
  save_manifest(mpath, manifest);
  return mpath;
}

nnet::Tensor frame_to_tensor(const Frame& frame) {
  nnet::Tensor t({3, frame.height, frame.width});
  std::size_t plane = static_cast<std::size_t>(frame.height) * frame.width;
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * frame.width + x;
      const std::uint8_t* px = frame.px(x, y);
      t.data[p] = static_cast<float>(px[0]) / 255.0f;
      t.data[plane + p] = static_cast<float>(px[1]) / 255.0f;
      t.data[2 * plane + p] = static_cast<float>(px[2]) / 255.0f;
    }
  return t;
}

}  // namespace ento::evalkit
