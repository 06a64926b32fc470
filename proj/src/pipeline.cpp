#include "ento/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "ento/image_io.hpp"
#include "ento/rng.hpp"

namespace fs = std::filesystem;

namespace ento::pipeline {

namespace {

constexpr std::uint64_t kTransitStream = 0x74;

template <typename F>
auto stage(const char* name, F&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

template <typename T>
T field_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("bad value for \"") + key + "\"");
  }
}

nlohmann::json block(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) return nlohmann::json::object();
  if (!j.at(key).is_object())
    throw ConfigError(std::string("\"") + key + "\" must be an object");
  return j.at(key);
}

std::vector<int> per_class_from_json(const nlohmann::json& j, int classes,
                                     int fallback) {
  if (!j.is_object() || !j.contains("per_class"))
    return std::vector<int>(classes, fallback);
  const auto& v = j.at("per_class");
  if (v.is_number_integer())
    return std::vector<int>(classes, v.get<int>());
  if (v.is_array()) {
    auto out = v.get<std::vector<int>>();
    if (static_cast<int>(out.size()) != classes)
      throw ConfigError("per_class length does not match classes");
    return out;
  }
  throw ConfigError("per_class must be an integer or an array");
}

}  // namespace

evalkit::DatasetSpec dataset_from_json(const nlohmann::json& j,
                                       std::uint64_t seed) {
  evalkit::DatasetSpec d;
  d.classes = field_or(j, "classes", d.classes);
  d.per_class = per_class_from_json(j, d.classes, 8);
  d.full_size = field_or(j, "full_size", d.full_size);
  d.crop_size = field_or(j, "crop_size", d.crop_size);
  d.margin = field_or(j, "margin", d.margin);
  d.dust_specks = field_or(j, "dust_specks", d.dust_specks);
  d.dust_max_side = field_or(j, "dust_max_side", d.dust_max_side);
  d.seed = seed;
  return d;
}

nlohmann::json dataset_to_json(const evalkit::DatasetSpec& d) {
  nlohmann::json j;
  j["classes"] = d.classes;
  j["per_class"] = d.per_class;
  j["full_size"] = d.full_size;
  j["crop_size"] = d.crop_size;
  j["margin"] = d.margin;
  j["dust_specks"] = d.dust_specks;
  j["dust_max_side"] = d.dust_max_side;
  return j;
}

evalkit::SplitRatios split_from_json(const nlohmann::json& j) {
  evalkit::SplitRatios r;
  r.train = field_or(j, "train", r.train);
  r.val = field_or(j, "val", r.val);
  r.test = field_or(j, "test", r.test);
  return r;
}

nlohmann::json split_to_json(const evalkit::SplitRatios& r) {
  return {{"train", r.train}, {"val", r.val}, {"test", r.test}};
}

nnet::TrainConfig train_from_json(const nlohmann::json& j,
                                  std::uint64_t seed) {
  nnet::TrainConfig t;
  t.learning_rate = field_or(j, "learning_rate", t.learning_rate);
  t.momentum = field_or(j, "momentum", t.momentum);
  t.batch_size = field_or(j, "batch_size", t.batch_size);
  t.epochs = field_or(j, "epochs", t.epochs);
  t.seed = seed;
  auto path = field_or<std::string>(j, "conv_path", "im2col");
  if (path == "im2col")
    t.conv_path = nnet::ConvPath::Im2col;
  else if (path == "direct")
    t.conv_path = nnet::ConvPath::Direct;
  else
    throw ConfigError("conv_path must be \"im2col\" or \"direct\"");
  return t;
}

nlohmann::json train_to_json(const nnet::TrainConfig& t) {
  nlohmann::json j;
  j["learning_rate"] = t.learning_rate;
  j["momentum"] = t.momentum;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["conv_path"] =
      t.conv_path == nnet::ConvPath::Im2col ? "im2col" : "direct";
  return j;
}

imaging::TransitSpec transit_from_json(const nlohmann::json& j) {
  imaging::TransitSpec t;
  t.frame_count = field_or(j, "frame_count", t.frame_count);
  t.width = field_or(j, "width", t.width);
  t.height = field_or(j, "height", t.height);
  t.class_id = field_or(j, "class_id", t.class_id);
  t.flash_start = field_or(j, "flash_start", t.flash_start);
  t.flash_count = field_or(j, "flash_count", t.flash_count);
  t.ambient_gray = field_or(j, "ambient_gray", t.ambient_gray);
  t.flash_gray = field_or(j, "flash_gray", t.flash_gray);
  t.noise = field_or(j, "noise", t.noise);
  return t;
}

nlohmann::json transit_to_json(const imaging::TransitSpec& t) {
  nlohmann::json j;
  j["frame_count"] = t.frame_count;
  j["width"] = t.width;
  j["height"] = t.height;
  j["class_id"] = t.class_id;
  j["flash_start"] = t.flash_start;
  j["flash_count"] = t.flash_count;
  j["ambient_gray"] = t.ambient_gray;
  j["flash_gray"] = t.flash_gray;
  j["noise"] = t.noise;
  return j;
}

imaging::TriggerConfig trigger_from_json(const nlohmann::json& j) {
  imaging::TriggerConfig t;
  t.window = field_or(j, "window", t.window);
  t.ratio = field_or(j, "ratio", t.ratio);
  t.cooldown = field_or(j, "cooldown", t.cooldown);
  t.followup_count = field_or(j, "followup_count", t.followup_count);
  t.followup_stride = field_or(j, "followup_stride", t.followup_stride);
  return t;
}

nlohmann::json trigger_to_json(const imaging::TriggerConfig& t) {
  nlohmann::json j;
  j["window"] = t.window;
  j["ratio"] = t.ratio;
  j["cooldown"] = t.cooldown;
  j["followup_count"] = t.followup_count;
  j["followup_stride"] = t.followup_stride;
  return j;
}

CropParams crop_from_json(const nlohmann::json& j) {
  CropParams c;
  c.threshold = field_or(j, "threshold", c.threshold);
  c.connectivity = field_or(j, "connectivity", c.connectivity);
  c.min_area = field_or(j, "min_area", c.min_area);
  c.margin = field_or(j, "margin", c.margin);
  return c;
}

nlohmann::json crop_to_json(const CropParams& c) {
  nlohmann::json j;
  j["threshold"] = c.threshold;
  j["connectivity"] = c.connectivity;
  j["min_area"] = c.min_area;
  j["margin"] = c.margin;
  return j;
}

namespace {

std::string required_path(const nlohmann::json& j, const char* key) {
  auto p = field_or<std::string>(j, key, "");
  if (p.empty())
    throw ConfigError(std::string("config is missing \"") + key + "\"");
  return p;
}

void require_exists(const std::string& path, const char* what) {
  if (!fs::exists(path))
    throw ConfigError(std::string(what) + " not found: " + path);
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::vector<std::string> species_names(const taxonomy::TaxonomyTree& tree,
                                       int k) {
  std::vector<std::string> names;
  names.reserve(k);
  for (int i = 0; i < k; ++i)
    names.push_back(tree.entry(i).label(taxonomy::Rank::Species));
  return names;
}

nlohmann::json decision_to_json(const taxonomy::Decision& d) {
  nlohmann::json j;
  j["rank"] = taxonomy::rank_name(d.rank);
  j["name"] = d.name;
  j["probability"] = d.probability;
  j["meets_threshold"] = d.meets_threshold;
  return j;
}

nlohmann::json bbox_to_json(const detect::BBox& b) {
  return {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}};
}

struct SplitSets {
  std::vector<nnet::Tensor> train_images, val_images, test_images;
  std::vector<int> train_labels, val_labels, test_labels;
};

SplitSets partition(const std::vector<nnet::Tensor>& images,
                    const std::vector<int>& labels,
                    const evalkit::SplitAssignment& split) {
  SplitSets s;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& tag = split.tags[i];
    if (tag == "train") {
      s.train_images.push_back(images[i]);
      s.train_labels.push_back(labels[i]);
    } else if (tag == "val") {
      s.val_images.push_back(images[i]);
      s.val_labels.push_back(labels[i]);
    } else {
      s.test_images.push_back(images[i]);
      s.test_labels.push_back(labels[i]);
    }
  }
  return s;
}

int input_side(const nnet::NetSpec& net) {
  if (net.input.size() != 3 || net.input[0] != 3)
    throw ConfigError("net input must be [3,H,W]");
  if (net.input[1] != net.input[2])
    throw ConfigError("net input must be square");
  return net.input[1];
}

}  // namespace

StageError::StageError(const std::string& stage, const std::string& msg)
    : Error("stage " + stage + ": " + msg), stage_(stage) {}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  cfg.seed = field_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.taxonomy_path = required_path(j, "taxonomy");
  cfg.netspec_path = required_path(j, "netspec");
  cfg.params_path = field_or<std::string>(j, "params", "");
  cfg.train_data = dataset_from_json(block(j, "train_data"), cfg.seed);
  cfg.split = split_from_json(block(j, "split"));
  cfg.train = train_from_json(block(j, "train"), cfg.seed);
  cfg.transit = transit_from_json(block(j, "transit"));
  cfg.trigger = trigger_from_json(block(j, "trigger"));
  cfg.crop = crop_from_json(block(j, "crop"));
  cfg.decision_threshold =
      field_or(j, "decision_threshold", cfg.decision_threshold);
  return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["taxonomy"] = cfg.taxonomy_path;
  j["netspec"] = cfg.netspec_path;
  j["params"] = cfg.params_path;
  j["train_data"] = dataset_to_json(cfg.train_data);
  j["split"] = split_to_json(cfg.split);
  j["train"] = train_to_json(cfg.train);
  j["transit"] = transit_to_json(cfg.transit);
  j["trigger"] = trigger_to_json(cfg.trigger);
  j["crop"] = crop_to_json(cfg.crop);
  j["decision_threshold"] = cfg.decision_threshold;
  return j;
}

RunConfig load_run_config(const std::string& path) {
  auto cfg = run_config_from_json(read_json_file(path));
  require_exists(cfg.taxonomy_path, "taxonomy");
  require_exists(cfg.netspec_path, "netspec");
  if (!cfg.params_path.empty()) require_exists(cfg.params_path, "params");
  return cfg;
}

RunRecord run_pipeline(const RunConfig& cfg, const std::string& run_dir) {
  // Load phase: nothing touches the disk until the config proves sound.
  require_exists(cfg.taxonomy_path, "taxonomy");
  require_exists(cfg.netspec_path, "netspec");
  auto tree = taxonomy::TaxonomyTree::parse_file(cfg.taxonomy_path);
  auto net = nnet::load_netspec(cfg.netspec_path);
  if (tree.species_count() != net.classes)
    throw ConfigError("taxonomy species count does not match net classes");
  int side = input_side(net);

  bool pretrained = !cfg.params_path.empty();
  nnet::Params params;
  if (pretrained) {
    require_exists(cfg.params_path, "params");
    params = nnet::load_params(cfg.params_path, net);
  } else {
    if (cfg.train_data.crop_size != side)
      throw ConfigError("train_data crop_size must match the net input");
    evalkit::validate(cfg.train_data);
    nnet::validate(cfg.train);
  }
  imaging::validate(cfg.transit);
  imaging::validate(cfg.trigger);
  if (!(cfg.decision_threshold > 0) || cfg.decision_threshold > 1)
    throw ConfigError("decision_threshold must be in (0, 1]");

  RunRecord record;
  record.run_id = timestamp_utc() + "-s" + std::to_string(cfg.seed);
  record.run_dir = run_dir;
  record.config = run_config_to_json(cfg);

  fs::create_directories(fs::path(run_dir) / "crops");

  auto names = species_names(tree, net.classes);
  bool trained = false;
  evalkit::RunMetrics test_metrics;

  if (!pretrained) {
    stage("train", [&] {
      auto ds = cfg.train_data;
      ds.seed = cfg.seed;
      std::vector<nnet::Tensor> images;
      std::vector<int> labels;
      evalkit::dataset_tensors(ds, evalkit::Variant::Cropped, images, labels);
      auto split = evalkit::stratified_split(labels, cfg.split, cfg.seed);
      auto sets = partition(images, labels, split);
      params = nnet::init_params(net, cfg.seed);
      auto tc = cfg.train;
      tc.seed = cfg.seed;
      auto log = nnet::train(net, params, sets.train_images,
                             sets.train_labels, sets.val_images,
                             sets.val_labels, tc);
      nnet::save_params((fs::path(run_dir) / "params.bin").string(), params);
      record.artifacts.push_back("params.bin");

      nlohmann::json epochs = nlohmann::json::array();
      for (const auto& e : log)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_accuracy", e.val_accuracy}});
      write_text(fs::path(run_dir) / "train_log.json", epochs.dump(2) + "\n");
      record.artifacts.push_back("train_log.json");

      if (!sets.test_images.empty()) {
        auto preds = nnet::predict_classes(net, params, sets.test_images,
                                           tc.conv_path);
        auto cm = evalkit::confusion_matrix(preds, sets.test_labels,
                                            net.classes);
        test_metrics = evalkit::run_metrics(cm, names);
        trained = true;
      }
      return 0;
    });
  }

  auto transit = stage("simulate", [&] {
    rng::Generator g = rng::Generator::child(cfg.seed, kTransitStream);
    return imaging::synth_transit(cfg.transit, g);
  });

  auto events = stage("trigger", [&] {
    std::vector<double> lumas;
    lumas.reserve(transit.frames.size());
    for (const auto& f : transit.frames)
      lumas.push_back(imaging::mean_luminance(f));
    auto ev = imaging::detect_triggers(lumas, cfg.trigger);
    if (ev.empty()) throw Error("no capture events in the frame series");
    return ev;
  });

  std::vector<Frame> crops;
  stage("detect", [&] {
    int n = 0;
    for (const auto& ev : events) {
      for (auto idx : ev.frame_indices) {
        const Frame& f = transit.frames[idx];
        auto mask = detect::threshold_mask(f, cfg.crop.threshold);
        detect::CropConfig cc;
        cc.connectivity = cfg.crop.connectivity;
        cc.min_area =
            detect::scaled_min_area(cfg.crop.min_area, f.width, f.height);
        cc.margin = cfg.crop.margin;
        auto tight = detect::mask_to_bbox(mask, cc);
        auto square =
            detect::square_expand(tight, cfg.crop.margin, f.width, f.height);
        auto crop = detect::resize_bilinear(detect::crop(f, square), side,
                                            side);
        char name[32];
        std::snprintf(name, sizeof name, "crops/crop_%03d.ppm", n++);
        io::write_ppm((fs::path(run_dir) / name).string(), crop);
        record.artifacts.push_back(name);
        crops.push_back(std::move(crop));

        CaptureResult cr;
        cr.trigger_index = ev.trigger_index;
        cr.frame_index = idx;
        cr.box = square;
        cr.crop_path = name;
        record.captures.push_back(std::move(cr));
      }
    }
    return 0;
  });

  stage("predict", [&] {
    nlohmann::json preds = nlohmann::json::array();
    for (std::size_t i = 0; i < crops.size(); ++i) {
      auto& cap = record.captures[i];
      cap.probs = nnet::predict(net, params, evalkit::frame_to_tensor(crops[i]),
                                cfg.train.conv_path);
      cap.decision = taxonomy::decide(tree, cap.probs,
                                      cfg.decision_threshold);
      nlohmann::json p;
      p["trigger_index"] = cap.trigger_index;
      p["frame_index"] = cap.frame_index;
      p["box"] = bbox_to_json(cap.box);
      p["crop"] = cap.crop_path;
      p["probs"] = cap.probs;
      p["decision"] = decision_to_json(cap.decision);
      preds.push_back(std::move(p));
    }
    write_text(fs::path(run_dir) / "predictions.json", preds.dump(2) + "\n");
    record.artifacts.push_back("predictions.json");
    return 0;
  });

  stage("metrics", [&] {
    nlohmann::json m;
    int correct = 0;
    nlohmann::json decisions = nlohmann::json::array();
    std::vector<int> pred_classes;
    for (const auto& cap : record.captures) {
      int pc = static_cast<int>(
          std::max_element(cap.probs.begin(), cap.probs.end()) -
          cap.probs.begin());
      pred_classes.push_back(pc);
      if (pc == cfg.transit.class_id) ++correct;
      decisions.push_back(decision_to_json(cap.decision));
    }
    m["capture_count"] = record.captures.size();
    m["capture_accuracy"] =
        record.captures.empty()
            ? 0.0
            : static_cast<double>(correct) / record.captures.size();
    m["predicted_classes"] = pred_classes;
    m["true_class"] = cfg.transit.class_id;
    m["decisions"] = decisions;
    if (trained) m["test"] = evalkit::metrics_to_json(test_metrics);
    write_text(fs::path(run_dir) / "metrics.json", m.dump(2) + "\n");
    record.metrics_path = "metrics.json";
    record.artifacts.push_back("metrics.json");
    return 0;
  });

  write_text(fs::path(run_dir) / "run.json",
             record_to_json(record).dump(2) + "\n");
  return record;
}

nlohmann::json record_to_json(const RunRecord& record) {
  nlohmann::json j;
  j["run_id"] = record.run_id;
  j["run_dir"] = record.run_dir;
  j["config"] = record.config;
  j["artifacts"] = record.artifacts;
  j["metrics"] = record.metrics_path;
  nlohmann::json caps = nlohmann::json::array();
  for (const auto& c : record.captures) {
    nlohmann::json e;
    e["trigger_index"] = c.trigger_index;
    e["frame_index"] = c.frame_index;
    e["box"] = bbox_to_json(c.box);
    e["crop"] = c.crop_path;
    e["decision"] = decision_to_json(c.decision);
    caps.push_back(std::move(e));
  }
  j["captures"] = caps;
  return j;
}

RunConfig config_from_record(const std::string& run_json_path) {
  auto j = read_json_file(run_json_path);
  if (!j.contains("config"))
    throw ConfigError(run_json_path + ": no config snapshot");
  return run_config_from_json(j.at("config"));
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  cfg.seed = field_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.taxonomy_path = required_path(j, "taxonomy");
  cfg.netspec_path = required_path(j, "netspec");
  cfg.data = dataset_from_json(block(j, "data"), cfg.seed);
  cfg.split = split_from_json(block(j, "split"));
  cfg.train = train_from_json(block(j, "train"), cfg.seed);
  return cfg;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["taxonomy"] = cfg.taxonomy_path;
  j["netspec"] = cfg.netspec_path;
  j["data"] = dataset_to_json(cfg.data);
  j["split"] = split_to_json(cfg.split);
  j["train"] = train_to_json(cfg.train);
  return j;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  auto cfg = experiment_config_from_json(read_json_file(path));
  require_exists(cfg.taxonomy_path, "taxonomy");
  require_exists(cfg.netspec_path, "netspec");
  return cfg;
}

ExperimentReport experiment_full_vs_cropped(const ExperimentConfig& cfg,
                                            const std::string& out_dir) {
  auto tree = taxonomy::TaxonomyTree::parse_file(cfg.taxonomy_path);
  auto net = nnet::load_netspec(cfg.netspec_path);
  auto ds = cfg.data;
  ds.seed = cfg.seed;
  evalkit::validate(ds);
  if (net.classes != ds.classes)
    throw ConfigError("net classes do not match the dataset");
  if (tree.species_count() < ds.classes)
    throw ConfigError("taxonomy has fewer species than dataset classes");
  if (ds.crop_size != input_side(net))
    throw ConfigError("dataset crop_size must match the net input");
  auto tc = cfg.train;
  tc.seed = cfg.seed;
  nnet::validate(tc);

  fs::create_directories(out_dir);

  auto labels = evalkit::dataset_labels(ds);
  auto split = evalkit::stratified_split(labels, cfg.split, cfg.seed);
  auto init = nnet::init_params(net, cfg.seed);
  auto names = species_names(tree, ds.classes);

  ExperimentReport report;
  for (auto variant : {evalkit::Variant::Full, evalkit::Variant::Cropped}) {
    bool cropped = variant == evalkit::Variant::Cropped;
    std::vector<nnet::Tensor> images;
    std::vector<int> tensor_labels;
    evalkit::dataset_tensors(ds, variant, images, tensor_labels);
    auto sets = partition(images, tensor_labels, split);

    auto params = init;
    nnet::train(net, params, sets.train_images, sets.train_labels,
                sets.val_images, sets.val_labels, tc);
    auto preds = nnet::predict_classes(net, params, sets.test_images,
                                       tc.conv_path);
    auto cm = evalkit::confusion_matrix(preds, sets.test_labels, ds.classes);

    std::string csv = cropped ? "confusion_cropped.csv" : "confusion_full.csv";
    evalkit::write_confusion_csv((fs::path(out_dir) / csv).string(), cm,
                                 names);
    auto metrics = evalkit::run_metrics(cm, names);
    if (cropped) {
      report.cropped = metrics;
      report.cropped_confusion_path = csv;
    } else {
      report.full = metrics;
      report.full_confusion_path = csv;
    }
  }

  report.delta = evalkit::compare_runs(report.full, report.cropped);
  write_text(fs::path(out_dir) / "report.json",
             experiment_to_json(report).dump(2) + "\n");
  return report;
}

nlohmann::json experiment_to_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["full"] = evalkit::metrics_to_json(report.full);
  j["cropped"] = evalkit::metrics_to_json(report.cropped);
  j["delta"] = evalkit::delta_to_json(report.delta);
  j["full_confusion"] = report.full_confusion_path;
  j["cropped_confusion"] = report.cropped_confusion_path;
  return j;
}

}  // namespace ento::pipeline
