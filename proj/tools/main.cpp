#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ento/detect.hpp"
#include "ento/errors.hpp"
#include "ento/evalkit.hpp"
#include "ento/image_io.hpp"
#include "ento/imaging.hpp"
#include "ento/nnet.hpp"
#include "ento/optics.hpp"
#include "ento/pipeline.hpp"
#include "ento/rng.hpp"
#include "ento/taxonomy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ento;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json block(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) return json::object();
  return j.at(key);
}

std::string config_string(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_string())
    throw ConfigError(std::string("config is missing \"") + key + "\"");
  return j.at(key).get<std::string>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
}

std::string need_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  return out;
}

json decision_json(const taxonomy::Decision& d) {
  return {{"rank", taxonomy::rank_name(d.rank)},
          {"name", d.name},
          {"probability", d.probability},
          {"meets_threshold", d.meets_threshold}};
}

std::vector<int> int_series(const std::string& path) {
  auto j = read_json_file(path);
  if (!j.is_array()) throw ConfigError(path + ": expected a JSON array");
  return j.get<std::vector<int>>();
}

Frame load_input_image(const std::string& path, int side) {
  Frame f = io::read_ppm(path);
  if (f.width != side || f.height != side)
    f = detect::resize_bilinear(f, side, side);
  return f;
}

int net_side(const nnet::NetSpec& net) {
  if (net.input.size() != 3) throw ConfigError("net input must be [3,H,W]");
  return net.input[1];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"insect monitoring pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 1;
  bool json_out = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  app.add_flag("--json", json_out, "machine-readable stdout");

  auto master_seed = [&](const json& cfg) {
    if (seed_opt->count()) return seed;
    if (cfg.is_object() && cfg.contains("seed"))
      return cfg.at("seed").get<std::uint64_t>();
    return seed;
  };
  auto load_cfg = [&] {
    return config_path.empty() ? json::object() : read_json_file(config_path);
  };

  // ---- optics ----
  auto* c_optics = app.add_subcommand("optics", "imaging design numbers");
  c_optics->fallthrough();
  double o_speed = 0.5, o_ap = 0, o_wl = 0, o_pitch = 0, o_sensor = 0,
         o_fov = 0, o_coc = 0, o_flash = 0;
  auto* oo_speed = c_optics->add_option("--speed", o_speed, "subject speed m/s");
  auto* oo_ap = c_optics->add_option("--aperture", o_ap, "f-number");
  auto* oo_wl = c_optics->add_option("--wavelength", o_wl, "um");
  auto* oo_pitch = c_optics->add_option("--pitch", o_pitch, "pixel pitch um");
  auto* oo_sensor = c_optics->add_option("--sensor-width", o_sensor, "mm");
  auto* oo_fov = c_optics->add_option("--fov-width", o_fov, "mm");
  auto* oo_coc = c_optics->add_option("--coc", o_coc, "circle of confusion um");
  auto* oo_flash = c_optics->add_option("--flash", o_flash, "flash duration s");
  c_optics->callback([&] {
    auto cfg = load_cfg();
    auto b = block(cfg, "optics");
    optics::OpticalConfig oc;
    oc.aperture_number = b.value("aperture_number", oc.aperture_number);
    oc.wavelength = b.value("wavelength", oc.wavelength);
    oc.pixel_pitch = b.value("pixel_pitch", oc.pixel_pitch);
    oc.sensor_width = b.value("sensor_width", oc.sensor_width);
    oc.fov_width = b.value("fov_width", oc.fov_width);
    if (b.contains("circle_of_confusion"))
      oc.circle_of_confusion = b.at("circle_of_confusion").get<double>();
    oc.flash_duration = b.value("flash_duration", oc.flash_duration);
    oc.exposure_time = b.value("exposure_time", oc.exposure_time);
    double speed = b.value("speed", o_speed);
    if (oo_speed->count()) speed = o_speed;
    if (oo_ap->count()) oc.aperture_number = o_ap;
    if (oo_wl->count()) oc.wavelength = o_wl;
    if (oo_pitch->count()) oc.pixel_pitch = o_pitch;
    if (oo_sensor->count()) oc.sensor_width = o_sensor;
    if (oo_fov->count()) oc.fov_width = o_fov;
    if (oo_coc->count()) oc.circle_of_confusion = o_coc;
    if (oo_flash->count()) oc.flash_duration = o_flash;

    auto r = optics::design_report(oc, speed);
    if (json_out) {
      json j;
      j["magnification"] = r.magnification;
      j["airy_diameter_chip_um"] = r.airy_diameter_chip;
      j["depth_of_field_mm"] = r.depth_of_field;
      j["blur_object_mm"] = r.blur_object;
      j["blur_chip_um"] = r.blur_chip;
      j["blur_pixels"] = r.blur_pixels;
      j["blur_to_diffraction_ratio"] = r.blur_to_diffraction_ratio;
      std::cout << j.dump(2) << "\n";
    } else {
      std::printf("magnification            %.4f\n", r.magnification);
      std::printf("airy diameter on chip    %.3f um\n", r.airy_diameter_chip);
      std::printf("depth of field           %.2f mm\n", r.depth_of_field);
      std::printf("motion blur (object)     %.4f mm\n", r.blur_object);
      std::printf("motion blur (chip)       %.3f um\n", r.blur_chip);
      std::printf("motion blur              %.2f px\n", r.blur_pixels);
      std::printf("blur / diffraction       %.3f\n",
                  r.blur_to_diffraction_ratio);
    }
  });

  // ---- simulate ----
  auto* c_sim = app.add_subcommand(
      "simulate", "synthesize a transit series or a labeled dataset");
  c_sim->fallthrough();
  bool sim_dataset = false;
  std::string sim_taxonomy, sim_variant = "cropped";
  int sim_class = -1, sim_frames = 0, sim_per_class = 0;
  c_sim->add_flag("--dataset", sim_dataset, "write a labeled image dataset");
  c_sim->add_option("--taxonomy", sim_taxonomy, "taxonomy TSV (dataset mode)");
  c_sim->add_option("--variant", sim_variant, "full or cropped");
  auto* so_class = c_sim->add_option("--class-id", sim_class, "insect class");
  auto* so_frames = c_sim->add_option("--frames", sim_frames, "series length");
  auto* so_pc = c_sim->add_option("--per-class", sim_per_class,
                                  "images per class (dataset mode)");
  c_sim->callback([&] {
    auto cfg = load_cfg();
    auto s = master_seed(cfg);
    auto dir = need_out(out_dir);
    if (sim_dataset) {
      auto spec = pipeline::dataset_from_json(block(cfg, "data"), s);
      if (so_pc->count())
        spec.per_class.assign(spec.classes, sim_per_class);
      auto tax =
          sim_taxonomy.empty() ? config_string(cfg, "taxonomy") : sim_taxonomy;
      auto tree = taxonomy::TaxonomyTree::parse_file(tax);
      auto variant = sim_variant == "full" ? evalkit::Variant::Full
                                           : evalkit::Variant::Cropped;
      auto manifest = evalkit::write_dataset(spec, tree, dir, variant);
      if (json_out)
        std::cout << json{{"manifest", manifest},
                          {"images", evalkit::dataset_size(spec)}}
                         .dump(2)
                  << "\n";
      else
        std::printf("wrote %d images, manifest %s\n",
                    evalkit::dataset_size(spec), manifest.c_str());
      return;
    }
    auto spec = pipeline::transit_from_json(block(cfg, "transit"));
    if (so_class->count()) spec.class_id = sim_class;
    if (so_frames->count()) spec.frame_count = sim_frames;
    rng::Generator g = rng::Generator::child(s, 0x74);
    auto t = imaging::synth_transit(spec, g);
    for (std::size_t i = 0; i < t.frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03zu.ppm", i);
      io::write_ppm((fs::path(dir) / name).string(), t.frames[i]);
    }
    json meta;
    meta["seed"] = s;
    meta["class_id"] = spec.class_id;
    meta["flash_indices"] = t.flash_indices;
    json boxes = json::array();
    for (std::size_t k = 0; k < t.boxes.size(); ++k) {
      const auto& b = t.boxes[k];
      boxes.push_back({{"frame", t.flash_indices[k]},
                       {"x", b.x},
                       {"y", b.y},
                       {"w", b.w},
                       {"h", b.h}});
      char name[32];
      std::snprintf(name, sizeof name, "mask_%03zu.pgm", t.flash_indices[k]);
      io::write_pgm_mask((fs::path(dir) / name).string(), t.masks[k]);
    }
    meta["boxes"] = boxes;
    write_text(fs::path(dir) / "transit.json", meta.dump(2) + "\n");
    if (json_out)
      std::cout << meta.dump(2) << "\n";
    else
      std::printf("wrote %zu frames, insect on %zu\n", t.frames.size(),
                  t.flash_indices.size());
  });

  // ---- trigger ----
  auto* c_trig = app.add_subcommand("trigger", "scan a series for captures");
  c_trig->fallthrough();
  std::string trig_series, trig_frames;
  double trig_ratio = 0;
  int trig_window = 0, trig_cooldown = -1;
  c_trig->add_option("--series", trig_series, "JSON array of luma values");
  c_trig->add_option("--frames", trig_frames, "directory of PPM frames");
  auto* to_ratio = c_trig->add_option("--ratio", trig_ratio, "firing ratio");
  auto* to_window = c_trig->add_option("--window", trig_window, "baseline window");
  auto* to_cool = c_trig->add_option("--cooldown", trig_cooldown, "frames skipped");
  c_trig->callback([&] {
    auto cfg = load_cfg();
    auto tc = pipeline::trigger_from_json(block(cfg, "trigger"));
    if (to_ratio->count()) tc.ratio = trig_ratio;
    if (to_window->count()) tc.window = trig_window;
    if (to_cool->count()) tc.cooldown = trig_cooldown;

    std::vector<double> lumas;
    if (!trig_series.empty()) {
      auto j = read_json_file(trig_series);
      if (!j.is_array())
        throw ConfigError(trig_series + ": expected a JSON array");
      lumas = j.get<std::vector<double>>();
    } else if (!trig_frames.empty()) {
      std::vector<std::string> paths;
      for (const auto& e : fs::directory_iterator(trig_frames))
        if (e.path().extension() == ".ppm") paths.push_back(e.path().string());
      std::sort(paths.begin(), paths.end());
      if (paths.empty()) throw ConfigError("no PPM frames in " + trig_frames);
      for (const auto& p : paths)
        lumas.push_back(imaging::mean_luminance(io::read_ppm(p)));
    } else {
      throw ConfigError("one of --series or --frames is required");
    }

    auto events = imaging::detect_triggers(lumas, tc);
    if (json_out) {
      json out = json::array();
      for (const auto& e : events)
        out.push_back({{"trigger_index", e.trigger_index},
                       {"frame_indices", e.frame_indices}});
      std::cout << out.dump(2) << "\n";
    } else {
      std::printf("%zu event(s) in %zu frames\n", events.size(), lumas.size());
      for (const auto& e : events) {
        std::printf("  trigger %zu frames", e.trigger_index);
        for (auto i : e.frame_indices) std::printf(" %zu", i);
        std::printf("\n");
      }
    }
  });

  // ---- detect ----
  auto* c_det = app.add_subcommand("detect", "locate and crop the insect");
  c_det->fallthrough();
  std::vector<std::string> det_images;
  int det_size = 0;
  c_det->add_option("images", det_images, "PPM frames")->required();
  auto* do_size = c_det->add_option("--size", det_size, "resize crops to NxN");
  int det_thresh = 0, det_min_area = 0, det_conn = 0;
  double det_margin = 0;
  auto* do_thresh = c_det->add_option("--threshold", det_thresh, "luma cut");
  auto* do_area = c_det->add_option("--min-area", det_min_area,
                                    "dust filter at 1440x1080");
  auto* do_conn = c_det->add_option("--connectivity", det_conn, "4 or 8");
  auto* do_margin = c_det->add_option("--margin", det_margin, "crop margin");
  c_det->callback([&] {
    auto cfg = load_cfg();
    auto cp = pipeline::crop_from_json(block(cfg, "crop"));
    if (do_thresh->count()) cp.threshold = det_thresh;
    if (do_area->count()) cp.min_area = det_min_area;
    if (do_conn->count()) cp.connectivity = det_conn;
    if (do_margin->count()) cp.margin = det_margin;

    json out = json::array();
    int n = 0;
    for (const auto& path : det_images) {
      Frame f = io::read_ppm(path);
      auto mask = detect::threshold_mask(f, cp.threshold);
      detect::CropConfig cc;
      cc.connectivity = cp.connectivity;
      cc.min_area = detect::scaled_min_area(cp.min_area, f.width, f.height);
      cc.margin = cp.margin;
      auto tight = detect::mask_to_bbox(mask, cc);
      auto square = detect::square_expand(tight, cp.margin, f.width, f.height);
      json rec;
      rec["image"] = path;
      rec["tight"] = {{"x", tight.x}, {"y", tight.y}, {"w", tight.w},
                      {"h", tight.h}};
      rec["square"] = {{"x", square.x}, {"y", square.y}, {"w", square.w},
                       {"h", square.h}};
      if (!out_dir.empty()) {
        auto crop = detect::crop(f, square);
        if (do_size->count()) crop = detect::resize_bilinear(crop, det_size,
                                                             det_size);
        char name[32];
        std::snprintf(name, sizeof name, "crop_%03d.ppm", n++);
        fs::create_directories(out_dir);
        io::write_ppm((fs::path(out_dir) / name).string(), crop);
        rec["crop"] = name;
      }
      out.push_back(std::move(rec));
    }
    if (json_out) {
      std::cout << out.dump(2) << "\n";
    } else {
      for (const auto& r : out)
        std::printf("%s box %d,%d %dx%d\n",
                    r.at("image").get<std::string>().c_str(),
                    r.at("square").at("x").get<int>(),
                    r.at("square").at("y").get<int>(),
                    r.at("square").at("w").get<int>(),
                    r.at("square").at("h").get<int>());
    }
  });

  // ---- split ----
  auto* c_split = app.add_subcommand("split", "stratified train/val/test split");
  c_split->fallthrough();
  std::string sp_manifest, sp_taxonomy;
  double sp_train = 0, sp_val = 0, sp_test = 0;
  c_split->add_option("--manifest", sp_manifest, "dataset manifest TSV")
      ->required();
  c_split->add_option("--taxonomy", sp_taxonomy, "taxonomy TSV")->required();
  auto* spo_train = c_split->add_option("--train", sp_train, "train ratio");
  auto* spo_val = c_split->add_option("--val", sp_val, "val ratio");
  auto* spo_test = c_split->add_option("--test", sp_test, "test ratio");
  c_split->callback([&] {
    auto cfg = load_cfg();
    auto ratios = pipeline::split_from_json(block(cfg, "split"));
    if (spo_train->count()) ratios.train = sp_train;
    if (spo_val->count()) ratios.val = sp_val;
    if (spo_test->count()) ratios.test = sp_test;
    auto s = master_seed(cfg);

    auto tree = taxonomy::TaxonomyTree::parse_file(sp_taxonomy);
    auto manifest = evalkit::load_manifest(sp_manifest, tree);
    auto split = evalkit::stratified_split(manifest, ratios, s);
    evalkit::apply_split(manifest, split);
    std::string written;
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      written = (fs::path(out_dir) / "manifest.tsv").string();
      evalkit::save_manifest(written, manifest);
    }
    if (json_out) {
      json j;
      j["seed"] = s;
      json counts = json::array();
      for (const auto& c : split.class_counts)
        counts.push_back({{"class", c[0]},
                          {"train", c[1]},
                          {"val", c[2]},
                          {"test", c[3]}});
      j["class_counts"] = counts;
      if (!written.empty()) j["manifest"] = written;
      std::cout << j.dump(2) << "\n";
    } else {
      std::printf("%-6s %6s %4s %5s\n", "class", "train", "val", "test");
      for (const auto& c : split.class_counts)
        std::printf("%-6d %6d %4d %5d\n", c[0], c[1], c[2], c[3]);
      if (!written.empty()) std::printf("wrote %s\n", written.c_str());
    }
  });

  // ---- train ----
  auto* c_train = app.add_subcommand("train", "train on a synthetic dataset");
  c_train->fallthrough();
  std::string tr_netspec, tr_variant = "cropped";
  double tr_lr = 0;
  int tr_epochs = 0, tr_batch = 0;
  auto* tro_net = c_train->add_option("--netspec", tr_netspec, "net JSON");
  c_train->add_option("--variant", tr_variant, "full or cropped");
  auto* tro_lr = c_train->add_option("--lr", tr_lr, "learning rate");
  auto* tro_epochs = c_train->add_option("--epochs", tr_epochs, "epochs");
  auto* tro_batch = c_train->add_option("--batch", tr_batch, "batch size");
  c_train->callback([&] {
    auto cfg = load_cfg();
    auto s = master_seed(cfg);
    auto dir = need_out(out_dir);
    auto netp = tro_net->count() ? tr_netspec : config_string(cfg, "netspec");
    auto net = nnet::load_netspec(netp);
    auto ds = pipeline::dataset_from_json(block(cfg, "data"), s);
    auto tc = pipeline::train_from_json(block(cfg, "train"), s);
    if (tro_lr->count()) tc.learning_rate = tr_lr;
    if (tro_epochs->count()) tc.epochs = tr_epochs;
    if (tro_batch->count()) tc.batch_size = tr_batch;
    auto ratios = pipeline::split_from_json(block(cfg, "split"));
    auto variant = tr_variant == "full" ? evalkit::Variant::Full
                                        : evalkit::Variant::Cropped;

    std::vector<nnet::Tensor> images;
    std::vector<int> labels;
    evalkit::dataset_tensors(ds, variant, images, labels);
    auto split = evalkit::stratified_split(labels, ratios, s);
    std::vector<nnet::Tensor> tri, vai, tei;
    std::vector<int> trl, val, tel;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (split.tags[i] == "train") {
        tri.push_back(images[i]);
        trl.push_back(labels[i]);
      } else if (split.tags[i] == "val") {
        vai.push_back(images[i]);
        val.push_back(labels[i]);
      } else {
        tei.push_back(images[i]);
        tel.push_back(labels[i]);
      }
    }
    auto params = nnet::init_params(net, s);
    auto log = nnet::train(net, params, tri, trl, vai, val, tc);
    nnet::save_params((fs::path(dir) / "params.bin").string(), params);

    json epochs = json::array();
    for (const auto& e : log)
      epochs.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_accuracy", e.val_accuracy}});
    write_text(fs::path(dir) / "train_log.json", epochs.dump(2) + "\n");

    double test_acc = 0;
    if (!tei.empty()) {
      auto preds = nnet::predict_classes(net, params, tei, tc.conv_path);
      test_acc = evalkit::top1_accuracy(preds, tel);
    }
    if (json_out) {
      json j;
      j["params"] = (fs::path(dir) / "params.bin").string();
      j["epochs"] = epochs;
      j["test_accuracy"] = test_acc;
      std::cout << j.dump(2) << "\n";
    } else {
      for (const auto& e : log)
        std::printf("epoch %3d loss %.4f val %.4f\n", e.epoch, e.train_loss,
                    e.val_accuracy);
      std::printf("test accuracy %.4f\n", test_acc);
    }
  });

  // ---- predict ----
  auto* c_pred = app.add_subcommand("predict", "classify cropped images");
  c_pred->fallthrough();
  std::string pr_taxonomy, pr_netspec, pr_params;
  double pr_threshold = 0.7;
  std::vector<std::string> pr_images;
  c_pred->add_option("--taxonomy", pr_taxonomy, "taxonomy TSV")->required();
  c_pred->add_option("--netspec", pr_netspec, "net JSON")->required();
  c_pred->add_option("--params", pr_params, "trained weights")->required();
  c_pred->add_option("--threshold", pr_threshold, "decision threshold");
  c_pred->add_option("images", pr_images, "PPM crops")->required();
  c_pred->callback([&] {
    auto tree = taxonomy::TaxonomyTree::parse_file(pr_taxonomy);
    auto net = nnet::load_netspec(pr_netspec);
    auto params = nnet::load_params(pr_params, net);
    if (tree.species_count() != net.classes)
      throw ConfigError("taxonomy species count does not match net classes");
    int side = net_side(net);
    json out = json::array();
    for (const auto& path : pr_images) {
      auto tensor = evalkit::frame_to_tensor(load_input_image(path, side));
      auto probs = nnet::predict(net, params, tensor);
      auto decision = taxonomy::decide(tree, probs, pr_threshold);
      int top = static_cast<int>(
          std::max_element(probs.begin(), probs.end()) - probs.begin());
      json rec;
      rec["image"] = path;
      rec["top_species"] = tree.entry(top).species;
      rec["top_probability"] = probs[top];
      rec["probs"] = probs;
      rec["decision"] = decision_json(decision);
      out.push_back(std::move(rec));
    }
    if (json_out) {
      std::cout << out.dump(2) << "\n";
    } else {
      for (const auto& r : out)
        std::printf("%s  %s p=%.3f  decision %s %s (%.3f)%s\n",
                    r.at("image").get<std::string>().c_str(),
                    r.at("top_species").get<std::string>().c_str(),
                    r.at("top_probability").get<double>(),
                    r.at("decision").at("rank").get<std::string>().c_str(),
                    r.at("decision").at("name").get<std::string>().c_str(),
                    r.at("decision").at("probability").get<double>(),
                    r.at("decision").at("meets_threshold").get<bool>()
                        ? ""
                        : " [below threshold]");
    }
  });

  // ---- rollup ----
  auto* c_roll = app.add_subcommand("rollup",
                                    "aggregate species mass up the taxonomy");
  c_roll->fallthrough();
  std::string ro_taxonomy, ro_probs;
  double ro_threshold = 0.8;
  c_roll->add_option("--taxonomy", ro_taxonomy, "taxonomy TSV")->required();
  c_roll->add_option("--probs", ro_probs, "JSON array of species probabilities")
      ->required();
  c_roll->add_option("--threshold", ro_threshold, "decision threshold");
  c_roll->callback([&] {
    auto tree = taxonomy::TaxonomyTree::parse_file(ro_taxonomy);
    auto j = read_json_file(ro_probs);
    if (!j.is_array()) throw ConfigError(ro_probs + ": expected a JSON array");
    auto probs = j.get<std::vector<double>>();
    auto rollup = taxonomy::roll_up(tree, probs);
    auto decision = taxonomy::decide(tree, probs, ro_threshold);
    if (json_out) {
      json out;
      for (auto rank : taxonomy::kRanks) {
        json level;
        for (const auto& [name, mass] : rollup.at(rank)) level[name] = mass;
        out[taxonomy::rank_name(rank)] = level;
      }
      out["decision"] = decision_json(decision);
      std::cout << out.dump(2) << "\n";
    } else {
      for (auto rank : taxonomy::kRanks) {
        std::printf("%s\n", taxonomy::rank_name(rank));
        for (const auto& [name, mass] : rollup.at(rank))
          std::printf("  %-28s %.4f\n", name.c_str(), mass);
      }
      std::printf("decision: %s %s (%.3f)%s\n",
                  taxonomy::rank_name(decision.rank), decision.name.c_str(),
                  decision.probability,
                  decision.meets_threshold ? "" : " [below threshold]");
    }
  });

  // ---- eval ----
  auto* c_eval = app.add_subcommand("eval", "confusion matrix and metrics");
  c_eval->fallthrough();
  std::string ev_pred, ev_labels, ev_taxonomy;
  c_eval->add_option("--pred", ev_pred, "JSON array of predicted classes")
      ->required();
  c_eval->add_option("--labels", ev_labels, "JSON array of true classes")
      ->required();
  c_eval->add_option("--taxonomy", ev_taxonomy, "taxonomy TSV")->required();
  c_eval->callback([&] {
    auto tree = taxonomy::TaxonomyTree::parse_file(ev_taxonomy);
    auto preds = int_series(ev_pred);
    auto labels = int_series(ev_labels);
    int k = tree.species_count();
    auto cm = evalkit::confusion_matrix(preds, labels, k);
    std::vector<std::string> names;
    for (int i = 0; i < k; ++i) names.push_back(tree.entry(i).species);
    auto metrics = evalkit::run_metrics(cm, names);
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      evalkit::write_confusion_csv(
          (fs::path(out_dir) / "confusion.csv").string(), cm, names);
      evalkit::write_confusion_heatmap(
          (fs::path(out_dir) / "confusion.ppm").string(), cm);
      write_text(fs::path(out_dir) / "metrics.json",
                 evalkit::metrics_to_json(metrics).dump(2) + "\n");
    }
    if (json_out) {
      std::cout << evalkit::metrics_to_json(metrics).dump(2) << "\n";
    } else {
      std::printf("accuracy %.4f over %lld samples\n",
                  metrics.overall_accuracy,
                  static_cast<long long>(cm.total()));
      for (int i = 0; i < k; ++i)
        if (metrics.per_class_support[i] || cm.never_predicted[i])
          std::printf("  %-28s recall %.3f support %d%s\n", names[i].c_str(),
                      metrics.per_class_accuracy[i],
                      metrics.per_class_support[i],
                      cm.never_predicted[i] ? "  never predicted" : "");
    }
  });

  // ---- compare ----
  auto* c_cmp = app.add_subcommand(
      "compare", "diff two metric files, or run the crop experiment");
  c_cmp->fallthrough();
  bool cmp_experiment = false;
  std::vector<std::string> cmp_files;
  c_cmp->add_flag("--experiment", cmp_experiment,
                  "train full vs cropped and compare");
  c_cmp->add_option("metrics", cmp_files, "two metrics JSON files");
  c_cmp->callback([&] {
    if (cmp_experiment) {
      if (config_path.empty()) throw ConfigError("--config is required");
      auto cfg = pipeline::load_experiment_config(config_path);
      if (seed_opt->count()) cfg.seed = seed;
      auto dir = need_out(out_dir);
      auto report = pipeline::experiment_full_vs_cropped(cfg, dir);
      if (json_out) {
        std::cout << pipeline::experiment_to_json(report).dump(2) << "\n";
      } else {
        std::printf("full accuracy     %.4f\n", report.full.overall_accuracy);
        std::printf("cropped accuracy  %.4f\n",
                    report.cropped.overall_accuracy);
        std::printf("delta             %+.4f\n", report.delta.overall_delta);
      }
      return;
    }
    if (cmp_files.size() != 2)
      throw ConfigError("compare needs two metrics files");
    auto a = evalkit::metrics_from_json(read_json_file(cmp_files[0]));
    auto b = evalkit::metrics_from_json(read_json_file(cmp_files[1]));
    auto d = evalkit::compare_runs(a, b);
    if (json_out) {
      std::cout << evalkit::delta_to_json(d).dump(2) << "\n";
    } else {
      std::printf("overall delta %+.4f\n", d.overall_delta);
      if (!d.worst_regression_class.empty())
        std::printf("worst class   %s %+.4f\n",
                    d.worst_regression_class.c_str(), d.worst_delta);
    }
  });

  // ---- pipeline ----
  auto* c_pipe = app.add_subcommand("pipeline", "run the full capture chain");
  c_pipe->fallthrough();
  std::string pipe_rerun;
  c_pipe->add_option("--rerun", pipe_rerun, "rerun from a run.json snapshot");
  c_pipe->callback([&] {
    pipeline::RunConfig cfg;
    if (!pipe_rerun.empty())
      cfg = pipeline::config_from_record(pipe_rerun);
    else if (!config_path.empty())
      cfg = pipeline::load_run_config(config_path);
    else
      throw ConfigError("--config or --rerun is required");
    if (seed_opt->count()) cfg.seed = seed;
    if (out_dir.empty()) throw ConfigError("--out is required");
    auto record = pipeline::run_pipeline(cfg, out_dir);
    if (json_out) {
      std::cout << pipeline::record_to_json(record).dump(2) << "\n";
    } else {
      std::printf("run %s: %zu captures\n", record.run_id.c_str(),
                  record.captures.size());
      for (const auto& c : record.captures)
        std::printf("  frame %zu -> %s %s (%.3f)\n", c.frame_index,
                    taxonomy::rank_name(c.decision.rank),
                    c.decision.name.c_str(), c.decision.probability);
      std::printf("metrics %s\n",
                  (fs::path(record.run_dir) / record.metrics_path).c_str());
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const pipeline::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
