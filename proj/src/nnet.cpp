#include "ento/nnet.hpp"

#include <cstring>
#include <fstream>
#include <numeric>

namespace ento::nnet {

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

LayerKind kind_of(const std::string& name) {
  if (name == "conv") return LayerKind::Conv;
  if (name == "relu") return LayerKind::Relu;
  if (name == "maxpool") return LayerKind::MaxPool;
  if (name == "flatten") return LayerKind::Flatten;
  if (name == "dense") return LayerKind::Dense;
  if (name == "softmax") return LayerKind::Softmax;
  throw ConfigError("unknown layer type '" + name + "'");
}

int get_int(const nlohmann::json& j, const char* key, int fallback,
            bool required) {
  if (!j.contains(key)) {
    if (required) throw ConfigError(std::string("layer missing '") + key + "'");
    return fallback;
  }
  if (!j[key].is_number_integer())
    throw ConfigError(std::string("layer field '") + key + "' must be an integer");
  return j[key].get<int>();
}

}  // namespace

NetSpec netspec_from_json(const nlohmann::json& j) {
  NetSpec spec;
  if (!j.contains("input") || !j["input"].is_array())
    throw ConfigError("netspec needs an 'input' shape array");
  for (const auto& d : j["input"]) spec.input.push_back(d.get<int>());
  if (!j.contains("classes")) throw ConfigError("netspec needs 'classes'");
  spec.classes = j["classes"].get<int>();
  if (!j.contains("layers") || !j["layers"].is_array())
    throw ConfigError("netspec needs a 'layers' array");
  for (const auto& lj : j["layers"]) {
    LayerSpec L;
    L.kind = kind_of(lj.at("type").get<std::string>());
    switch (L.kind) {
      case LayerKind::Conv:
        L.filters = get_int(lj, "filters", 0, true);
        L.kernel = get_int(lj, "kernel", 0, true);
        L.stride = get_int(lj, "stride", 1, false);
        L.padding = get_int(lj, "padding", 0, false);
        break;
      case LayerKind::MaxPool:
        L.kernel = get_int(lj, "kernel", 2, false);
        L.stride = get_int(lj, "stride", L.kernel, false);
        break;
      case LayerKind::Dense:
        L.units = get_int(lj, "units", 0, true);
        break;
      default:
        break;
    }
    spec.layers.push_back(L);
  }
  chain_shapes(spec);
  return spec;
}

nlohmann::json netspec_to_json(const NetSpec& spec) {
  nlohmann::json j;
  j["input"] = spec.input;
  j["classes"] = spec.classes;
  j["layers"] = nlohmann::json::array();
  for (const LayerSpec& L : spec.layers) {
    nlohmann::json lj{{"type", kind_name(L.kind)}};
    switch (L.kind) {
      case LayerKind::Conv:
        lj["filters"] = L.filters;
        lj["kernel"] = L.kernel;
        lj["stride"] = L.stride;
        lj["padding"] = L.padding;
        break;
      case LayerKind::MaxPool:
        lj["kernel"] = L.kernel;
        lj["stride"] = L.stride;
        break;
      case LayerKind::Dense:
        lj["units"] = L.units;
        break;
      default:
        break;
    }
    j["layers"].push_back(lj);
  }
  return j;
}

NetSpec load_netspec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return netspec_from_json(j);
}

std::vector<std::vector<int>> chain_shapes(const NetSpec& spec) {
  if (spec.classes < 1) throw ShapeError("class count must be positive");
  if (spec.input.empty()) throw ShapeError("input shape is empty");
  for (int d : spec.input)
    if (d < 1) throw ShapeError("input dimensions must be positive");
  if (spec.layers.empty()) throw ShapeError("layer list is empty");

  std::vector<std::vector<int>> out;
  std::vector<int> cur = spec.input;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& L = spec.layers[li];
    auto fail = [&](const std::string& msg) {
      throw ShapeError("layer " + std::to_string(li) + " (" +
                       kind_name(L.kind) + "): " + msg);
    };
    switch (L.kind) {
      case LayerKind::Conv: {
        if (cur.size() != 3) fail("needs a C,H,W input");
        if (L.filters < 1 || L.kernel < 1 || L.stride < 1 || L.padding < 0)
          fail("bad hyperparameters");
        int oh = detail::conv_out_dim(cur[1], L.kernel, L.stride, L.padding);
        int ow = detail::conv_out_dim(cur[2], L.kernel, L.stride, L.padding);
        if (cur[1] + 2 * L.padding < L.kernel || oh < 1 || ow < 1)
          fail("kernel larger than padded input");
        cur = {L.filters, oh, ow};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::MaxPool: {
        if (cur.size() != 3) fail("needs a C,H,W input");
        if (L.kernel < 1 || L.stride < 1) fail("bad hyperparameters");
        if (cur[1] < L.kernel || cur[2] < L.kernel)
          fail("window larger than input");
        cur = {cur[0], (cur[1] - L.kernel) / L.stride + 1,
               (cur[2] - L.kernel) / L.stride + 1};
        break;
      }
      case LayerKind::Flatten: {
        int n = 1;
        for (int d : cur) n *= d;
        cur = {n};
        break;
      }
      case LayerKind::Dense: {
        if (cur.size() != 1) fail("needs a flat input");
        if (L.units < 1) fail("bad units");
        cur = {L.units};
        break;
      }
      case LayerKind::Softmax: {
        if (cur.size() != 1) fail("needs a flat input");
        if (li + 1 != spec.layers.size())
          fail("must be the final layer");
        break;
      }
    }
    out.push_back(cur);
  }
  if (out.back() != std::vector<int>{spec.classes})
    throw ShapeError("final output length does not equal the class count");
  return out;
}

std::size_t param_count(const NetSpec& spec) {
  auto shapes = chain_shapes(spec);
  std::size_t total = 0;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& L = spec.layers[li];
    const std::vector<int>& in_s = li == 0 ? spec.input : shapes[li - 1];
    if (L.kind == LayerKind::Conv)
      total += static_cast<std::size_t>(L.filters) * in_s[0] * L.kernel * L.kernel +
               static_cast<std::size_t>(L.filters);
    else if (L.kind == LayerKind::Dense)
      total += static_cast<std::size_t>(L.units) * in_s[0] +
               static_cast<std::size_t>(L.units);
  }
  return total;
}

namespace {

// weight and bias shapes per parametered layer, zipped with the layer index
struct ParamSlot {
  std::size_t layer;
  std::vector<int> weight_shape;
  std::vector<int> bias_shape;
  std::size_t fan_in;
};

std::vector<ParamSlot> param_slots(const NetSpec& spec) {
  auto shapes = chain_shapes(spec);
  std::vector<ParamSlot> slots;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& L = spec.layers[li];
    if (L.kind != LayerKind::Conv && L.kind != LayerKind::Dense) continue;
    const std::vector<int>& in_s = li == 0 ? spec.input : shapes[li - 1];
    ParamSlot s;
    s.layer = li;
    if (L.kind == LayerKind::Conv) {
      s.weight_shape = {L.filters, in_s[0], L.kernel, L.kernel};
      s.bias_shape = {L.filters};
      s.fan_in = static_cast<std::size_t>(in_s[0]) * L.kernel * L.kernel;
    } else {
      s.weight_shape = {L.units, in_s[0]};
      s.bias_shape = {L.units};
      s.fan_in = static_cast<std::size_t>(in_s[0]);
    }
    slots.push_back(std::move(s));
  }
  return slots;
}

}  // namespace

Params init_params(const NetSpec& spec, std::uint64_t seed) {
  Params out;
  for (const ParamSlot& s : param_slots(spec)) {
    Tensor w(s.weight_shape), b(s.bias_shape);
    rng::Generator g = rng::Generator::child(seed, static_cast<std::uint64_t>(s.layer));
    double std_dev = std::sqrt(2.0 / static_cast<double>(s.fan_in));
    for (float& v : w.data) v = static_cast<float>(std_dev * g.normal());
    out.push_back(std::move(w));
    out.push_back(std::move(b));
  }
  return out;
}

ParamsT<double> widen(const Params& p) {
  ParamsT<double> out(p.size());
  for (std::size_t t = 0; t < p.size(); ++t) {
    out[t].shape = p[t].shape;
    out[t].data.assign(p[t].data.begin(), p[t].data.end());
  }
  return out;
}

double grad_check(const NetSpec& spec, std::uint64_t seed, double epsilon,
                  ConvPath path) {
  if (!(epsilon > 0)) throw DomainError("epsilon must be positive");
  ParamsT<double> p = widen(init_params(spec, seed));

  const int n = 2;
  TensorT<double> batch([&] {
    std::vector<int> s{n};
    s.insert(s.end(), spec.input.begin(), spec.input.end());
    return s;
  }());
  rng::Generator gd = rng::Generator::child(seed, 9001);
  for (double& v : batch.data) v = gd.uniform();
  std::vector<int> labels(n);
  for (int& l : labels)
    l = static_cast<int>(gd.below(static_cast<std::uint64_t>(spec.classes)));

  ParamsT<double> grads;
  loss_and_grads(spec, p, batch, labels, grads, path);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].numel(); ++i) coords.emplace_back(t, i);
  rng::Generator gc = rng::Generator::child(seed, 9002);
  gc.shuffle(coords);

  const std::size_t target = 200;
  std::size_t accepted = 0;
  double max_rel = 0;
  for (const auto& [t, i] : coords) {
    if (accepted >= target) break;
    double theta = p[t].data[i];
    ActivationSignature s_plus, s_minus;
    p[t].data[i] = theta + epsilon;
    double f_plus = batch_loss(spec, p, batch, labels, path, &s_plus);
    p[t].data[i] = theta - epsilon;
    double f_minus = batch_loss(spec, p, batch, labels, path, &s_minus);
    p[t].data[i] = theta;
    if (!(s_plus == s_minus)) continue;
    double numeric = (f_plus - f_minus) / (2.0 * epsilon);
    double analytic = grads[t].data[i];
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    ++accepted;
  }
  return max_rel;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0))
    throw ConfigError("learning rate must be non-negative");
  if (!(cfg.momentum >= 0) || cfg.momentum >= 1)
    throw ConfigError("momentum must be in [0,1)");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
}

namespace {

Tensor make_batch(const std::vector<Tensor>& images,
                  const std::vector<std::size_t>& order, std::size_t start,
                  std::size_t count, const std::vector<int>& input_shape) {
  std::vector<int> s{static_cast<int>(count)};
  s.insert(s.end(), input_shape.begin(), input_shape.end());
  Tensor batch(s);
  std::size_t len = Tensor::numel_of(input_shape);
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor& img = images[order[start + i]];
    std::copy(img.data.begin(), img.data.end(), batch.data.begin() + i * len);
  }
  return batch;
}

}  // namespace

std::vector<int> predict_classes(const NetSpec& spec, const Params& params,
                                 const std::vector<Tensor>& images,
                                 ConvPath path) {
  std::vector<int> out;
  out.reserve(images.size());
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t chunk = 64;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    std::size_t count = std::min(chunk, images.size() - start);
    Tensor batch = make_batch(images, order, start, count, spec.input);
    Tensor logits = forward(spec, params, batch, path);
    for (std::size_t i = 0; i < count; ++i) {
      const float* row = logits.data.data() + i * spec.classes;
      out.push_back(static_cast<int>(
          std::max_element(row, row + spec.classes) - row));
    }
  }
  return out;
}

std::vector<EpochStats> train(const NetSpec& spec, Params& params,
                              const std::vector<Tensor>& train_images,
                              const std::vector<int>& train_labels,
                              const std::vector<Tensor>& val_images,
                              const std::vector<int>& val_labels,
                              const TrainConfig& cfg) {
  validate(cfg);
  chain_shapes(spec);
  if (train_images.empty()) throw DomainError("training set is empty");
  if (train_images.size() != train_labels.size())
    throw ShapeError("training labels do not match images");
  if (val_images.size() != val_labels.size())
    throw ShapeError("validation labels do not match images");
  for (const Tensor& img : train_images)
    if (img.shape != spec.input)
      throw ShapeError("training image does not match the spec input shape");

  Params velocity;
  for (const Tensor& t : params) velocity.emplace_back(Tensor(t.shape));

  std::vector<EpochStats> stats;
  std::vector<std::size_t> order(train_images.size());
  std::iota(order.begin(), order.end(), 0);
  Params grads;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng::Generator shuf = rng::Generator::child(cfg.seed, static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), 0);
    shuf.shuffle(order);

    double loss_sum = 0;
    std::size_t nbs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += nbs) {
      std::size_t count = std::min(nbs, order.size() - start);
      Tensor batch = make_batch(train_images, order, start, count, spec.input);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i)
        labels[i] = train_labels[order[start + i]];
      double loss =
          loss_and_grads(spec, params, batch, labels, grads, cfg.conv_path);
      loss_sum += loss * static_cast<double>(count);
      for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t].numel(); ++i) {
          float v = static_cast<float>(cfg.momentum) * velocity[t].data[i] -
                    static_cast<float>(cfg.learning_rate) * grads[t].data[i];
          velocity[t].data[i] = v;
          params[t].data[i] += v;
        }
    }

    EpochStats es;
    es.epoch = epoch;
    es.train_loss = loss_sum / static_cast<double>(order.size());
    if (!val_images.empty()) {
      std::vector<int> preds =
          predict_classes(spec, params, val_images, cfg.conv_path);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == val_labels[i]) ++hits;
      es.val_accuracy =
          static_cast<double>(hits) / static_cast<double>(preds.size());
    }
    stats.push_back(es);
  }
  return stats;
}

std::vector<double> predict(const NetSpec& spec, const Params& params,
                            const Tensor& image, ConvPath path) {
  if (image.shape != spec.input)
    throw ShapeError("image does not match the spec input shape");
  std::vector<int> s{1};
  s.insert(s.end(), spec.input.begin(), spec.input.end());
  Tensor batch(s);
  batch.data = image.data;
  Tensor out = forward(spec, params, batch, path);

  std::vector<double> probs(out.data.begin(), out.data.end());
  if (spec.layers.back().kind != LayerKind::Softmax) {
    double m = *std::max_element(probs.begin(), probs.end());
    double sum = 0;
    for (double& v : probs) {
      v = std::exp(v - m);
      sum += v;
    }
    for (double& v : probs) v /= sum;
  }
  return probs;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw TruncatedError(path + ": truncated file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr char kMagic[4] = {'E', 'N', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_params(const std::string& path, const Params& params) {
  if (params.size() % 2 != 0)
    throw ShapeError("parameter list must pair weights with biases");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size() / 2));
  for (const Tensor& t : params) {
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  if (!out) throw IoError("short write to " + path);
}

Params load_params(const std::string& path, const NetSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw BadMagicError(path + ": bad magic");
  std::uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw BadVersionError(path + ": unsupported version " +
                          std::to_string(version));

  auto slots = param_slots(spec);
  std::uint32_t layers = get_u32(in, path);
  if (layers != slots.size())
    throw ShapeError(path + ": layer count does not match the spec");

  std::vector<std::vector<int>> expected;
  for (const ParamSlot& s : slots) {
    expected.push_back(s.weight_shape);
    expected.push_back(s.bias_shape);
  }

  Params out;
  for (const std::vector<int>& ref : expected) {
    std::uint32_t ndim = get_u32(in, path);
    if (ndim != ref.size())
      throw ShapeError(path + ": tensor rank does not match the spec");
    std::vector<int> shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape[d] = static_cast<int>(get_u32(in, path));
    if (shape != ref)
      throw ShapeError(path + ": tensor shape does not match the spec");
    Tensor t(shape);
    for (float& v : t.data) {
      std::uint32_t bits = get_u32(in, path);
      std::memcpy(&v, &bits, 4);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ento::nnet
