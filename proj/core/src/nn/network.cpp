#include "planeloc/nn/network.hpp"

#include <nlohmann/json.hpp>

#include "planeloc/error.hpp"

namespace planeloc::nn {
namespace {

using nlohmann::json;

constexpr LayerKind kAllKinds[] = {LayerKind::Conv2d,    LayerKind::Conv3d,        LayerKind::BatchNorm,
                                   LayerKind::Relu,      LayerKind::GlobalAvgPool, LayerKind::Linear,
                                   LayerKind::Recurrent};

LayerKind kind_from_string(const std::string& s) {
  for (LayerKind k : kAllKinds) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorKind::InvalidSpec, "unknown layer kind '" + s + "'");
}

json layer_to_json(const LayerSpec& l) {
  json j{{"kind", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::Conv2d:
    case LayerKind::Conv3d:
      j["out"] = l.out;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::Linear: j["out"] = l.out; break;
    case LayerKind::Recurrent:
      j["cell"] = to_string(l.cell);
      j["hidden"] = l.out;
      j["layers"] = l.layers;
      j["sequence_output"] = l.sequence_output;
      break;
    default: break;
  }
  return j;
}

}  // namespace

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Conv3d: return "conv3d";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::Relu: return "relu";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Linear: return "linear";
    case LayerKind::Recurrent: return "recurrent";
  }
  return "unknown";
}

const char* to_string(CellKind k) { return k == CellKind::Lstm ? "lstm" : "vanilla"; }

LayerSpec LayerSpec::conv2d(int out, int kernel, int stride, int padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.out = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::conv3d(int out, int kernel, int stride, int padding) {
  LayerSpec s = conv2d(out, kernel, stride, padding);
  s.kind = LayerKind::Conv3d;
  return s;
}

LayerSpec LayerSpec::batch_norm() {
  LayerSpec s;
  s.kind = LayerKind::BatchNorm;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::global_avg_pool() {
  LayerSpec s;
  s.kind = LayerKind::GlobalAvgPool;
  return s;
}

LayerSpec LayerSpec::linear(int out) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::recurrent(CellKind cell, int hidden, int layers, bool sequence_output) {
  LayerSpec s;
  s.kind = LayerKind::Recurrent;
  s.cell = cell;
  s.out = hidden;
  s.layers = layers;
  s.sequence_output = sequence_output;
  return s;
}

std::string to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) layers.push_back(layer_to_json(l));
  return json{{"layers", layers}}.dump();
}

NetworkSpec network_spec_from_json(const std::string& text) {
  NetworkSpec spec;
  try {
    const json j = json::parse(text);
    for (const auto& l : j.at("layers")) {
      LayerSpec s;
      s.kind = kind_from_string(l.at("kind").get<std::string>());
      switch (s.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Conv3d:
          s.out = l.at("out").get<int>();
          s.kernel = l.value("kernel", 3);
          s.stride = l.value("stride", 1);
          s.padding = l.value("padding", -1);
          break;
        case LayerKind::Linear: s.out = l.at("out").get<int>(); break;
        case LayerKind::Recurrent: {
          const auto cell = l.at("cell").get<std::string>();
          if (cell != "lstm" && cell != "vanilla") fail(ErrorKind::InvalidSpec, "unknown cell " + cell);
          s.cell = cell == "lstm" ? CellKind::Lstm : CellKind::Vanilla;
          s.out = l.at("hidden").get<int>();
          s.layers = l.at("layers").get<int>();
          s.sequence_output = l.value("sequence_output", false);
          break;
        }
        default: break;
      }
      spec.layers.push_back(s);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidSpec, std::string("malformed network spec: ") + e.what());
  }
  return spec;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Network::Network(NetworkSpec spec, Shape input_shape, std::uint64_t seed)
    : spec_(std::move(spec)), input_shape_(std::move(input_shape)) {
  std::mt19937_64 rng(seed);
  Shape shape = input_shape_;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    auto layer = make_layer(spec_.layers[i], shape, rng, "layer" + std::to_string(i));
    shape = layer->output_shape();
    layers_.push_back(std::move(layer));
  }
  output_shape_ = shape;
}

Network::Network(const Network& other)
    : spec_(other.spec_), input_shape_(other.input_shape_), output_shape_(other.output_shape_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Tensor Network::forward(const Tensor& x, Mode mode) {
  bool ok = x.rank() == static_cast<int>(input_shape_.size()) + 1 && x.dim(0) >= 1;
  for (std::size_t i = 0; ok && i < input_shape_.size(); ++i) {
    ok = x.dim(static_cast<int>(i) + 1) == input_shape_[i];
  }
  if (!ok) {
    fail(ErrorKind::ShapeMismatch,
         "network input " + shape_string(x.shape()) + " does not match [B]+" + shape_string(input_shape_));
  }
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

Tensor Network::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (Parameter* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Network::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& l : layers_) {
    for (Parameter* p : l->parameters()) out.emplace_back(p->name, &p->value);
    for (auto& b : l->buffers()) out.push_back(b);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Network::state_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<Network*>(this)->state_tensors()) out.emplace_back(name, t);
  return out;
}

void Network::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

void Network::copy_state_from(const Network& other) {
  if (other.digest() != digest()) fail(ErrorKind::SpecMismatch, "cannot copy between different networks");
  auto dst = state_tensors();
  auto src = other.state_tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].second = *src[i].second;
}

std::string Network::describe_json() const {
  json j = json::parse(to_json(spec_));
  j["input_shape"] = input_shape_;
  return j.dump();
}

}  // namespace planeloc::nn
