#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "planeloc/nn/tensor.hpp"

namespace planeloc::nn {

/// Train: batch statistics, activations cached for backward, running
/// statistics updated.
/// Infer: running statistics, nothing cached.
/// Batch: batch statistics, nothing cached or updated.
enum class Mode { Train, Infer, Batch };

enum class LayerKind { Conv2d, Conv3d, BatchNorm, Relu, GlobalAvgPool, Linear, Recurrent };
enum class CellKind { Vanilla, Lstm };

const char* to_string(LayerKind k);
const char* to_string(CellKind k);

/// One layer description. Input widths are inferred from the preceding layer.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int out = 0;           // channels, features, or hidden units
  int kernel = 3;
  int stride = 1;
  int padding = -1;      // -1: kernel / 2
  CellKind cell = CellKind::Lstm;
  int layers = 1;        // stacked recurrent layers
  bool sequence_output = false;  // recurrent: emit every step instead of the last

  static LayerSpec conv2d(int out, int kernel = 3, int stride = 1, int padding = -1);
  static LayerSpec conv3d(int out, int kernel = 3, int stride = 1, int padding = -1);
  static LayerSpec batch_norm();
  static LayerSpec relu();
  static LayerSpec global_avg_pool();
  static LayerSpec linear(int out);
  static LayerSpec recurrent(CellKind cell, int hidden, int layers, bool sequence_output = false);

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

std::string to_json(const NetworkSpec& spec);
/// Throws InvalidSpec on malformed text.
NetworkSpec network_spec_from_json(const std::string& text);

std::uint64_t fnv1a64(std::string_view bytes);

/// Batch-first layer. Shapes passed to output_shape exclude the batch axis.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Shape output_shape() const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  /// Throws NoForwardCache without a preceding Train forward.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  /// Non-trainable state persisted with the parameters (running statistics).
  virtual std::vector<std::pair<std::string, Tensor*>> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual void clear_cache() = 0;
};

/// Builds one layer for a per-sample input shape. Throws ShapeMismatch when
/// the layer cannot accept that shape.
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& input_shape,
                                  std::mt19937_64& rng, const std::string& name);

/// Sequential stack of layers with seeded fan-in scaled initialization.
class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, Shape input_shape, std::uint64_t seed);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  std::size_t layer_count() const { return layers_.size(); }

  /// x has shape [batch] + input_shape. Throws ShapeMismatch.
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out);

  std::vector<Parameter*> parameters();
  /// Parameters and buffers in declaration order; the checkpoint payload.
  std::vector<std::pair<std::string, Tensor*>> state_tensors();
  std::vector<std::pair<std::string, const Tensor*>> state_tensors() const;
  void zero_grad();

  /// Bit-exact copy of parameters and buffers. Throws SpecMismatch.
  void copy_state_from(const Network& other);

  /// Spec plus input shape, as JSON; its hash is the checkpoint digest.
  std::string describe_json() const;
  std::uint64_t digest() const { return fnv1a64(describe_json()); }

 private:
  NetworkSpec spec_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace planeloc::nn
