#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "octpad/image.hpp"
#include "octpad/patches.hpp"
#include "octpad/random.hpp"

namespace octpad {

enum class LayerKind { Conv, ReLU, MaxPool, Flatten, FullyConnected, Softmax };

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int out_channels = 0;  // Conv
  int kernel = 0;        // Conv, MaxPool
  int stride = 1;        // Conv, MaxPool
  int padding = 0;       // Conv (zero padding)
  int out_units = 0;     // FullyConnected

  static LayerSpec conv(int out_channels, int kernel, int stride = 1, int padding = 0) {
    return {LayerKind::Conv, out_channels, kernel, stride, padding, 0};
  }
  static LayerSpec relu() { return {LayerKind::ReLU}; }
  static LayerSpec maxpool(int kernel, int stride) { return {LayerKind::MaxPool, 0, kernel, stride, 0, 0}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }
  static LayerSpec fc(int out_units) { return {LayerKind::FullyConnected, 0, 0, 1, 0, out_units}; }
  static LayerSpec softmax() { return {LayerKind::Softmax}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Channel-major tensor shape.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Layer list plus input shape. Construction validates that the layer shapes
// compose and that the network ends in a 2-unit softmax.
class Architecture {
 public:
  Architecture(Shape input, std::vector<LayerSpec> layers);

  const Shape& input() const noexcept { return input_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  // in_shape(i) feeds layer i; out_shape(i) is what it produces.
  const Shape& in_shape(std::size_t i) const { return shapes_[i]; }
  const Shape& out_shape(std::size_t i) const { return shapes_[i + 1]; }
  std::size_t param_count() const noexcept { return param_offsets_.back(); }
  // Parameters of layer i occupy [param_offset(i), param_offset(i + 1)):
  // weights first (Conv: [out][in][ky][kx], FC: [out][in]) then biases.
  std::size_t param_offset(std::size_t i) const { return param_offsets_[i]; }
  std::size_t fan_in(std::size_t i) const;

  friend bool operator==(const Architecture& a, const Architecture& b) {
    return a.input_ == b.input_ && a.layers_ == b.layers_;
  }

 private:
  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> param_offsets_;
};

// Conv3x3x8/ReLU/MaxPool2 -> Conv3x3x16/ReLU/MaxPool2 -> Conv3x3x32/ReLU/MaxPool2
// -> Flatten -> FC64/ReLU -> FC2/Softmax on a 1x150x150 input.
Architecture reference_architecture(int patch_h = 150, int patch_w = 150);

inline constexpr int kBonafideClass = 0;
inline constexpr int kPaClass = 1;

// Retained per-layer state of one forward pass. activations[0] is the input,
// activations[i + 1] the output of layer i. For MaxPool layers argmax[i]
// holds, per output element, the flat input index that attained the max.
template <typename T>
struct ForwardTrace {
  std::vector<std::vector<T>> activations;
  std::vector<std::vector<std::uint32_t>> argmax;

  bool empty() const noexcept { return activations.empty(); }
  std::span<const T> probabilities() const { return activations.back(); }
  // Input to the final softmax.
  std::span<const T> logits() const { return activations[activations.size() - 2]; }
};

template <typename T>
class Network {
 public:
  Network(Architecture arch, std::vector<T> params, std::uint64_t seed = 0);

  // Seeded uniform(-a, a) weights with a = sqrt(6 / fan_in), zero biases.
  static Network initialized(Architecture arch, std::uint64_t seed);

  const Architecture& arch() const noexcept { return arch_; }
  std::span<const T> params() const noexcept { return params_; }
  std::span<T> params() noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }

  void forward(std::span<const T> input, ForwardTrace<T>& trace) const;

  // Cross-entropy -log p(label) of the traced pass. Adds dLoss/dParams into
  // `grad` (same layout as params) and returns the loss.
  T backward(const ForwardTrace<T>& trace, int label, std::span<T> grad) const;

  // Loss only, for finite-difference checks.
  T loss(std::span<const T> input, int label) const;

 private:
  Architecture arch_;
  std::vector<T> params_;
  std::uint64_t seed_;
};

using CnnModel = Network<float>;

// Pixel / 255 as the network input.
std::vector<float> normalize_patch(const Image& pixels);

// Class probabilities (bonafide, PA).
std::array<double, 2> forward(const CnnModel& model, const Image& patch);
inline std::array<double, 2> forward(const CnnModel& model, const Patch& patch) { return forward(model, patch.pixels); }

// PA-class probability.
double spoofness(const CnnModel& model, const Image& patch);
inline double spoofness(const CnnModel& model, const Patch& patch) { return spoofness(model, patch.pixels); }
inline double spoofness_of(const std::array<double, 2>& probs) { return probs[kPaClass]; }

// Spoofness for each patch; runs in parallel, output in input order.
std::vector<double> spoofness_batch(const CnnModel& model, const std::vector<Patch>& patches);

// lr_start * (lr_end / lr_start)^(step / total).
double lr_schedule(std::int64_t step, std::int64_t total, double lr_start, double lr_end);

// v' = rho * v + (1 - rho) * g^2;  p' = p - lr * g / (sqrt(v') + eps).
template <typename T>
void rmsprop_step(std::span<T> params, std::span<const T> grads, std::span<T> state, double lr, double rho,
                  double eps);

struct AugmentParams {
  bool hflip = false;
  bool vflip = false;
  int crop_row = 0;  // crop window offset
  int crop_col = 0;
  int crop_h = 0;
  int crop_w = 0;
  double brightness = 1.0;
};

// Crop is 90% of each side (135 of 150), placed uniformly.
AugmentParams draw_augment(Rng& rng, int height, int width);

// Flips, crop, bilinear resize back to height x width, brightness scale,
// clip to [0, 1]. `patch` is a normalized height x width plane.
std::vector<float> apply_augment(std::span<const float> patch, int height, int width, const AugmentParams& a);
std::vector<float> augment(std::span<const float> patch, int height, int width, Rng& rng);
std::vector<float> hflip(std::span<const float> patch, int height, int width);
std::vector<float> vflip(std::span<const float> patch, int height, int width);

struct TrainConfig {
  int batch_size = 32;
  int epochs = 5;
  double lr_start = 0.01;
  double lr_end = 0.0001;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  std::uint64_t seed = 1;
  bool augment = true;
  bool evaluate_each_epoch = false;  // full pass over the training set after every epoch

  void validate() const;
};

struct LabeledPatch {
  Image pixels;
  Label label = Label::Bonafide;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;      // mean over the epoch's mini-batches
  double train_accuracy = 0.0;  // predictions made during the epoch, before each update
  double eval_loss = 0.0;       // NaN unless evaluate_each_epoch
  double eval_accuracy = 0.0;
};

struct TrainResult {
  CnnModel model;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batch RMSProp on mean cross-entropy with exponential learning-rate
// decay. Deterministic for a given seed regardless of thread count.
TrainResult train(const std::vector<LabeledPatch>& data, const TrainConfig& cfg, const Architecture& arch,
                  const EpochCallback& on_epoch = {});
TrainResult train(const std::vector<LabeledPatch>& data, const TrainConfig& cfg);

// Checkpoint: "OPAD", u32 version, u32 header length, JSON architecture
// descriptor, then float32 little-endian weights.
void save_checkpoint(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_checkpoint(const std::filesystem::path& path);
std::string architecture_json(const CnnModel& model);

}  // namespace octpad
