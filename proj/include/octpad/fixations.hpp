#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "octpad/cnn.hpp"

namespace octpad {

enum class ConvKeepPolicy { ArgmaxPerField };

struct HeatmapConfig {
  double kde_sigma = 5.0;
  int top_k_fc = 5;
  ConvKeepPolicy conv_keep = ConvKeepPolicy::ArgmaxPerField;

  void validate() const;
};

struct FixationPoint {
  int row = 0;
  int col = 0;
  double weight = 1.0;  // how many backtracked paths ended on this pixel

  friend bool operator==(const FixationPoint&, const FixationPoint&) = default;
};

struct FixationSet {
  std::vector<FixationPoint> points;  // deduplicated, sorted by (row, col)
  int predicted_class = kBonafideClass;
  std::string patch_id;
};

// Fixated units per activation tensor: units[i] lists (flat index, weight)
// pairs on the input of layer i; units.back() is the softmax output.
struct FixationTrace {
  std::vector<std::vector<std::pair<std::size_t, double>>> units;
};

// Walks the predicted class's evidence from the softmax output back to the
// input:
//   FullyConnected: the top_k_fc inputs with the largest positive w*x.
//   ReLU: drops units whose activation is zero.
//   MaxPool: the input that attained the max.
//   Conv: the receptive-field location with the largest summed positive
//         contribution across input channels, on its strongest channel.
//   Flatten, Softmax: index pass-through.
FixationTrace backtrack_units(const CnnModel& model, const ForwardTrace<float>& trace, const HeatmapConfig& cfg);

// Fixations on the input plane of an already traced forward pass.
FixationSet backtrack_fixations(const CnnModel& model, const ForwardTrace<float>& trace, const HeatmapConfig& cfg,
                                std::string patch_id = {});
// Runs the forward pass itself.
FixationSet backtrack_fixations(const CnnModel& model, const Image& patch, const HeatmapConfig& cfg,
                                std::string patch_id = {});

// Weighted sum of isotropic Gaussians at the fixation points, scaled so the
// maximum is 255.
Image fixation_heatmap(const FixationSet& fix, int height, int width, const HeatmapConfig& cfg);

// row,col,weight
void write_fixations_csv(const FixationSet& fix, const std::filesystem::path& path);

}  // namespace octpad
