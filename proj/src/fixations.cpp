#include "octpad/fixations.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "octpad/error.hpp"

namespace octpad {

void HeatmapConfig::validate() const {
  if (!(kde_sigma > 0.0)) fail(ErrorKind::InvalidArgument, "kde_sigma must be > 0");
  if (top_k_fc < 1) fail(ErrorKind::InvalidArgument, "top_k_fc must be >= 1");
}

namespace {

using UnitMap = std::map<std::size_t, double>;

UnitMap back_through_fc(const CnnModel& model, std::size_t layer, const std::vector<float>& x, const UnitMap& fixed,
                        int top_k) {
  const Architecture& arch = model.arch();
  const std::size_t n = arch.in_shape(layer).size();
  const float* w = model.params().data() + arch.param_offset(layer);
  UnitMap out;
  std::vector<std::pair<double, std::size_t>> contrib;
  for (const auto& [unit, mult] : fixed) {
    contrib.clear();
    const float* row = w + unit * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = static_cast<double>(row[j]) * static_cast<double>(x[j]);
      if (c > 0.0) contrib.emplace_back(c, j);
    }
    const auto k = std::min(contrib.size(), static_cast<std::size_t>(top_k));
    std::partial_sort(contrib.begin(), contrib.begin() + static_cast<std::ptrdiff_t>(k), contrib.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t i = 0; i < k; ++i) out[contrib[i].second] += mult;
  }
  return out;
}

UnitMap back_through_conv(const CnnModel& model, std::size_t layer, const std::vector<float>& x, const UnitMap& fixed) {
  const Architecture& arch = model.arch();
  const LayerSpec& L = arch.layers()[layer];
  const Shape& is = arch.in_shape(layer);
  const Shape& os = arch.out_shape(layer);
  const float* w = model.params().data() + arch.param_offset(layer);
  const int K = L.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(is.height) * is.width;
  const std::size_t out_plane = static_cast<std::size_t>(os.height) * os.width;

  UnitMap out;
  for (const auto& [unit, mult] : fixed) {
    const int o = static_cast<int>(unit / out_plane);
    const int oy = static_cast<int>((unit % out_plane) / os.width);
    const int ox = static_cast<int>(unit % os.width);
    double best_score = 0.0;
    int best_y = -1, best_x = -1, best_c = -1;
    for (int ky = 0; ky < K; ++ky) {
      const int iy = oy * L.stride - L.padding + ky;
      if (iy < 0 || iy >= is.height) continue;
      for (int kx = 0; kx < K; ++kx) {
        const int ix = ox * L.stride - L.padding + kx;
        if (ix < 0 || ix >= is.width) continue;
        double score = 0.0;
        double strongest = 0.0;
        int strongest_c = -1;
        for (int c = 0; c < is.channels; ++c) {
          const double contrib =
              static_cast<double>(w[((static_cast<std::size_t>(o) * is.channels + c) * K + ky) * K + kx]) *
              static_cast<double>(x[c * in_plane + static_cast<std::size_t>(iy) * is.width + ix]);
          if (contrib > 0.0) {
            score += contrib;
            if (contrib > strongest) {
              strongest = contrib;
              strongest_c = c;
            }
          }
        }
        if (score > best_score) {
          best_score = score;
          best_y = iy;
          best_x = ix;
          best_c = strongest_c;
        }
      }
    }
    if (best_c >= 0) out[best_c * in_plane + static_cast<std::size_t>(best_y) * is.width + best_x] += mult;
  }
  return out;
}

}  // namespace

FixationTrace backtrack_units(const CnnModel& model, const ForwardTrace<float>& trace, const HeatmapConfig& cfg) {
  cfg.validate();
  const Architecture& arch = model.arch();
  const std::size_t n_layers = arch.layers().size();
  if (trace.empty() || trace.activations.size() != n_layers + 1 || trace.argmax.size() != n_layers)
    fail(ErrorKind::InvalidArgument, "model without retained activations for this patch");
  for (std::size_t i = 0; i <= n_layers; ++i) {
    const std::size_t expected = i == 0 ? arch.input().size() : arch.out_shape(i - 1).size();
    if (trace.activations[i].size() != expected)
      fail(ErrorKind::InvalidArgument, "retained activations do not match the model");
  }

  const auto probs = trace.probabilities();
  const int predicted = probs[kPaClass] > probs[kBonafideClass] ? kPaClass : kBonafideClass;

  FixationTrace result;
  result.units.resize(n_layers + 1);
  UnitMap current{{static_cast<std::size_t>(predicted), 1.0}};
  result.units[n_layers].assign(current.begin(), current.end());

  for (std::size_t i = n_layers; i-- > 0;) {
    const LayerSpec& L = arch.layers()[i];
    const std::vector<float>& x = trace.activations[i];
    UnitMap next;
    switch (L.kind) {
      case LayerKind::Softmax:
      case LayerKind::Flatten:
        next = current;
        break;
      case LayerKind::ReLU:
        for (const auto& [u, m] : current)
          if (trace.activations[i + 1][u] > 0.0f) next[u] += m;
        break;
      case LayerKind::MaxPool:
        for (const auto& [u, m] : current) next[trace.argmax[i][u]] += m;
        break;
      case LayerKind::FullyConnected:
        next = back_through_fc(model, i, x, current, cfg.top_k_fc);
        break;
      case LayerKind::Conv:
        next = back_through_conv(model, i, x, current);
        break;
    }
    current = std::move(next);
    result.units[i].assign(current.begin(), current.end());
  }
  return result;
}

FixationSet backtrack_fixations(const CnnModel& model, const ForwardTrace<float>& trace, const HeatmapConfig& cfg,
                                std::string patch_id) {
  const FixationTrace units = backtrack_units(model, trace, cfg);
  const Shape& in = model.arch().input();
  const std::size_t plane = static_cast<std::size_t>(in.height) * in.width;

  std::map<std::pair<int, int>, double> merged;
  for (const auto& [idx, weight] : units.units.front()) {
    const std::size_t p = idx % plane;
    merged[{static_cast<int>(p / in.width), static_cast<int>(p % in.width)}] += weight;
  }

  FixationSet out;
  const auto probs = trace.probabilities();
  out.predicted_class = probs[kPaClass] > probs[kBonafideClass] ? kPaClass : kBonafideClass;
  out.patch_id = std::move(patch_id);
  for (const auto& [rc, weight] : merged) out.points.push_back(FixationPoint{rc.first, rc.second, weight});
  return out;
}

FixationSet backtrack_fixations(const CnnModel& model, const Image& patch, const HeatmapConfig& cfg,
                                std::string patch_id) {
  const Shape& in = model.arch().input();
  if (in.channels != 1 || in.height != patch.height() || in.width != patch.width())
    fail(ErrorKind::InvalidArgument, "patch does not match the model input shape");
  ForwardTrace<float> trace;
  model.forward(normalize_patch(patch), trace);
  return backtrack_fixations(model, trace, cfg, std::move(patch_id));
}

Image fixation_heatmap(const FixationSet& fix, int height, int width, const HeatmapConfig& cfg) {
  cfg.validate();
  if (fix.points.empty()) fail(ErrorKind::Data, "no fixations");
  if (height < 1 || width < 1) fail(ErrorKind::InvalidArgument, "heatmap shape must be positive");

  std::vector<double> density(static_cast<std::size_t>(height) * width, 0.0);
  const double inv_two_var = 1.0 / (2.0 * cfg.kde_sigma * cfg.kde_sigma);
  for (const auto& p : fix.points) {
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width)
      fail(ErrorKind::InvalidArgument, "fixation outside the heatmap");
    for (int r = 0; r < height; ++r) {
      const double dr = r - p.row;
      for (int c = 0; c < width; ++c) {
        const double dc = c - p.col;
        density[static_cast<std::size_t>(r) * width + c] += p.weight * std::exp(-(dr * dr + dc * dc) * inv_two_var);
      }
    }
  }
  const double peak = *std::max_element(density.begin(), density.end());
  Image out(height, width);
  auto& px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::clamp(std::floor(255.0 * density[i] / peak + 0.5), 0.0, 255.0));
  return out;
}

void write_fixations_csv(const FixationSet& fix, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "row,col,weight\n";
  for (const auto& p : fix.points) out << p.row << ',' << p.col << ',' << p.weight << '\n';
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

}  // namespace octpad
