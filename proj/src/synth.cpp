#include "octpad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "octpad/error.hpp"
#include "octpad/parallel.hpp"
#include "octpad/random.hpp"

namespace octpad {

namespace fs = std::filesystem;

void PhantomParams::validate() const {
  if (height < 150 || width < 150) fail(ErrorKind::InvalidArgument, "phantom must be at least 150x150");
  if (!(surface_depth_mean + junction_offset_mean + 100.0 < height))
    fail(ErrorKind::InvalidArgument, "surface_depth_mean + junction_offset_mean + 100 must be < height");
  if (!(band_brightness > 3.0 * speckle_sigma) || band_brightness > 255.0)
    fail(ErrorKind::InvalidArgument, "band_brightness must exceed 3*speckle_sigma and be <= 255");
  if (speckle_sigma < 0.0) fail(ErrorKind::InvalidArgument, "speckle_sigma must be >= 0");
  if (surface_amplitude < 0.0 || surface_depth_mean - surface_amplitude < 1.0)
    fail(ErrorKind::InvalidArgument, "surface must stay inside the image");
  if (band_thickness < 1) fail(ErrorKind::InvalidArgument, "band_thickness must be >= 1");
  if (junction_offset_mean < 2.0 * band_thickness + 8.0)
    fail(ErrorKind::InvalidArgument, "junction_offset_mean too small for the band thickness");
  if (duct_count < 0) fail(ErrorKind::InvalidArgument, "duct_count must be >= 0");
  if (overlay_gap < 1) fail(ErrorKind::InvalidArgument, "overlay_gap must be >= 1");
  if (body_level < 0.0 || body_level >= 0.5 || body_attenuation <= 0.0)
    fail(ErrorKind::InvalidArgument, "body_level must be in [0, 0.5) and body_attenuation > 0");
}

bool PhantomGeometry::in_band(int r, int c) const {
  auto inside = [&](int top) { return top >= 0 && r >= top && r < top + band_thickness; };
  return inside(surface[c]) || inside(second[c]);
}

int PhantomGeometry::rows_to_band(int r, int c) const {
  int best = std::numeric_limits<int>::max();
  for (int top : {surface[c], second[c]}) {
    if (top < 0) continue;
    const int bottom = top + band_thickness - 1;
    const int d = r < top ? top - r : (r > bottom ? r - bottom : 0);
    best = std::min(best, d);
  }
  return best;
}

namespace {

constexpr double kRidgePeriod = 45.0;
constexpr double kSwellPeriod = 400.0;
constexpr double kAirLevel = 0.08;       // fractions of band_brightness
constexpr double kEpidermisLevel = 0.35;
constexpr double kJunctionLevel = 0.9;
constexpr double kDermisLevel = 0.3;
constexpr double kDuctLevel = 0.45;
constexpr double kDermisAttenuation = 25.0;

}  // namespace

Phantom generate_scan(const PhantomParams& p, Label label, const std::string& scan_id) {
  p.validate();
  if (label == Label::PA && p.pa_mode == PaMode::None)
    fail(ErrorKind::InvalidArgument, "PA phantom needs pa_mode Homogeneous or DoubleLayerThin");

  Rng rng(p.seed);
  const double two_pi = 2.0 * std::numbers::pi;
  const double phase_ridge = rng.uniform(0.0, two_pi);
  const double phase_swell = rng.uniform(0.0, two_pi);

  const int H = p.height;
  const int W = p.width;
  const int t = p.band_thickness;
  const double B = p.band_brightness;
  const PaMode mode = label == Label::Bonafide ? PaMode::None : p.pa_mode;

  PhantomGeometry geo;
  geo.band_thickness = t;
  geo.surface.resize(W);
  geo.second.assign(W, -1);
  for (int c = 0; c < W; ++c) {
    const double ridge = std::sin(two_pi * c / kRidgePeriod + phase_ridge);
    const double swell = std::sin(two_pi * c / kSwellPeriod + phase_swell);
    const int s = static_cast<int>(std::lround(p.surface_depth_mean + 0.5 * p.surface_amplitude * (ridge + swell)));
    geo.surface[c] = s;
    if (mode == PaMode::None) {
      const double ripple = 2.0 * std::sin(two_pi * c / kRidgePeriod + phase_ridge + std::numbers::pi / 3.0);
      geo.second[c] = s + static_cast<int>(std::lround(p.junction_offset_mean + ripple));
    } else if (mode == PaMode::DoubleLayerThin) {
      geo.second[c] = s + t + p.overlay_gap;
    }
  }

  // Noise-free intensity field.
  std::vector<double> field(static_cast<std::size_t>(H) * W);
  const double air = kAirLevel * B;
  for (int c = 0; c < W; ++c) {
    const int s = geo.surface[c];
    const int j = geo.second[c];
    for (int r = 0; r < H; ++r) {
      double v = air;
      if (r < s) {
        v = air;
      } else if (geo.in_band(r, c)) {
        v = (mode == PaMode::None && r >= j) ? kJunctionLevel * B : B;
      } else if (mode == PaMode::None) {
        if (r < j)
          v = kEpidermisLevel * B;
        else
          v = air + (kDermisLevel * B - air) * std::exp(-(r - j - t) / kDermisAttenuation);
      } else if (mode == PaMode::Homogeneous) {
        v = air + (p.body_level * B - air) * std::exp(-(r - s - t) / p.body_attenuation);
      } else {
        const int below = j + t;
        if (r < below)
          v = p.body_level * B;  // between the two overlay bands
        else
          v = air + (kDermisLevel * B - air) * std::exp(-(r - below) / kDermisAttenuation);
      }
      field[static_cast<std::size_t>(r) * W + c] = v;
    }
  }

  // Helical eccrine ducts crossing the epidermis.
  if (mode == PaMode::None) {
    for (int d = 0; d < p.duct_count; ++d) {
      const double c0 = rng.uniform(10.0, W - 10.0);
      const double phase = rng.uniform(0.0, two_pi);
      const int top = geo.surface[static_cast<int>(c0)] + t;
      const int bottom = geo.second[static_cast<int>(c0)];
      for (int r = top; r < bottom; ++r) {
        const int col = static_cast<int>(std::lround(c0 + 3.0 * std::sin(two_pi * (r - top) / 8.0 + phase)));
        for (int cc = col; cc <= col + 1; ++cc) {
          if (cc < 0 || cc >= W) continue;
          if (r >= geo.surface[cc] + t && r < geo.second[cc]) field[static_cast<std::size_t>(r) * W + cc] = kDuctLevel * B;
        }
      }
    }
  }

  Image img(H, W);
  auto& px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    double v = field[i];
    if (p.speckle_sigma > 0.0) v += p.speckle_sigma * rng.normal();
    px[i] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
  }

  Phantom out;
  out.scan.scan_id = scan_id;
  out.scan.image = std::move(img);
  out.scan.label = label;
  out.geometry = std::move(geo);
  return out;
}

const std::vector<std::string>& default_materials() {
  static const std::vector<std::string> materials{
      "ballistic_gelatin",      "clear_ecoflex",        "tan_ecoflex",
      "yellow_pigmented_silicone", "flesh_pigmented_ecoflex", "nusil_conductive_silicone",
      "flesh_pigmented_pdms",   "elmers_glue",
  };
  return materials;
}

namespace {

struct MaterialProfile {
  const char* name;
  PaMode mode;
  double brightness;  // factor on band_brightness
  int thickness;      // added to band_thickness
  double body_level;
  double attenuation;
  int gap;
};

constexpr MaterialProfile kProfiles[] = {
    {"ballistic_gelatin", PaMode::Homogeneous, 0.85, 1, 0.18, 60.0, 4},
    {"clear_ecoflex", PaMode::DoubleLayerThin, 0.80, 0, 0.20, 40.0, 4},
    {"tan_ecoflex", PaMode::Homogeneous, 0.95, 0, 0.25, 35.0, 4},
    {"yellow_pigmented_silicone", PaMode::Homogeneous, 1.00, 2, 0.20, 45.0, 4},
    {"flesh_pigmented_ecoflex", PaMode::Homogeneous, 0.90, 1, 0.28, 30.0, 4},
    {"nusil_conductive_silicone", PaMode::Homogeneous, 0.75, 0, 0.15, 50.0, 4},
    {"flesh_pigmented_pdms", PaMode::Homogeneous, 1.00, -1, 0.22, 40.0, 4},
    {"elmers_glue", PaMode::DoubleLayerThin, 0.90, -1, 0.24, 40.0, 3},
};

std::uint64_t hash_name(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

}  // namespace

PhantomParams material_params(const PhantomParams& base, const std::string& material) {
  MaterialProfile prof{};
  bool known = false;
  for (const auto& candidate : kProfiles) {
    if (material == candidate.name) {
      prof = candidate;
      known = true;
      break;
    }
  }
  if (!known) {
    Rng rng(hash_name(material));
    prof = MaterialProfile{"", rng.coin(0.25) ? PaMode::DoubleLayerThin : PaMode::Homogeneous,
                           rng.uniform(0.75, 1.0), static_cast<int>(rng.below(3)) - 1,
                           rng.uniform(0.15, 0.28), rng.uniform(30.0, 60.0), 3 + static_cast<int>(rng.below(2))};
  }
  PhantomParams p = base;
  p.pa_mode = prof.mode;
  p.band_brightness = std::min(255.0, base.band_brightness * prof.brightness);
  p.band_thickness = std::max(1, base.band_thickness + prof.thickness);
  p.body_level = prof.body_level;
  p.body_attenuation = prof.attenuation;
  p.overlay_gap = prof.gap;
  return p;
}

fs::path generate_corpus(int n_bonafide, int n_pa, const std::vector<std::string>& materials,
                         const PhantomParams& base, const fs::path& out_dir) {
  base.validate();
  if (n_bonafide < 0 || n_pa < 0) fail(ErrorKind::InvalidArgument, "scan counts must be >= 0");
  if (materials.empty() && n_pa > 0) fail(ErrorKind::InvalidArgument, "PA scans need at least one material");
  if (n_pa < static_cast<int>(materials.size()))
    fail(ErrorKind::InvalidArgument, "n_pa must be >= number of materials");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) fail(ErrorKind::Io, "cannot create output directory " + out_dir.string());

  const int total = n_bonafide + n_pa;
  std::vector<ScanRecord> records(static_cast<std::size_t>(total));
  parallel_for(static_cast<std::size_t>(total), [&](std::size_t i) {
    const bool is_pa = static_cast<int>(i) >= n_bonafide;
    const int k = is_pa ? static_cast<int>(i) - n_bonafide : static_cast<int>(i);
    char id[32];
    std::snprintf(id, sizeof id, "%s_%05d", is_pa ? "pa" : "bf", k);

    PhantomParams p = base;
    p.seed = mix_seed(base.seed, i);
    Rng jitter(mix_seed(p.seed, 0xC0FFEE));
    std::optional<std::string> material;
    if (is_pa) {
      material = materials[static_cast<std::size_t>(k) % materials.size()];
      p = material_params(p, *material);
    } else {
      p.band_brightness = std::min(255.0, base.band_brightness * jitter.uniform(0.9, 1.05));
    }
    // Scan-to-scan variation of the profile depth; clamped to the validity region.
    const double max_depth = base.height - base.junction_offset_mean - 101.0;
    p.surface_depth_mean = std::clamp(base.surface_depth_mean + jitter.uniform(-8.0, 8.0),
                                      base.surface_amplitude + 2.0, max_depth);
    p.junction_offset_mean = base.junction_offset_mean + jitter.uniform(-5.0, 5.0);
    if (p.surface_depth_mean + p.junction_offset_mean + 100.0 >= p.height)
      p.junction_offset_mean = p.height - p.surface_depth_mean - 101.0;

    Phantom ph = generate_scan(p, is_pa ? Label::PA : Label::Bonafide, id);
    const fs::path image_path = out_dir / (std::string(id) + ".png");
    save_image(ph.scan.image, image_path);
    records[i] = ScanRecord{fs::absolute(image_path), id, ph.scan.label, material, std::nullopt};
  });

  const fs::path manifest = out_dir / "manifest.jsonl";
  write_manifest(records, manifest);
  return manifest;
}

}  // namespace octpad
