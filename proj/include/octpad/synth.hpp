#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "octpad/image.hpp"

namespace octpad {

enum class PaMode { None, Homogeneous, DoubleLayerThin };

// Synthetic B-scan phantom parameters. Intensities are in 8-bit units, depths
// and thicknesses in pixels.
struct PhantomParams {
  int height = 256;
  int width = 640;
  double surface_depth_mean = 70.0;
  double surface_amplitude = 10.0;     // peak-to-peak ridge modulation
  double junction_offset_mean = 50.0;  // epidermis thickness
  double band_brightness = 200.0;
  double speckle_sigma = 12.0;
  int duct_count = 3;
  int band_thickness = 5;
  double body_level = 0.22;       // PA bulk intensity as a fraction of band_brightness
  double body_attenuation = 40.0; // PA bulk decay length
  int overlay_gap = 4;            // spacing of the two bands in a thin overlay
  PaMode pa_mode = PaMode::None;
  std::uint64_t seed = 1;

  void validate() const;
};

// Ground-truth layout of a generated phantom. Band rows are the top row of
// each band; -1 where the band does not exist.
struct PhantomGeometry {
  int band_thickness = 0;
  std::vector<int> surface;     // stratum corneum / overlay surface
  std::vector<int> second;      // papillary junction (bonafide) or inner overlay band (thin PA)

  // True when row r of column c lies in a bright band.
  bool in_band(int r, int c) const;
  // Distance in rows from (r, c) to the nearest band row, or a large value
  // when the column has no band.
  int rows_to_band(int r, int c) const;
};

struct Phantom {
  BScan scan;
  PhantomGeometry geometry;
};

// Bonafide: surface band, darker epidermis with optional helical ducts,
// papillary-junction band, attenuating dermis. Homogeneous PA: surface band
// over attenuating structureless bulk. Thin-overlay PA: two closely spaced
// surface bands and no junction. Additive Gaussian speckle, clipped to
// [0, 255]. Pure function of (params, label).
Phantom generate_scan(const PhantomParams& params, Label label, const std::string& scan_id = "phantom");

// The PA material tags used by the default corpus.
const std::vector<std::string>& default_materials();

// Parameter perturbation for a PA made of `material`. Unknown names get a
// deterministic perturbation derived from the name.
PhantomParams material_params(const PhantomParams& base, const std::string& material);

// Writes <out_dir>/<scan_id>.png for every scan plus <out_dir>/manifest.jsonl
// and returns the manifest path. PA scans cycle through `materials`. Per-scan
// seeds derive from base.seed.
std::filesystem::path generate_corpus(int n_bonafide, int n_pa, const std::vector<std::string>& materials,
                                      const PhantomParams& base, const std::filesystem::path& out_dir);

}  // namespace octpad
