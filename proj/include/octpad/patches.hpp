#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "octpad/image.hpp"

namespace octpad {

struct PatchConfig {
  int stride = 30;
  int window = 9;        // odd
  int min_nonzero = 20;  // candidate needs at least this many foreground pixels in its window
  int patch_h = 150;
  int patch_w = 150;
  int anchor_row = 50;   // candidate position inside the patch
  int anchor_col = 75;
  int max_patches = 60;

  void validate() const;
};

struct Candidate {
  int row = 0;
  int col = 0;
  int grid_row = 0;
  int grid_col = 0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct Patch {
  Image pixels;
  std::string source_scan_id;
  Candidate candidate;  // the lattice point the patch was cut for, before any clamping
  int top = 0;          // scan coordinates of the patch's top-left pixel
  int left = 0;
};

// Lattice points (multiples of stride) whose full window lies inside the mask
// and holds at least min_nonzero foreground pixels, in raster order.
std::vector<Candidate> find_candidates(const BinaryMask& mask, const PatchConfig& cfg);

// Column-topmost first: depth rank 0 of every lattice column left to right,
// then depth rank 1, and so on, truncated to max_patches.
std::vector<Candidate> select_candidates(const std::vector<Candidate>& cands, int max_patches);

// Cuts patch_h x patch_w crops of the original scan with the candidate at
// (anchor_row, anchor_col). Windows that leave the image are shifted by the
// minimum amount needed to fit.
std::vector<Patch> extract_patches(const BScan& scan, const std::vector<Candidate>& selected, const PatchConfig& cfg);

// find_candidates -> select_candidates -> extract_patches.
std::vector<Patch> patches_for_scan(const BScan& scan, const BinaryMask& mask, const PatchConfig& cfg);

// Writes <out_dir>/<scan_id>_<k>_<row>_<col>.png per patch and one JSON line
// per patch to `manifest` (appending). Returns the number written.
std::size_t write_patches(const std::vector<Patch>& patches, const std::filesystem::path& out_dir,
                          const std::filesystem::path& manifest);

}  // namespace octpad
