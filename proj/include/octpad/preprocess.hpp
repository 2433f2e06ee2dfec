#pragma once

#include "octpad/image.hpp"

namespace octpad {

struct PreprocessConfig {
  double h = 20.0;        // NLM filter strength
  int nlm_template = 7;   // odd
  int nlm_search = 21;    // odd, > nlm_template
  int dilation_kernel = 5;

  void validate() const;
};

// Index into [0, n) with mirror reflection that does not repeat the edge
// sample: -1 -> 1, n -> n - 2.
int reflect_index(int i, int n);

// Non-local means. Each output pixel is the weighted mean of the search
// window around it, with weight exp(-ssd / (template^2 * h^2)) where ssd is
// the integer sum of squared differences between the two template windows.
// Borders are reflected. Offsets are accumulated per pixel in row-major
// offset order so the result is reproducible bit for bit.
Image nlm_denoise(const Image& img, const PreprocessConfig& cfg);

// Grayscale max filter over a kernel x kernel neighborhood, reflected borders.
Image dilate(const Image& img, int kernel);

struct OtsuResult {
  int threshold = 0;
  BinaryMask mask;  // img > threshold
};

// Global Otsu threshold. Candidate t splits pixels into <= t and > t; the
// returned t maximizes between-class variance, compared in exact integer
// arithmetic, with the smallest maximizer winning ties.
OtsuResult otsu_threshold(const Image& img);

// nlm_denoise -> dilate -> otsu_threshold.
BinaryMask preprocess_pipeline(const Image& scan, const PreprocessConfig& cfg);
inline BinaryMask preprocess_pipeline(const BScan& scan, const PreprocessConfig& cfg) {
  return preprocess_pipeline(scan.image, cfg);
}

}  // namespace octpad
