#include "octpad/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "octpad/error.hpp"
#include "octpad/parallel.hpp"

namespace octpad {

void PreprocessConfig::validate() const {
  auto odd_at_least_3 = [](int v) { return v >= 3 && v % 2 == 1; };
  if (!(h > 0.0) || !std::isfinite(h)) fail(ErrorKind::InvalidArgument, "nlm filter strength h must be > 0");
  if (!odd_at_least_3(nlm_template) || !odd_at_least_3(nlm_search) || !odd_at_least_3(dilation_kernel))
    fail(ErrorKind::InvalidArgument, "window sizes must be odd and >= 3");
  if (nlm_template >= nlm_search) fail(ErrorKind::InvalidArgument, "nlm template must be smaller than search window");
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

namespace {

// Image with a reflected border of `pad` pixels on every side, as int32 so the
// squared differences need no conversions.
struct Padded {
  int pad;
  int height;
  int width;
  std::vector<std::int32_t> px;

  Padded(const Image& img, int pad_) : pad(pad_), height(img.height() + 2 * pad_), width(img.width() + 2 * pad_) {
    px.resize(static_cast<std::size_t>(height) * width);
    for (int r = 0; r < height; ++r) {
      const auto src = img.row(reflect_index(r - pad, img.height()));
      std::int32_t* dst = px.data() + static_cast<std::size_t>(r) * width;
      for (int c = 0; c < width; ++c) dst[c] = src[reflect_index(c - pad, img.width())];
    }
  }

  const std::int32_t* row(int r) const { return px.data() + static_cast<std::size_t>(r) * width; }
};

// NLM for output rows [row_begin, row_end).
void nlm_rows(const Padded& P, int W, int tr, int sr, const std::vector<double>& weight_of_ssd, int row_begin,
              int row_end, std::vector<double>& wsum, std::vector<double>& vsum) {
  const int pad = P.pad;
  const int span = W + 2 * tr;        // columns whose template sums are needed
  const int col0 = pad - tr;          // padded column of the first of them
  const int rows = row_end - row_begin;
  wsum.assign(static_cast<std::size_t>(rows) * W, 0.0);
  vsum.assign(static_cast<std::size_t>(rows) * W, 0.0);

  std::vector<std::int32_t> colsum(span);
  std::vector<std::int32_t> diff(span);
  std::vector<double> weight(W);

  // diff[x] = (P(r, col0 + x) - P(r + dy, col0 + x + dx))^2 for padded row r.
  auto sq_diff_row = [&](int r, int dy, int dx) {
    const std::int32_t* a = P.row(r) + col0;
    const std::int32_t* b = P.row(r + dy) + col0 + dx;
    for (int x = 0; x < span; ++x) {
      const std::int32_t d = a[x] - b[x];
      diff[x] = d * d;
    }
  };

  for (int dy = -sr; dy <= sr; ++dy) {
    for (int dx = -sr; dx <= sr; ++dx) {
      // Vertical template sums for the first output row of the band.
      std::fill(colsum.begin(), colsum.end(), 0);
      for (int k = -tr; k <= tr; ++k) {
        sq_diff_row(pad + row_begin + k, dy, dx);
        for (int x = 0; x < span; ++x) colsum[x] += diff[x];
      }

      for (int y = row_begin; y < row_end; ++y) {
        if (y > row_begin) {
          sq_diff_row(pad + y + tr, dy, dx);
          for (int x = 0; x < span; ++x) colsum[x] += diff[x];
          sq_diff_row(pad + y - tr - 1, dy, dx);
          for (int x = 0; x < span; ++x) colsum[x] -= diff[x];
        }

        // Horizontal sliding window over colsum gives the template SSD.
        std::int32_t ssd = 0;
        for (int x = 0; x < 2 * tr + 1; ++x) ssd += colsum[x];
        for (int x = 0; x < W; ++x) {
          if (x > 0) ssd += colsum[x + 2 * tr] - colsum[x - 1];
          weight[x] = weight_of_ssd[static_cast<std::size_t>(ssd)];
        }

        const std::int32_t* q = P.row(pad + y + dy) + pad + dx;
        double* ws = wsum.data() + static_cast<std::size_t>(y - row_begin) * W;
        double* vs = vsum.data() + static_cast<std::size_t>(y - row_begin) * W;
        for (int x = 0; x < W; ++x) {
          ws[x] += weight[x];
          vs[x] += weight[x] * static_cast<double>(q[x]);
        }
      }
    }
  }
}

std::uint8_t round_clip(double v) {
  const double r = std::floor(v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

}  // namespace

Image nlm_denoise(const Image& img, const PreprocessConfig& cfg) {
  cfg.validate();
  if (img.height() < cfg.nlm_search || img.width() < cfg.nlm_search)
    fail(ErrorKind::InvalidArgument, "image too small for the NLM search window");

  const int tr = cfg.nlm_template / 2;
  const int sr = cfg.nlm_search / 2;
  const int H = img.height();
  const int W = img.width();
  const double denom = static_cast<double>(cfg.nlm_template * cfg.nlm_template) * cfg.h * cfg.h;
  const Padded P(img, sr + tr);

  // SSD is an integer in [0, template^2 * 255^2], so every weight the filter
  // can use is tabulated once.
  const std::size_t max_ssd = static_cast<std::size_t>(cfg.nlm_template) * cfg.nlm_template * 255 * 255;
  std::vector<double> weight_of_ssd(max_ssd + 1);
  for (std::size_t s = 0; s <= max_ssd; ++s) weight_of_ssd[s] = std::exp(-static_cast<double>(s) / denom);

  constexpr int kBand = 32;
  const int bands = (H + kBand - 1) / kBand;
  Image out(H, W);
  parallel_for(static_cast<std::size_t>(bands), [&](std::size_t b) {
    const int r0 = static_cast<int>(b) * kBand;
    const int r1 = std::min(H, r0 + kBand);
    std::vector<double> wsum;
    std::vector<double> vsum;
    nlm_rows(P, W, tr, sr, weight_of_ssd, r0, r1, wsum, vsum);
    for (int y = r0; y < r1; ++y) {
      auto dst = out.row(y);
      const std::size_t off = static_cast<std::size_t>(y - r0) * W;
      for (int x = 0; x < W; ++x) dst[x] = round_clip(vsum[off + x] / wsum[off + x]);
    }
  });
  return out;
}

Image dilate(const Image& img, int kernel) {
  if (kernel < 3 || kernel % 2 == 0) fail(ErrorKind::InvalidArgument, "dilation kernel must be odd and >= 3");
  if (img.empty()) fail(ErrorKind::InvalidArgument, "cannot dilate an empty image");
  const int r = kernel / 2;
  const int H = img.height();
  const int W = img.width();

  Image horiz(H, W);
  for (int y = 0; y < H; ++y) {
    const auto src = img.row(y);
    auto dst = horiz.row(y);
    for (int x = 0; x < W; ++x) {
      std::uint8_t m = 0;
      for (int k = -r; k <= r; ++k) m = std::max(m, src[reflect_index(x + k, W)]);
      dst[x] = m;
    }
  }
  Image out(H, W);
  for (int y = 0; y < H; ++y) {
    auto dst = out.row(y);
    std::copy(horiz.row(reflect_index(y - r, H)).begin(), horiz.row(reflect_index(y - r, H)).end(), dst.begin());
    for (int k = -r + 1; k <= r; ++k) {
      const auto src = horiz.row(reflect_index(y + k, H));
      for (int x = 0; x < W; ++x) dst[x] = std::max(dst[x], src[x]);
    }
  }
  return out;
}

namespace {

using u128 = unsigned __int128;

// a * b for a < 2^128, b < 2^64, as a 192-bit (hi, lo) pair.
struct U192 {
  std::uint64_t hi;
  u128 lo;
};

U192 mul(u128 a, std::uint64_t b) {
  const u128 lo_part = static_cast<u128>(static_cast<std::uint64_t>(a)) * b;
  const u128 hi_part = static_cast<u128>(static_cast<std::uint64_t>(a >> 64)) * b;
  const u128 mid = (lo_part >> 64) + hi_part;
  return U192{static_cast<std::uint64_t>(mid >> 64),
              (mid << 64) | static_cast<std::uint64_t>(lo_part)};
}

bool greater(const U192& a, const U192& b) { return a.hi != b.hi ? a.hi > b.hi : a.lo > b.lo; }

}  // namespace

OtsuResult otsu_threshold(const Image& img) {
  if (img.empty()) fail(ErrorKind::InvalidArgument, "otsu_threshold: empty image");
  std::array<std::uint64_t, 256> hist{};
  for (std::uint8_t v : img.pixels()) ++hist[v];

  const auto N = static_cast<std::int64_t>(img.size());
  std::int64_t S = 0;
  for (int v = 0; v < 256; ++v) S += static_cast<std::int64_t>(hist[v]) * v;

  // Between-class variance at t is (N*S0 - n0*S)^2 / (N^2 * n0 * n1); the
  // common 1/N^2 factor is dropped and fractions are compared by
  // cross-multiplication.
  int best_t = -1;
  u128 best_num = 0;
  std::uint64_t best_den = 1;
  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += static_cast<std::int64_t>(hist[t]);
    s0 += static_cast<std::int64_t>(hist[t]) * t;
    const std::int64_t n1 = N - n0;
    if (n0 == 0 || n1 == 0) continue;
    const std::int64_t a = N * s0 - n0 * S;
    const auto mag = static_cast<std::uint64_t>(a < 0 ? -a : a);
    const u128 num = static_cast<u128>(mag) * mag;
    const auto den = static_cast<std::uint64_t>(n0) * static_cast<std::uint64_t>(n1);
    if (best_t < 0 || greater(mul(num, best_den), mul(best_num, den))) {
      best_t = t;
      best_num = num;
      best_den = den;
    }
  }
  if (best_t < 0 || best_num == 0) fail(ErrorKind::Data, "degenerate histogram: no valid two-class split");

  OtsuResult result;
  result.threshold = best_t;
  result.mask = BinaryMask(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    const auto src = img.row(y);
    for (int x = 0; x < img.width(); ++x) result.mask.set(y, x, src[x] > best_t);
  }
  return result;
}

BinaryMask preprocess_pipeline(const Image& scan, const PreprocessConfig& cfg) {
  cfg.validate();
  const Image denoised = nlm_denoise(scan, cfg);
  const Image enhanced = dilate(denoised, cfg.dilation_kernel);
  return otsu_threshold(enhanced).mask;
}

}  // namespace octpad
