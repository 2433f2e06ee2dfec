#include "octpad/patches.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "json.hpp"
#include "octpad/error.hpp"

namespace octpad {

namespace fs = std::filesystem;

void PatchConfig::validate() const {
  if (stride < 1) fail(ErrorKind::InvalidArgument, "stride must be >= 1");
  if (window < 1 || window % 2 == 0) fail(ErrorKind::InvalidArgument, "candidate window must be odd");
  if (min_nonzero < 0 || min_nonzero > window * window)
    fail(ErrorKind::InvalidArgument, "min_nonzero must be in [0, window^2]");
  if (patch_h < 1 || patch_w < 1) fail(ErrorKind::InvalidArgument, "patch size must be positive");
  if (anchor_row < 0 || anchor_row >= patch_h || anchor_col < 0 || anchor_col >= patch_w)
    fail(ErrorKind::InvalidArgument, "anchor must lie inside the patch");
  if (max_patches < 0) fail(ErrorKind::InvalidArgument, "max_patches must be >= 0");
}

std::vector<Candidate> find_candidates(const BinaryMask& mask, const PatchConfig& cfg) {
  cfg.validate();
  const int r = cfg.window / 2;
  const int H = mask.height();
  const int W = mask.width();

  // Integral image of the mask; entry (y, x) counts foreground in [0,y) x [0,x).
  std::vector<int> integral(static_cast<std::size_t>(H + 1) * (W + 1), 0);
  auto I = [&](int y, int x) -> int& { return integral[static_cast<std::size_t>(y) * (W + 1) + x]; };
  for (int y = 0; y < H; ++y) {
    int run = 0;
    for (int x = 0; x < W; ++x) {
      run += mask.at(y, x) ? 1 : 0;
      I(y + 1, x + 1) = I(y, x + 1) + run;
    }
  }

  std::vector<Candidate> out;
  for (int gy = 0; gy * cfg.stride < H; ++gy) {
    const int y = gy * cfg.stride;
    if (y - r < 0 || y + r >= H) continue;
    for (int gx = 0; gx * cfg.stride < W; ++gx) {
      const int x = gx * cfg.stride;
      if (x - r < 0 || x + r >= W) continue;
      const int count = I(y + r + 1, x + r + 1) - I(y - r, x + r + 1) - I(y + r + 1, x - r) + I(y - r, x - r);
      if (count >= cfg.min_nonzero) out.push_back(Candidate{y, x, gy, gx});
    }
  }
  return out;
}

std::vector<Candidate> select_candidates(const std::vector<Candidate>& cands, int max_patches) {
  std::map<int, std::vector<Candidate>> by_column;
  for (const auto& c : cands) by_column[c.grid_col].push_back(c);
  std::size_t depth = 0;
  for (auto& [col, group] : by_column) {
    std::stable_sort(group.begin(), group.end(), [](const Candidate& a, const Candidate& b) { return a.row < b.row; });
    depth = std::max(depth, group.size());
  }

  std::vector<Candidate> out;
  const auto cap = static_cast<std::size_t>(std::max(0, max_patches));
  for (std::size_t rank = 0; rank < depth && out.size() < cap; ++rank) {
    for (const auto& [col, group] : by_column) {
      if (rank < group.size()) out.push_back(group[rank]);
      if (out.size() == cap) break;
    }
  }
  return out;
}

std::vector<Patch> extract_patches(const BScan& scan, const std::vector<Candidate>& selected, const PatchConfig& cfg) {
  cfg.validate();
  const Image& img = scan.image;
  if (img.height() < cfg.patch_h || img.width() < cfg.patch_w)
    fail(ErrorKind::Data, "scan " + scan.scan_id + " is smaller than the patch size");

  std::vector<Patch> out;
  out.reserve(selected.size());
  for (const auto& cand : selected) {
    const int top = std::clamp(cand.row - cfg.anchor_row, 0, img.height() - cfg.patch_h);
    const int left = std::clamp(cand.col - cfg.anchor_col, 0, img.width() - cfg.patch_w);
    Image crop(cfg.patch_h, cfg.patch_w);
    for (int y = 0; y < cfg.patch_h; ++y) {
      const auto src = img.row(top + y).subspan(static_cast<std::size_t>(left), static_cast<std::size_t>(cfg.patch_w));
      std::copy(src.begin(), src.end(), crop.row(y).begin());
    }
    out.push_back(Patch{std::move(crop), scan.scan_id, cand, top, left});
  }
  return out;
}

std::vector<Patch> patches_for_scan(const BScan& scan, const BinaryMask& mask, const PatchConfig& cfg) {
  if (mask.height() != scan.image.height() || mask.width() != scan.image.width())
    fail(ErrorKind::InvalidArgument, "mask and scan dimensions differ");
  return extract_patches(scan, select_candidates(find_candidates(mask, cfg), cfg.max_patches), cfg);
}

std::size_t write_patches(const std::vector<Patch>& patches, const fs::path& out_dir, const fs::path& manifest) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) fail(ErrorKind::Io, "cannot create output directory " + out_dir.string());
  std::ofstream lines(manifest, std::ios::app);
  if (!lines) fail(ErrorKind::Io, "cannot write " + manifest.string());

  for (std::size_t k = 0; k < patches.size(); ++k) {
    const Patch& p = patches[k];
    const std::string name = p.source_scan_id + "_" + std::to_string(k) + "_" + std::to_string(p.candidate.row) +
                             "_" + std::to_string(p.candidate.col) + ".png";
    save_image(p.pixels, out_dir / name);
    nlohmann::json obj{{"path", name},
                       {"scan_id", p.source_scan_id},
                       {"index", k},
                       {"row", p.candidate.row},
                       {"col", p.candidate.col},
                       {"top", p.top},
                       {"left", p.left}};
    lines << obj.dump() << '\n';
  }
  if (!lines) fail(ErrorKind::Io, "cannot write " + manifest.string());
  return patches.size();
}

}  // namespace octpad
