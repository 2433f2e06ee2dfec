#include <fstream>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "octpad/error.hpp"
#include "octpad/patches.hpp"

using namespace octpad;

namespace {

// Sets `n` pixels of the 9x9 window around (r, c), in raster order.
void fill_window(BinaryMask& m, int r, int c, int n) {
  for (int dr = -4; dr <= 4 && n > 0; ++dr)
    for (int dc = -4; dc <= 4 && n > 0; ++dc, --n) m.set(r + dr, c + dc, true);
}

Candidate cand(int row, int col, int stride = 30) { return Candidate{row, col, row / stride, col / stride}; }

BScan numbered_scan(int h, int w) {
  BScan s;
  s.scan_id = "s";
  s.image = Image(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) s.image.at(r, c) = static_cast<std::uint8_t>((r * 7 + c * 13) % 256);
  return s;
}

}  // namespace

TEST_SUITE("patches") {
  TEST_CASE("all-false mask gives no candidates") {
    CHECK(find_candidates(BinaryMask(200, 200), PatchConfig{}).empty());
  }

  TEST_CASE("20 of 81 accepts, 19 rejects") {
    BinaryMask m(200, 200);
    fill_window(m, 60, 90, 20);
    const auto c = find_candidates(m, PatchConfig{});
    REQUIRE(c.size() == 1);
    CHECK(c[0] == Candidate{60, 90, 2, 3});

    BinaryMask m19(200, 200);
    fill_window(m19, 60, 90, 19);
    CHECK(find_candidates(m19, PatchConfig{}).empty());
    m19.set(64, 94, true);  // the window's last pixel: 20 again
    CHECK(find_candidates(m19, PatchConfig{}).size() == 1);
  }

  TEST_CASE("lattice points whose window leaves the mask are skipped") {
    BinaryMask m(100, 100, true);
    for (const auto& c : find_candidates(m, PatchConfig{})) {
      CHECK(c.row >= 4);
      CHECK(c.col >= 4);
      CHECK(c.row + 4 < 100);
      CHECK(c.col + 4 < 100);
      CHECK(c.row % 30 == 0);
      CHECK(c.col % 30 == 0);
    }
    CHECK(find_candidates(m, PatchConfig{}).size() == 9);  // rows/cols 30, 60, 90
  }

  TEST_CASE("candidate counts agree with brute force on random masks") {
    std::mt19937_64 gen(43);
    for (int i = 0; i < 30; ++i) {
      const int h = 20 + static_cast<int>(gen() % 120), w = 20 + static_cast<int>(gen() % 120);
      BinaryMask m(h, w);
      const int density = static_cast<int>(gen() % 100);
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m.set(r, c, static_cast<int>(gen() % 100) < density);
      std::vector<Candidate> want;
      for (int r = 0; r < h; r += 30)
        for (int c = 0; c < w; c += 30) {
          if (r < 4 || c < 4 || r + 4 >= h || c + 4 >= w) continue;
          int n = 0;
          for (int dr = -4; dr <= 4; ++dr)
            for (int dc = -4; dc <= 4; ++dc) n += m.at(r + dr, c + dc);
          if (n >= 20) want.push_back(cand(r, c));
        }
      CHECK(find_candidates(m, PatchConfig{}) == want);
    }
  }

  TEST_CASE("column-topmost selection") {
    const std::vector<Candidate> cs{cand(0, 0), cand(30, 0), cand(0, 30)};
    CHECK(select_candidates(cs, 2) == std::vector<Candidate>{cand(0, 0), cand(0, 30)});
    CHECK(select_candidates(cs, 60) == std::vector<Candidate>{cand(0, 0), cand(0, 30), cand(30, 0)});

    std::vector<Candidate> one_col;
    for (int i = 0; i < 61; ++i) one_col.push_back(cand(30 * (60 - i), 0));
    const auto top = select_candidates(one_col, 60);
    REQUIRE(top.size() == 60);
    for (int i = 0; i < 60; ++i) CHECK(top[i].row == 30 * i);
  }

  TEST_CASE("64 columns truncate to the leftmost 60 at depth rank 0") {
    std::vector<Candidate> cs;
    for (int g = 0; g < 64; ++g) {
      cs.push_back(cand(120, g * 30));
      if (g % 3 == 0) cs.push_back(cand(150, g * 30));
    }
    std::sort(cs.begin(), cs.end(), [](auto& a, auto& b) { return std::pair(a.row, a.col) < std::pair(b.row, b.col); });
    const auto sel = select_candidates(cs, 60);
    REQUIRE(sel.size() == 60);
    for (int g = 0; g < 60; ++g) CHECK(sel[g] == cand(120, g * 30));
  }

  TEST_CASE("selection is a permutation when under the cap") {
    std::mt19937_64 gen(47);
    for (int i = 0; i < 30; ++i) {
      std::vector<Candidate> cs;
      for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c)
          if (gen() % 3 == 0) cs.push_back(cand(r * 30, c * 30));
      auto sel = select_candidates(cs, 60);
      CHECK(sel.size() == std::min<std::size_t>(cs.size(), 60));
      if (cs.size() <= 60) {
        std::sort(sel.begin(), sel.end(), [](auto& a, auto& b) { return std::pair(a.row, a.col) < std::pair(b.row, b.col); });
        CHECK(sel == cs);
      }
    }
  }

  TEST_CASE("extraction geometry") {
    const BScan s = numbered_scan(1024, 1900);
    const auto ps = extract_patches(s, {cand(500, 900), cand(10, 10), cand(1020, 1890)}, PatchConfig{});
    REQUIRE(ps.size() == 3);
    CHECK(ps[0].top == 450);
    CHECK(ps[0].left == 825);
    CHECK(ps[0].pixels.at(50, 75) == s.image.at(500, 900));
    for (int i = 0; i < 150; ++i)
      for (int j = 0; j < 150; ++j) CHECK(ps[0].pixels.at(i, j) == s.image.at(450 + i, 825 + j));
    CHECK(ps[1].top == 0);
    CHECK(ps[1].left == 0);
    CHECK(ps[1].candidate == cand(10, 10));
    CHECK(ps[2].top == 1024 - 150);
    CHECK(ps[2].left == 1900 - 150);
    for (const auto& p : ps) {
      CHECK(p.pixels.height() == 150);
      CHECK(p.pixels.width() == 150);
      CHECK(p.source_scan_id == "s");
    }
  }

  TEST_CASE("extraction rejects scans smaller than a patch") {
    CHECK_THROWS_AS(extract_patches(numbered_scan(100, 300), {cand(30, 30)}, PatchConfig{}), Error);
  }

  TEST_CASE("patches_for_scan caps at 60 and every pixel comes from the scan") {
    const BScan s = numbered_scan(400, 1900);
    BinaryMask m(400, 1900, true);
    const auto ps = patches_for_scan(s, m, PatchConfig{});
    CHECK(ps.size() == 60);
    for (const auto& p : ps)
      for (int i = 0; i < 150; i += 7)
        for (int j = 0; j < 150; j += 7) CHECK(p.pixels.at(i, j) == s.image.at(p.top + i, p.left + j));
  }

  TEST_CASE("write_patches names files and manifest lines") {
    const auto dir = oracle::temp_dir("patches_write");
    BScan s = numbered_scan(300, 300);
    s.scan_id = "scanA";
    const auto ps = extract_patches(s, {cand(120, 90), cand(120, 150)}, PatchConfig{});
    CHECK(write_patches(ps, dir, dir / "patches.jsonl") == 2);
    CHECK(std::filesystem::exists(dir / "scanA_0_120_90.png"));
    CHECK(load_image(dir / "scanA_1_120_150.png") == ps[1].pixels);
    std::ifstream in(dir / "patches.jsonl");
    std::string line;
    std::getline(in, line);
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("path") == "scanA_0_120_90.png");
    CHECK(j.at("scan_id") == "scanA");
    CHECK(j.at("row") == 120);
    CHECK(j.at("top") == 70);
  }
}
