#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "octpad/error.hpp"
#include "octpad/image.hpp"

using namespace octpad;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("imagecore") {
  TEST_CASE("2x2 P5 decodes to the stored bytes") {
    const auto dir = oracle::temp_dir("img_p5");
    write_bytes(dir / "a.pgm", std::string("P5\n2 2\n255\n") + std::string("\x00\x80\xff\x07", 4));
    const Image img = load_image(dir / "a.pgm");
    CHECK(img.height() == 2);
    CHECK(img.width() == 2);
    CHECK(img.pixels() == std::vector<std::uint8_t>{0, 128, 255, 7});
  }

  TEST_CASE("P5 header comments are skipped") {
    const auto dir = oracle::temp_dir("img_comment");
    write_bytes(dir / "a.pgm", std::string("P5\n# note\n1 1\n255\n") + std::string("\x2a", 1));
    CHECK(load_image(dir / "a.pgm").pixels() == std::vector<std::uint8_t>{42});
  }

  TEST_CASE("bad image files") {
    const auto dir = oracle::temp_dir("img_bad");
    write_bytes(dir / "t.pgm", "P5\n2 ");
    CHECK(error_of([&] { load_image(dir / "t.pgm"); }).find("malformed image") != std::string::npos);
    write_bytes(dir / "z.pgm", "P5\n0 3\n255\n");
    CHECK(error_of([&] { load_image(dir / "z.pgm"); }).find("zero-sized image") != std::string::npos);
    write_bytes(dir / "d.pgm", std::string("P5\n1 1\n65535\n") + std::string(2, '\0'));
    CHECK(error_of([&] { load_image(dir / "d.pgm"); }).find("unsupported bit depth") != std::string::npos);
    write_bytes(dir / "r.pgm", std::string("P5\n2 2\n255\n") + std::string(3, '\0'));
    CHECK(error_of([&] { load_image(dir / "r.pgm"); }).find("malformed image") != std::string::npos);
    CHECK_THROWS_AS(load_image(dir / "missing.png"), Error);
  }

  TEST_CASE("round trip is bit exact for random images in both formats") {
    const auto dir = oracle::temp_dir("img_rt");
    std::mt19937_64 gen(5);
    for (int i = 0; i < 40; ++i) {
      const int h = std::uniform_int_distribution<int>(1, 40)(gen);
      const int w = std::uniform_int_distribution<int>(1, 40)(gen);
      std::vector<std::uint8_t> px(static_cast<std::size_t>(h) * w);
      for (auto& v : px) v = static_cast<std::uint8_t>(gen());
      const Image img(h, w, px);
      for (const char* ext : {".png", ".pgm"}) {
        const fs::path p = dir / ("r" + std::to_string(i) + ext);
        save_image(img, p);
        CHECK(load_image(p) == img);
      }
    }
  }

  TEST_CASE("full-size scans keep their dimensions") {
    const auto dir = oracle::temp_dir("img_full");
    save_image(Image(1024, 1900), dir / "z.png");
    const Image back = load_image(dir / "z.png");
    CHECK(back.height() == 1024);
    CHECK(back.width() == 1900);
    CHECK(std::all_of(back.pixels().begin(), back.pixels().end(), [](auto v) { return v == 0; }));
  }

  TEST_CASE("saving into a missing directory fails") {
    CHECK_THROWS_AS(save_image(Image(2, 2), "/nonexistent_dir_octpad/x.png"), Error);
  }

  TEST_CASE("mask rendering") {
    BinaryMask m(2, 3);
    m.set(0, 1, true);
    m.set(1, 2, true);
    CHECK(m.count() == 2);
    const Image img = m.to_image();
    CHECK(img.pixels() == std::vector<std::uint8_t>{0, 255, 0, 0, 0, 255});
    CHECK(BinaryMask::from_image(img) == m);
  }

  TEST_CASE("labels") {
    CHECK(parse_label("bonafide") == Label::Bonafide);
    CHECK(parse_label("pa") == Label::PA);
    CHECK(to_string(Label::PA) == "pa");
    CHECK(error_of([] { parse_label("spoof"); }).find("unknown label") != std::string::npos);
  }

  TEST_CASE("manifest parsing") {
    const auto dir = oracle::temp_dir("img_manifest");
    save_image(Image(2, 2), dir / "a.png");
    save_image(Image(2, 2), dir / "b.png");

    std::ofstream(dir / "m.jsonl") << R"({"path":"a.png","scan_id":"a","label":"bonafide"})" << "\n\n"
                                   << R"({"path":"b.png","scan_id":"b","label":"pa","material":"gel","subject_id":"s1"})"
                                   << "\n";
    const auto recs = parse_manifest(dir / "m.jsonl");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].scan_id == "a");
    CHECK(recs[0].label == Label::Bonafide);
    CHECK_FALSE(recs[0].material.has_value());
    CHECK(recs[0].path == dir / "a.png");
    CHECK(recs[1].material == std::optional<std::string>("gel"));
    CHECK(recs[1].subject_id == std::optional<std::string>("s1"));

    std::ofstream(dir / "dup.jsonl") << R"({"path":"a.png","scan_id":"a","label":"bonafide"})" << "\n"
                                     << R"({"path":"b.png","scan_id":"a","label":"pa"})" << "\n";
    CHECK(error_of([&] { parse_manifest(dir / "dup.jsonl"); }).find("duplicate scan_id") != std::string::npos);

    std::ofstream(dir / "lab.jsonl") << R"({"path":"a.png","scan_id":"a","label":"spoof"})" << "\n";
    CHECK(error_of([&] { parse_manifest(dir / "lab.jsonl"); }).find("unknown label") != std::string::npos);

    std::ofstream(dir / "key.jsonl") << R"({"path":"a.png","label":"pa"})" << "\n";
    CHECK(error_of([&] { parse_manifest(dir / "key.jsonl"); }).find("missing required key") != std::string::npos);

    std::ofstream(dir / "gone.jsonl") << R"({"path":"nope.png","scan_id":"a","label":"pa"})" << "\n";
    CHECK_THROWS_AS(parse_manifest(dir / "gone.jsonl"), Error);
  }

  TEST_CASE("manifest write then parse is the identity") {
    const auto dir = oracle::temp_dir("img_manifest_rt");
    std::mt19937_64 gen(11);
    for (int round = 0; round < 10; ++round) {
      std::vector<ScanRecord> recs;
      const int n = std::uniform_int_distribution<int>(1, 12)(gen);
      for (int i = 0; i < n; ++i) {
        ScanRecord r;
        r.scan_id = "s" + std::to_string(round) + "_" + std::to_string(i);
        r.path = dir / (r.scan_id + ".png");
        save_image(Image(1, 1), r.path);
        r.label = gen() % 2 ? Label::PA : Label::Bonafide;
        if (gen() % 2) r.material = "mat \"" + std::to_string(gen() % 5) + "\"";
        if (gen() % 2) r.subject_id = "subj" + std::to_string(gen() % 7);
        recs.push_back(r);
      }
      const fs::path m = dir / ("m" + std::to_string(round) + ".jsonl");
      write_manifest(recs, m);
      CHECK(parse_manifest(m) == recs);
    }
  }
}
