#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace octpad {

// Row-major 8-bit grayscale grid.
class Image {
 public:
  Image() = default;
  Image(int height, int width, std::uint8_t fill = 0);
  Image(int height, int width, std::vector<std::uint8_t> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }
  std::size_t size() const noexcept { return pixels_.size(); }

  std::uint8_t at(int row, int col) const { return pixels_[index(row, col)]; }
  std::uint8_t& at(int row, int col) { return pixels_[index(row, col)]; }

  std::span<const std::uint8_t> row(int r) const {
    return {pixels_.data() + static_cast<std::size_t>(r) * width_, static_cast<std::size_t>(width_)};
  }
  std::span<std::uint8_t> row(int r) {
    return {pixels_.data() + static_cast<std::size_t>(r) * width_, static_cast<std::size_t>(width_)};
  }

  const std::vector<std::uint8_t>& pixels() const noexcept { return pixels_; }
  std::vector<std::uint8_t>& pixels() noexcept { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Row-major boolean grid, same dimensions as the image it was derived from.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, bool fill = false);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }

  bool at(int row, int col) const { return bits_[static_cast<std::size_t>(row) * width_ + col] != 0; }
  void set(int row, int col, bool v) { bits_[static_cast<std::size_t>(row) * width_ + col] = v ? 1 : 0; }
  std::size_t count() const;

  // 0/255 rendering, the on-disk representation of a mask.
  Image to_image() const;
  // Any non-zero pixel is foreground.
  static BinaryMask from_image(const Image& img);

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

enum class Label { Bonafide, PA };

std::string to_string(Label label);
Label parse_label(const std::string& text);

struct BScan {
  std::string scan_id;
  Image image;
  Label label = Label::Bonafide;
  std::optional<std::string> material;
  std::optional<std::string> subject_id;
};

struct ScanRecord {
  std::filesystem::path path;
  std::string scan_id;
  Label label = Label::Bonafide;
  std::optional<std::string> material;
  std::optional<std::string> subject_id;

  friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

// Reads binary PGM (P5, maxval 255) or 8-bit grayscale PNG, chosen by the
// file's magic bytes.
Image load_image(const std::filesystem::path& path);

// Format follows the extension: ".pgm" writes P5, anything else PNG.
void save_image(const Image& img, const std::filesystem::path& path);

// Image plus the manifest metadata of `record`.
BScan load_scan(const ScanRecord& record);

// Relative paths resolve against the manifest's directory. Each referenced
// image must exist.
std::vector<ScanRecord> parse_manifest(const std::filesystem::path& path);

// Paths are written relative to the manifest directory when they live below it.
void write_manifest(const std::vector<ScanRecord>& records, const std::filesystem::path& path);

}  // namespace octpad
