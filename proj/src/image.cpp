#include "octpad/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"
#include "octpad/error.hpp"

namespace octpad {

namespace fs = std::filesystem;
using nlohmann::json;

Image::Image(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) fail(ErrorKind::InvalidArgument, "negative image size");
  pixels_.assign(static_cast<std::size_t>(height) * width, fill);
}

Image::Image(int height, int width, std::vector<std::uint8_t> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 0 || width < 0 || pixels_.size() != static_cast<std::size_t>(height) * width)
    fail(ErrorKind::InvalidArgument, "pixel buffer does not match image size");
}

BinaryMask::BinaryMask(int height, int width, bool fill) : height_(height), width_(width) {
  bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Image BinaryMask::to_image() const {
  std::vector<std::uint8_t> px(bits_.size());
  std::transform(bits_.begin(), bits_.end(), px.begin(), [](std::uint8_t b) { return b ? 255 : 0; });
  return Image(height_, width_, std::move(px));
}

BinaryMask BinaryMask::from_image(const Image& img) {
  BinaryMask m(img.height(), img.width());
  std::transform(img.pixels().begin(), img.pixels().end(), m.bits_.begin(),
                 [](std::uint8_t v) { return v != 0 ? 1 : 0; });
  return m;
}

std::string to_string(Label label) { return label == Label::PA ? "pa" : "bonafide"; }

Label parse_label(const std::string& text) {
  if (text == "bonafide") return Label::Bonafide;
  if (text == "pa") return Label::PA;
  fail(ErrorKind::Format, "unknown label \"" + text + "\"");
}

namespace {

std::vector<std::uint8_t> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// PGM header tokens are whitespace separated and may carry '#' comments.
class PgmHeader {
 public:
  explicit PgmHeader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  long next_int() {
    skip_space_and_comments();
    long value = 0;
    int digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) fail(ErrorKind::Format, "malformed image: header value too large");
    }
    if (digits == 0) fail(ErrorKind::Format, "malformed image: bad PGM header");
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      fail(ErrorKind::Format, "malformed image: bad PGM header");
    return pos_ + 1;
  }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
};

Image decode_pgm(const std::vector<std::uint8_t>& bytes) {
  PgmHeader header(bytes);
  const long width = header.next_int();
  const long height = header.next_int();
  const long maxval = header.next_int();
  const std::size_t offset = header.raster_offset();
  if (width <= 0 || height <= 0) fail(ErrorKind::Format, "zero-sized image");
  if (maxval != 255) fail(ErrorKind::Format, "unsupported bit depth (maxval " + std::to_string(maxval) + ")");
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() < offset + n) fail(ErrorKind::Format, "malformed image: truncated raster");
  return Image(static_cast<int>(height), static_cast<int>(width),
               std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                                         bytes.begin() + static_cast<std::ptrdiff_t>(offset + n)));
}

struct PngReadState {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_from_buffer(png_structp png, png_bytep out, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + len > st->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, st->bytes->data() + st->pos, len);
  st->pos += len;
}

void png_error_to_exception(png_structp, png_const_charp msg) {
  throw Error(ErrorKind::Format, std::string("malformed image: ") + msg);
}

void png_warning_ignore(png_structp, png_const_charp) {}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_exception,
                                           png_warning_ignore);
  if (!png) fail(ErrorKind::Io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  PngReadState state{&bytes, 0};
  png_set_read_fn(png, &state, png_read_from_buffer);
  png_read_info(png, info);

  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (width == 0 || height == 0) fail(ErrorKind::Format, "zero-sized image");
  if (color != PNG_COLOR_TYPE_GRAY) fail(ErrorKind::Format, "unsupported PNG color type (grayscale only)");
  if (depth != 8) fail(ErrorKind::Format, "unsupported bit depth " + std::to_string(depth));

  Image img(static_cast<int>(height), static_cast<int>(width));
  std::vector<png_bytep> rows(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = img.row(static_cast<int>(r)).data();
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

void write_png(const Image& img, const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) fail(ErrorKind::Io, "cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_exception,
                                            png_warning_ignore);
  if (!png) fail(ErrorKind::Io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.height(); ++r)
    png_write_row(png, const_cast<png_bytep>(img.row(r).data()));
  png_write_end(png, nullptr);
  if (std::fflush(file.get()) != 0) fail(ErrorKind::Io, "cannot write " + path.string());
}

void write_pgm(const Image& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()), static_cast<std::streamsize>(img.size()));
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

std::optional<std::string> optional_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) fail(ErrorKind::Format, std::string("key \"") + key + "\" must be a string or null");
  return it->get<std::string>();
}

std::string required_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorKind::Format, std::string("missing required key \"") + key + "\"");
  if (!it->is_string()) fail(ErrorKind::Format, std::string("key \"") + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

Image load_image(const fs::path& path) {
  const auto bytes = read_all(path);
  static constexpr std::array<std::uint8_t, 8> kPngMagic{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
  if (bytes.size() >= kPngMagic.size() && std::equal(kPngMagic.begin(), kPngMagic.end(), bytes.begin()))
    return decode_png(bytes);
  fail(ErrorKind::Format, "malformed image: unsupported format in " + path.string());
}

void save_image(const Image& img, const fs::path& path) {
  if (img.empty()) fail(ErrorKind::InvalidArgument, "cannot save a zero-sized image");
  if (path.extension() == ".pgm")
    write_pgm(img, path);
  else
    write_png(img, path);
}

BScan load_scan(const ScanRecord& record) {
  return BScan{record.scan_id, load_image(record.path), record.label, record.material, record.subject_id};
}

std::vector<ScanRecord> parse_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
  const fs::path base = path.parent_path();

  std::vector<ScanRecord> records;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const json obj = json::parse(line);
      if (!obj.is_object()) fail(ErrorKind::Format, "record is not a JSON object");
      ScanRecord rec;
      rec.path = required_string(obj, "path");
      rec.scan_id = required_string(obj, "scan_id");
      rec.label = parse_label(required_string(obj, "label"));
      rec.material = optional_string(obj, "material");
      rec.subject_id = optional_string(obj, "subject_id");
      if (rec.path.is_relative()) rec.path = base / rec.path;
      rec.path = rec.path.lexically_normal();
      if (!seen.insert(rec.scan_id).second) fail(ErrorKind::Format, "duplicate scan_id \"" + rec.scan_id + "\"");
      if (!fs::exists(rec.path)) fail(ErrorKind::Io, "image not found: " + rec.path.string());
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, where + "invalid JSON: " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), where + e.what());
    }
  }
  return records;
}

void write_manifest(const std::vector<ScanRecord>& records, const fs::path& path) {
  const fs::path base = path.parent_path().empty() ? fs::current_path() : fs::absolute(path.parent_path());
  std::ostringstream out;
  for (const auto& rec : records) {
    fs::path p = rec.path;
    if (p.is_absolute()) {
      const fs::path rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    json obj{{"path", p.generic_string()},
             {"scan_id", rec.scan_id},
             {"label", to_string(rec.label)},
             {"material", rec.material ? json(*rec.material) : json(nullptr)},
             {"subject_id", rec.subject_id ? json(*rec.subject_id) : json(nullptr)}};
    out << obj.dump() << '\n';
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) fail(ErrorKind::Io, "cannot write manifest " + path.string());
  file << out.str();
  if (!file) fail(ErrorKind::Io, "cannot write manifest " + path.string());
}

}  // namespace octpad
