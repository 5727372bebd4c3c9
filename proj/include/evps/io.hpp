#pragma once

// File formats. All binary formats are little-endian regardless of host.
//
// Event file (.evt):
//   "EVPSEVT1" | u32 width | u32 height | f64 period | f64 elevation |
//   s8 direction | f64 azimuth_offset | u64 count |
//   count x (f64 t | u16 x | u16 y | s8 p)
//
// Normal file (.nrm):
//   "EVPSNRM1" | u32 width | u32 height | width*height*3 f32 (nx, ny, nz),
//   row-major; invalid pixels are all-zero triples.
//
// Model checkpoint (.mdl):
//   "EVPSMDL1" | u32 layers | layers x (u32 in, u32 out) | f64 dropout |
//   per layer: weights row-major [out][in] as f64, then biases as f64.
//
// Error map (.err):
//   "EVPSERR1" | u32 width | u32 height | width*height f32 degrees,
//   row-major; invalid pixels are stored as -1.

#include <algorithm>
#include <array>
#include <bit>
#include <csetjmp>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <png.h>

#include "evps/core.hpp"
#include "evps/eval.hpp"
#include "evps/network.hpp"

namespace evps {

struct MalformedFile : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

inline constexpr std::string_view kEventMagic = "EVPSEVT1";
inline constexpr std::string_view kNormalMagic = "EVPSNRM1";
inline constexpr std::string_view kModelMagic = "EVPSMDL1";
inline constexpr std::string_view kErrorMagic = "EVPSERR1";

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    buf_.insert(buf_.end(), raw.begin(), raw.end());
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> data, std::string name)
      : buf_(std::move(data)), name_(std::move(name)) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    T v;
    std::memcpy(&v, raw.data(), sizeof(T));
    return v;
  }
  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(buf_.data() + pos_, m.data(), m.size()) != 0)
      throw MalformedFile(name_ + ": bad magic, expected " + std::string(m));
    pos_ += m.size();
  }
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw MalformedFile(name_ + ": truncated file");
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void expect_end() const {
    if (remaining() != 0) throw MalformedFile(name_ + ": trailing bytes after payload");
  }
  const std::string& name() const { return name_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_{0};
  std::string name_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_events(const EventStream& s) {
  detail::ByteWriter w;
  w.magic(kEventMagic);
  w.le<std::uint32_t>(s.width);
  w.le<std::uint32_t>(s.height);
  w.le<double>(s.trajectory.period);
  w.le<double>(s.trajectory.elevation);
  w.le<std::int8_t>(static_cast<std::int8_t>(s.trajectory.direction));
  w.le<double>(s.trajectory.azimuth_offset);
  w.le<std::uint64_t>(s.events.size());
  for (const Event& e : s.events) {
    w.le<double>(e.t);
    w.le<std::uint16_t>(e.x);
    w.le<std::uint16_t>(e.y);
    w.le<std::int8_t>(e.p);
  }
  return w.data();
}

inline EventStream decode_events(std::vector<std::uint8_t> bytes, std::string name = "events") {
  detail::ByteReader r(std::move(bytes), std::move(name));
  r.expect_magic(kEventMagic);
  EventStream s;
  s.width = r.le<std::uint32_t>();
  s.height = r.le<std::uint32_t>();
  s.trajectory.period = r.le<double>();
  s.trajectory.elevation = r.le<double>();
  s.trajectory.direction = r.le<std::int8_t>();
  s.trajectory.azimuth_offset = r.le<double>();
  const auto count = r.le<std::uint64_t>();
  constexpr std::size_t kRecord = 8 + 2 + 2 + 1;
  if (count > r.remaining() / kRecord) throw MalformedFile(r.name() + ": truncated event payload");
  s.events.resize(count);
  for (auto& e : s.events) {
    e.t = r.le<double>();
    e.x = r.le<std::uint16_t>();
    e.y = r.le<std::uint16_t>();
    e.p = r.le<std::int8_t>();
  }
  r.expect_end();
  try {
    s.validate();
  } catch (const InvalidArgument& ex) {
    throw MalformedFile(r.name() + ": " + ex.what());
  }
  return s;
}

inline void write_events(const EventStream& s, const std::filesystem::path& path) {
  detail::write_file(path, encode_events(s));
}

inline EventStream read_events(const std::filesystem::path& path) {
  return decode_events(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Normal maps
// ---------------------------------------------------------------------------

// Stored at 32-bit precision; a decoded valid pixel must be unit length to this tolerance.
inline constexpr double kStoredUnitTolerance = 1e-4;

inline std::vector<std::uint8_t> encode_normals(const NormalMap& m) {
  detail::ByteWriter w;
  w.magic(kNormalMagic);
  w.le<std::uint32_t>(m.width);
  w.le<std::uint32_t>(m.height);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Normal n = m.valid(i) ? m.normals[i] : Normal{};
    w.le<float>(static_cast<float>(n.x));
    w.le<float>(static_cast<float>(n.y));
    w.le<float>(static_cast<float>(n.z));
  }
  return w.data();
}

inline NormalMap decode_normals(std::vector<std::uint8_t> bytes, std::string name = "normals") {
  detail::ByteReader r(std::move(bytes), std::move(name));
  r.expect_magic(kNormalMagic);
  const auto w = r.le<std::uint32_t>();
  const auto h = r.le<std::uint32_t>();
  const std::uint64_t n = static_cast<std::uint64_t>(w) * h;
  if (r.remaining() != n * 12)
    throw MalformedFile(r.name() + ": payload size does not match " + std::to_string(w) + "x" +
                        std::to_string(h));
  NormalMap m(w, h);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double x = r.le<float>();
    const double y = r.le<float>();
    const double z = r.le<float>();
    if (x == 0.0 && y == 0.0 && z == 0.0) continue;
    const Normal v{x, y, z};
    if (!std::isfinite(v.norm()) || std::abs(v.norm() - 1.0) > kStoredUnitTolerance)
      throw MalformedFile(r.name() + ": non-unit normal at pixel " + std::to_string(i));
    m.set(i, v);
  }
  return m;
}

inline void write_normals(const NormalMap& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_normals(m));
}

inline NormalMap read_normals(const std::filesystem::path& path) {
  return decode_normals(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Model checkpoints
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_model(const Model& model) {
  detail::ByteWriter w;
  w.magic(kModelMagic);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(model.layers()));
  for (int l = 0; l < model.layers(); ++l) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(model.weights[l].cols()));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(model.weights[l].rows()));
  }
  w.le<double>(model.config.dropout);
  for (int l = 0; l < model.layers(); ++l) {
    const auto& m = model.weights[l];
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.le<double>(m(r, c));
    for (Eigen::Index r = 0; r < model.biases[l].size(); ++r) w.le<double>(model.biases[l][r]);
  }
  return w.data();
}

inline Model decode_model(std::vector<std::uint8_t> bytes, std::string name = "model") {
  detail::ByteReader r(std::move(bytes), std::move(name));
  r.expect_magic(kModelMagic);
  const auto layers = r.le<std::uint32_t>();
  if (layers == 0 || layers > 1024) throw MalformedFile(r.name() + ": implausible layer count");
  Model m;
  std::uint64_t params = 0;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const auto in = r.le<std::uint32_t>();
    const auto out = r.le<std::uint32_t>();
    if (l == 0) m.config.widths.push_back(static_cast<int>(in));
    else if (static_cast<int>(in) != m.config.widths.back())
      throw MalformedFile(r.name() + ": layer widths are not chained");
    m.config.widths.push_back(static_cast<int>(out));
    params += static_cast<std::uint64_t>(in) * out + out;
  }
  m.config.dropout = r.le<double>();
  try {
    m.config.validate();
  } catch (const InvalidArgument& ex) {
    throw MalformedFile(r.name() + ": " + ex.what());
  }
  if (r.remaining() != params * 8) throw MalformedFile(r.name() + ": parameter payload size mismatch");
  for (std::uint32_t l = 0; l < layers; ++l) {
    const int in = m.config.widths[l];
    const int out = m.config.widths[l + 1];
    Eigen::MatrixXd w(out, in);
    for (int rr = 0; rr < out; ++rr)
      for (int c = 0; c < in; ++c) w(rr, c) = r.le<double>();
    Eigen::VectorXd b(out);
    for (int rr = 0; rr < out; ++rr) b[rr] = r.le<double>();
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  if (!m.all_finite()) throw MalformedFile(r.name() + ": non-finite parameters");
  return m;
}

inline void write_model(const Model& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_model(m));
}

inline Model read_model(const std::filesystem::path& path) {
  return decode_model(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Error maps
// ---------------------------------------------------------------------------

inline void write_error_map(const ErrorMap& em, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.magic(kErrorMagic);
  w.le<std::uint32_t>(em.width);
  w.le<std::uint32_t>(em.height);
  for (std::size_t i = 0; i < em.size(); ++i)
    w.le<float>(em.valid(i) ? static_cast<float>(em.errors[i]) : -1.0f);
  detail::write_file(path, w.data());
}

inline ErrorMap read_error_map(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file(path), path.string());
  r.expect_magic(kErrorMagic);
  ErrorMap em;
  em.width = r.le<std::uint32_t>();
  em.height = r.le<std::uint32_t>();
  const std::uint64_t n = static_cast<std::uint64_t>(em.width) * em.height;
  if (r.remaining() != n * 4) throw MalformedFile(r.name() + ": payload size mismatch");
  em.errors.assign(n, 0.0);
  em.mask.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const float v = r.le<float>();
    if (v < 0.0f) continue;
    if (!(v <= 180.0f)) throw MalformedFile(r.name() + ": error outside [0, 180] degrees");
    em.errors[i] = v;
    em.mask[i] = 1;
  }
  return em;
}

// ---------------------------------------------------------------------------
// CSV interchange: header "t,x,y,p", timestamps with 9 decimals.
// ---------------------------------------------------------------------------

inline std::string format_event_csv_line(const Event& e) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.9f,%u,%u,%d", e.t, static_cast<unsigned>(e.x),
                static_cast<unsigned>(e.y), static_cast<int>(e.p));
  return buf;
}

inline void export_events_csv(const EventStream& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t,x,y,p\n";
  for (const Event& e : s.events) out << format_event_csv_line(e) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

// Resolution is inferred as max coordinate + 1 unless given; the trajectory
// is taken from `meta` (CSV carries none).
inline EventStream import_events_csv(const std::filesystem::path& path,
                                     const LightTrajectory& meta = {},
                                     std::optional<std::pair<std::uint32_t, std::uint32_t>> size = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || (line != "t,x,y,p" && line != "t,x,y,p\r"))
    throw MalformedFile(path.string() + ": missing header line t,x,y,p");
  EventStream s;
  s.trajectory = meta;
  std::uint32_t max_x = 0, max_y = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    double t;
    long x, y, p;
    char tail;
    if (std::sscanf(line.c_str(), "%lf,%ld,%ld,%ld%c", &t, &x, &y, &p, &tail) != 4 ||
        !std::isfinite(t) || t < 0.0 || x < 0 || y < 0 || x > 65535 || y > 65535 ||
        (p != 1 && p != -1))
      throw MalformedFile(path.string() + ":" + std::to_string(lineno) + ": bad event record '" +
                          line + "'");
    s.events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                        static_cast<std::int8_t>(p)});
    max_x = std::max<std::uint32_t>(max_x, static_cast<std::uint32_t>(x));
    max_y = std::max<std::uint32_t>(max_y, static_cast<std::uint32_t>(y));
  }
  if (size) {
    s.width = size->first;
    s.height = size->second;
  } else {
    s.width = s.events.empty() ? 0 : max_x + 1;
    s.height = s.events.empty() ? 0 : max_y + 1;
  }
  try {
    s.validate();
  } catch (const InvalidArgument& ex) {
    throw MalformedFile(path.string() + ": " + ex.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Visualization
// ---------------------------------------------------------------------------

struct RgbImage {
  std::uint32_t width{0};
  std::uint32_t height{0};
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  std::array<std::uint8_t, 3> at(std::uint32_t x, std::uint32_t y) const {
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * width + x);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// round(255 * (n + 1) / 2) per channel; invalid pixels are black.
inline RgbImage visualize_normals(const NormalMap& m) {
  RgbImage img{m.width, m.height, std::vector<std::uint8_t>(3 * m.size(), 0)};
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.valid(i)) continue;
    const Normal& n = m.normals[i];
    img.pixels[3 * i + 0] = to_byte(255.0 * (n.x + 1.0) / 2.0);
    img.pixels[3 * i + 1] = to_byte(255.0 * (n.y + 1.0) / 2.0);
    img.pixels[3 * i + 2] = to_byte(255.0 * (n.z + 1.0) / 2.0);
  }
  return img;
}

// Error colormap, linear between stops: dark gray at 0, red at 1/3,
// yellow at 2/3, white at max. Invalid pixels are black.
inline constexpr std::array<std::array<double, 3>, 4> kErrorColormap{{
    {64.0, 64.0, 64.0},
    {255.0, 0.0, 0.0},
    {255.0, 255.0, 0.0},
    {255.0, 255.0, 255.0},
}};

inline std::array<std::uint8_t, 3> error_color(double degrees, double max_degrees) {
  const double u = std::clamp(degrees / max_degrees, 0.0, 1.0) * (kErrorColormap.size() - 1);
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(u), kErrorColormap.size() - 2);
  const double f = u - static_cast<double>(k);
  std::array<std::uint8_t, 3> c{};
  for (int ch = 0; ch < 3; ++ch)
    c[ch] = to_byte(kErrorColormap[k][ch] * (1.0 - f) + kErrorColormap[k + 1][ch] * f);
  return c;
}

inline RgbImage visualize_error(const ErrorMap& em, double max_degrees) {
  if (!(max_degrees > 0.0)) throw InvalidArgument("max degrees must be positive");
  RgbImage img{em.width, em.height, std::vector<std::uint8_t>(3 * em.size(), 0)};
  for (std::size_t i = 0; i < em.size(); ++i) {
    if (!em.valid(i)) continue;
    const auto c = error_color(em.errors[i], max_degrees);
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return img;
}

namespace detail {

struct PngFile {
  std::FILE* fp{nullptr};
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

// 8-bit RGB PNG.
inline void write_png(const RgbImage& img, const std::filesystem::path& path) {
  if (img.width == 0 || img.height == 0) throw InvalidArgument("cannot write an empty image");
  detail::PngFile file{std::fopen(path.string().c_str(), "wb")};
  if (!file.fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, file.fp);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t y = 0; y < img.height; ++y) {
    auto* row = const_cast<png_bytep>(img.pixels.data() + 3 * static_cast<std::size_t>(y) * img.width);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw MalformedFile(path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage img{image.width, image.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw MalformedFile(path.string() + ": " + image.message);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

// Sectioned text document:
//   [section]
//   key = value
// and table sections whose first line is a comma-separated header.
struct Report {
  struct Table {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
  };

  std::vector<std::pair<std::string, std::string>> summary;
  std::vector<Table> tables;
  std::vector<std::pair<std::string, std::string>> config;

  void add_summary(std::string key, std::string value) {
    summary.emplace_back(std::move(key), std::move(value));
  }
  void add_config(std::string key, std::string value) {
    config.emplace_back(std::move(key), std::move(value));
  }
  Table& add_table(std::string name, std::vector<std::string> header) {
    tables.push_back({std::move(name), std::move(header), {}});
    return tables.back();
  }

  std::string str() const {
    std::ostringstream os;
    os << "# evps report\n";
    auto section = [&os](const char* name, const auto& kv) {
      if (kv.empty()) return;
      os << "\n[" << name << "]\n";
      for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
    };
    auto csv = [&os](const std::vector<std::string>& row) {
      for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
      os << '\n';
    };
    section("summary", summary);
    for (const auto& t : tables) {
      os << "\n[" << t.name << "]\n";
      csv(t.header);
      for (const auto& row : t.rows) csv(row);
    }
    section("config", config);
    return os.str();
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << str();
  }
};

// Reads the key = value pairs of one section of a report document.
inline std::map<std::string, std::string> read_report_section(const std::filesystem::path& path,
                                                              const std::string& section) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  bool inside = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() == '[') {
      inside = line == "[" + section + "]";
      continue;
    }
    if (!inside) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

inline std::string format_double(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

}  // namespace evps
