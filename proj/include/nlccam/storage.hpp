#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nlccam/error.hpp"
#include "nlccam/localization.hpp"
#include "nlccam/metrics.hpp"
#include "nlccam/tensor.hpp"

namespace nlccam {

class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public StorageError {
 public:
  using StorageError::StorageError;
};
class TruncatedError : public StorageError {
 public:
  using StorageError::StorageError;
};
class UnsupportedVersionError : public StorageError {
 public:
  using StorageError::StorageError;
};
class UnknownDtypeError : public StorageError {
 public:
  using StorageError::StorageError;
};
// Structurally invalid content: rank 0, duplicate names, bad extents.
class FormatError : public StorageError {
 public:
  using StorageError::StorageError;
};

class ParseError : public StorageError {
 public:
  ParseError(std::size_t line, const std::string& msg)
      : StorageError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr std::string_view kTensorMagic = "CCAMTNSR";
inline constexpr std::string_view kCheckpointMagic = "CCAMCKPT";
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 1;

using Bytes = std::vector<std::uint8_t>;

namespace detail {

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_bytes(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

class Reader {
 public:
  Reader(const Bytes& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data()) + pos_, n);
    pos_ += n;
    return s;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError(what_ + ": truncated at byte " + std::to_string(pos_) + " (needed " +
                           std::to_string(n) + " more)");
    }
  }

  const Bytes& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes to a sibling temp file then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StorageError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, Bytes(text.begin(), text.end()));
}

inline Tensor read_tensor_body(Reader& r) {
  if (r.str(kTensorMagic.size()) != kTensorMagic) throw BadMagicError("tensor: bad magic");
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw UnsupportedVersionError("tensor: unsupported version " + std::to_string(version));
  }
  const auto dtype = r.u32();
  if (dtype != kDtypeFloat32) throw UnknownDtypeError("tensor: unknown dtype code " + std::to_string(dtype));
  const auto rank = r.u32();
  if (rank == 0 || rank > 4) throw FormatError("tensor: rank must be 1..4, got " + std::to_string(rank));
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& e : shape) {
    e = r.u32();
    if (e == 0) throw FormatError("tensor: zero extent");
    count *= e;
  }
  if (r.remaining() / 4 < count) {
    throw TruncatedError("tensor: payload holds " + std::to_string(r.remaining()) + " bytes, need " +
                         std::to_string(count * 4));
  }
  std::vector<double> data(count);
  for (auto& v : data) v = static_cast<double>(r.f32());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

inline Bytes encode_tensor(const Tensor& t) {
  if (t.rank() == 0) throw FormatError("tensor: rank-0 tensors cannot be stored");
  Bytes out;
  out.reserve(8 + 12 + 4 * t.rank() + 4 * t.size());
  detail::put_bytes(out, kTensorMagic);
  detail::put_u32(out, kFormatVersion);
  detail::put_u32(out, kDtypeFloat32);
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
  for (double v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline Tensor decode_tensor(const Bytes& bytes) {
  detail::Reader r(bytes, "tensor");
  Tensor t = detail::read_tensor_body(r);
  if (r.remaining() != 0) throw FormatError("tensor: trailing bytes after payload");
  return t;
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  detail::write_file_atomic(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  return decode_tensor(detail::read_file(path));
}

// Rounds every value through 32-bit float, i.e. what a save/load cycle yields.
inline Tensor to_stored_precision(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

// Named tensors plus free-form key=value metadata.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;

  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& get(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint: missing parameter '" + name + "'");
    return it->second;
  }
  std::string meta(const std::string& key) const {
    const auto it = metadata.find(key);
    if (it == metadata.end()) throw FormatError("checkpoint: missing metadata key '" + key + "'");
    return it->second;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline Bytes encode_checkpoint(const Checkpoint& ckpt) {
  Bytes out;
  detail::put_bytes(out, kCheckpointMagic);
  detail::put_u32(out, kFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    detail::put_bytes(out, name);
    const Bytes body = encode_tensor(t);
    out.insert(out.end(), body.begin(), body.end());
  }
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("checkpoint: metadata entry '" + k + "' contains a reserved character");
    }
    meta += k + "=" + v + "\n";
  }
  detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  detail::put_bytes(out, meta);
  return out;
}

inline Checkpoint decode_checkpoint(const Bytes& bytes) {
  detail::Reader r(bytes, "checkpoint");
  if (r.str(kCheckpointMagic.size()) != kCheckpointMagic) throw BadMagicError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw UnsupportedVersionError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u32();
    std::string name = r.str(len);
    Tensor t = detail::read_tensor_body(r);
    if (!ckpt.tensors.emplace(name, std::move(t)).second) {
      throw FormatError("checkpoint: duplicate tensor name '" + name + "'");
    }
  }
  const auto meta_len = r.u32();
  const std::string meta = r.str(meta_len);
  std::istringstream lines(meta);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: malformed metadata line '" + line + "'");
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_file_atomic(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

// Manifest: id \t tensor_path \t label \t x0,y0,x1,y1[;x0,y0,x1,y1...]
struct ManifestEntry {
  std::string id;
  std::string tensor_path;
  std::size_t label = 0;
  std::vector<Box> boxes;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::ostringstream oss;
  for (const auto& e : entries) {
    oss << e.id << '\t' << e.tensor_path << '\t' << e.label << '\t';
    for (std::size_t i = 0; i < e.boxes.size(); ++i) {
      const Box& b = e.boxes[i];
      if (i) oss << ';';
      oss << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1;
    }
    oss << '\n';
  }
  return oss.str();
}

namespace detail {

inline long long parse_field_int(const std::string& s, std::size_t line, const char* what) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ParseError(line, std::string("malformed ") + what + " '" + s + "'");
  }
  if (used != s.size()) throw ParseError(line, std::string("malformed ") + what + " '" + s + "'");
  return v;
}

}  // namespace detail

inline std::vector<ManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::size_t p = 0;
    while (true) {
      const auto tab = line.find('\t', p);
      fields.push_back(line.substr(p, tab == std::string::npos ? std::string::npos : tab - p));
      if (tab == std::string::npos) break;
      p = tab + 1;
    }
    if (fields.size() != 4) {
      throw ParseError(line_no, "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.id = fields[0];
    e.tensor_path = fields[1];
    if (e.id.empty()) throw ParseError(line_no, "empty id");
    if (e.tensor_path.empty()) throw ParseError(line_no, "empty tensor path");
    const auto label = detail::parse_field_int(fields[2], line_no, "label");
    if (label < 0) throw ParseError(line_no, "negative label");
    e.label = static_cast<std::size_t>(label);

    std::size_t bp = 0;
    const std::string& boxes = fields[3];
    while (true) {
      const auto semi = boxes.find(';', bp);
      const std::string one = boxes.substr(bp, semi == std::string::npos ? std::string::npos : semi - bp);
      std::array<int, 4> v{};
      std::size_t cp = 0;
      for (int i = 0; i < 4; ++i) {
        const auto comma = one.find(',', cp);
        if ((i < 3) == (comma == std::string::npos)) {
          throw ParseError(line_no, "malformed box field '" + one + "'");
        }
        v[i] = static_cast<int>(detail::parse_field_int(
            one.substr(cp, comma == std::string::npos ? std::string::npos : comma - cp), line_no,
            "box coordinate"));
        cp = comma + 1;
      }
      const Box b{v[0], v[1], v[2], v[3]};
      if (!b.valid()) throw ParseError(line_no, "invalid box '" + one + "'");
      e.boxes.push_back(b);
      if (semi == std::string::npos) break;
      bp = semi + 1;
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  detail::write_text_atomic(path, format_manifest(entries));
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  const Bytes bytes = detail::read_file(path);
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// One CSV row block. `prefix` (may be empty) labels the block, e.g. the
// combination function it was produced with.
struct ReportBlock {
  std::string prefix;
  ErrorReport report;
  bool include_gt_known = true;
};

struct ReportRow {
  std::string metric;
  double value = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

inline constexpr std::string_view kReportHeader = "metric,value,count_correct,count_total";

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

inline std::vector<ReportRow> report_rows(const std::vector<ReportBlock>& blocks) {
  std::vector<ReportRow> rows;
  for (const auto& b : blocks) {
    for (const MetricLine* m : b.report.lines()) {
      if (m == &b.report.gt_known && !b.include_gt_known) continue;
      const std::string name = b.prefix.empty() ? m->name : b.prefix + "/" + m->name;
      rows.push_back({name, m->error_percent, m->correct, m->total});
    }
  }
  return rows;
}

inline std::string format_report_csv(const std::vector<ReportRow>& rows) {
  std::string out(kReportHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += detail::csv_field(r.metric) + "," + detail::format_value(r.value) + "," +
           std::to_string(r.correct) + "," + std::to_string(r.total) + "\n";
  }
  return out;
}

inline std::vector<ReportRow> parse_report_csv(std::string_view text) {
  std::vector<ReportRow> rows;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string line(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != kReportHeader) throw ParseError(1, "unexpected report header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    if (fields.size() != 4) throw ParseError(line_no, "expected 4 CSV fields");
    ReportRow r;
    r.metric = fields[0];
    try {
      r.value = std::stod(fields[1]);
    } catch (const std::exception&) {
      throw ParseError(line_no, "malformed value '" + fields[1] + "'");
    }
    r.correct = static_cast<std::size_t>(detail::parse_field_int(fields[2], line_no, "count"));
    r.total = static_cast<std::size_t>(detail::parse_field_int(fields[3], line_no, "count"));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_report_csv(const std::filesystem::path& path, const std::vector<ReportBlock>& blocks) {
  detail::write_text_atomic(path, format_report_csv(report_rows(blocks)));
}

enum class HeatmapStyle { Gray, Color };

// Piecewise-linear blue -> cyan -> green -> yellow -> red.
inline std::array<std::uint8_t, 3> colormap(double v) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};
  v = std::clamp(v, 0.0, 1.0);
  const double pos = v * 4.0;
  const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(pos));
  const double t = pos - static_cast<double>(i);
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<std::uint8_t>(std::lround(stops[i][c] * (1.0 - t) + stops[i + 1][c] * t));
  }
  return rgb;
}

inline constexpr std::array<std::uint8_t, 3> kBoxColor{0, 0, 255};

inline Bytes encode_heatmap(const Tensor& map, HeatmapStyle style, std::optional<Box> box = {}) {
  require_rank(map, 2, "render_heatmap");
  const std::size_t h = map.extent(0), w = map.extent(1);
  const bool gray = style == HeatmapStyle::Gray;
  const std::string header = std::string(gray ? "P5" : "P6") + "\n" + std::to_string(w) + " " +
                             std::to_string(h) + "\n255\n";
  Bytes out(header.begin(), header.end());
  const std::size_t channels = gray ? 1 : 3;
  const std::size_t base = out.size();
  out.resize(base + h * w * channels);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = std::clamp(map.at(y, x), 0.0, 1.0);
      std::uint8_t* px = out.data() + base + (y * w + x) * channels;
      bool on_edge = false;
      if (box) {
        const int xi = static_cast<int>(x), yi = static_cast<int>(y);
        on_edge = box->contains(xi, yi) &&
                  (xi == box->x0 || xi == box->x1 - 1 || yi == box->y0 || yi == box->y1 - 1);
      }
      if (gray) {
        px[0] = on_edge ? 255 : static_cast<std::uint8_t>(std::lround(255.0 * v));
      } else {
        const auto rgb = on_edge ? kBoxColor : colormap(v);
        std::copy(rgb.begin(), rgb.end(), px);
      }
    }
  }
  return out;
}

inline void render_heatmap(const Tensor& map, const std::filesystem::path& path, HeatmapStyle style,
                           std::optional<Box> box = {}) {
  detail::write_file_atomic(path, encode_heatmap(map, style, box));
}

}  // namespace nlccam
