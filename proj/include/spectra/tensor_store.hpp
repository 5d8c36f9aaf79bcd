#pragma once

// Reader/writer for the safetensors container layout:
//
//   bytes [0, 8)      u64 little-endian header length N
//   bytes [8, 8+N)    UTF-8 JSON object:
//                       name -> {"dtype": "F32"|"F64", "shape": [...], "data_offsets": [begin, end]}
//                       optional "__metadata__" -> {string: string}
//   bytes [8+N, ...)  data region; offsets are relative to its start
//
// Everything is widened to F64 on load. Only F32 and F64 are accepted.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spectra/error.hpp"
#include "spectra/matrix.hpp"

namespace spectra {

enum class DType { F32, F64 };

inline std::string_view dtype_name(DType d) noexcept { return d == DType::F32 ? "F32" : "F64"; }
inline std::size_t dtype_size(DType d) noexcept { return d == DType::F32 ? 4 : 8; }

struct TensorRecord {
  DType dtype = DType::F64;  // storage dtype as read; values are always held as F64
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t element_count() const noexcept {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
  }

  bool is_matrix() const noexcept { return shape.size() == 2; }

  Matrix as_matrix() const {
    if (!is_matrix()) throw ShapeError("tensor of rank " + std::to_string(shape.size()) + " is not a matrix");
    return Matrix(shape[0], shape[1], data);
  }

  static TensorRecord from_matrix(const Matrix& m, DType dtype = DType::F64) {
    return TensorRecord{dtype, {m.rows(), m.cols()}, std::vector<double>(m.values().begin(), m.values().end())};
  }

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct CheckpointManifest {
  std::map<std::string, TensorRecord> entries;  // lexicographic order
  std::map<std::string, std::string> metadata;  // written only when non-empty

  friend bool operator==(const CheckpointManifest&, const CheckpointManifest&) = default;
};

namespace detail {

inline std::uint64_t load_u64_le(const unsigned char* p) noexcept {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void store_u64_le(std::uint64_t v, unsigned char* p) noexcept {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

inline std::uint64_t as_offset(const nlohmann::json& j, const std::string& name) {
  if (!j.is_number_unsigned()) throw FormatError("tensor '" + name + "': offsets and extents must be non-negative integers");
  return j.get<std::uint64_t>();
}

}  // namespace detail

inline CheckpointManifest parse_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8) throw FormatError("short file: " + std::to_string(bytes.size()) + " bytes, header length needs 8");
  const std::uint64_t header_len = detail::load_u64_le(bytes.data());
  if (header_len > bytes.size() - 8) {
    throw FormatError("malformed header length " + std::to_string(header_len) + " exceeds file size " +
                      std::to_string(bytes.size()));
  }
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_begin, header_begin + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("invalid JSON header: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("invalid JSON header: top level is not an object");

  const std::span<const unsigned char> region = bytes.subspan(8 + header_len);
  CheckpointManifest out;
  struct Range {
    std::uint64_t begin, end;
    std::string name;
  };
  std::vector<Range> ranges;

  for (const auto& [name, desc] : header.items()) {
    if (name == "__metadata__") {
      if (!desc.is_object()) throw FormatError("invalid JSON header: __metadata__ is not an object");
      for (const auto& [k, v] : desc.items()) {
        if (!v.is_string()) throw FormatError("invalid JSON header: __metadata__ value for '" + k + "' is not a string");
        out.metadata[k] = v.get<std::string>();
      }
      continue;
    }
    if (!desc.is_object() || !desc.contains("dtype") || !desc.contains("shape") || !desc.contains("data_offsets")) {
      throw FormatError("invalid JSON header: tensor '" + name + "' needs dtype, shape and data_offsets");
    }
    const auto& dt = desc["dtype"];
    if (!dt.is_string()) throw FormatError("invalid JSON header: tensor '" + name + "' dtype is not a string");
    TensorRecord rec;
    if (dt == "F32") {
      rec.dtype = DType::F32;
    } else if (dt == "F64") {
      rec.dtype = DType::F64;
    } else {
      throw FormatError("unsupported dtype " + dt.get<std::string>() + " for tensor '" + name + "'");
    }
    const auto& shape = desc["shape"];
    if (!shape.is_array()) throw FormatError("invalid JSON header: tensor '" + name + "' shape is not an array");
    for (const auto& e : shape) rec.shape.push_back(static_cast<std::size_t>(detail::as_offset(e, name)));
    const auto& offs = desc["data_offsets"];
    if (!offs.is_array() || offs.size() != 2) {
      throw FormatError("invalid JSON header: tensor '" + name + "' data_offsets must be [begin, end]");
    }
    const std::uint64_t begin = detail::as_offset(offs[0], name);
    const std::uint64_t end = detail::as_offset(offs[1], name);
    if (begin > end || end > region.size()) {
      throw FormatError("out-of-bounds data_offsets [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") for tensor '" + name + "' (data region is " + std::to_string(region.size()) + " bytes)");
    }
    const std::size_t count = rec.element_count();
    if (end - begin != count * dtype_size(rec.dtype)) {
      throw FormatError("tensor '" + name + "': byte range of " + std::to_string(end - begin) +
                        " bytes does not match shape (" + std::to_string(count) + " elements)");
    }
    rec.data.resize(count);
    const unsigned char* src = region.data() + begin;
    for (std::size_t k = 0; k < count; ++k) {
      if (rec.dtype == DType::F32) {
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) bits = (bits << 8) | src[4 * k + b];
        rec.data[k] = static_cast<double>(std::bit_cast<float>(bits));
      } else {
        rec.data[k] = std::bit_cast<double>(detail::load_u64_le(src + 8 * k));
      }
      if (!std::isfinite(rec.data[k])) {
        throw FormatError("non-finite element at index " + std::to_string(k) + " of tensor '" + name + "'");
      }
    }
    if (begin != end) ranges.push_back({begin, end, name});
    out.entries.emplace(name, std::move(rec));
  }

  std::sort(ranges.begin(), ranges.end(), [](const Range& a, const Range& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].begin < ranges[i - 1].end) {
      throw FormatError("overlapping ranges: tensors '" + ranges[i - 1].name + "' and '" + ranges[i].name + "'");
    }
  }
  return out;
}

inline CheckpointManifest read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Serialized bytes; deterministic given the manifest (names in lexicographic
// order, header padded with spaces to a multiple of 8).
inline std::vector<unsigned char> serialize_checkpoint(const CheckpointManifest& m, DType dtype) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, rec] : m.entries) {
    if (rec.data.size() != rec.element_count()) {
      throw ShapeError("tensor '" + name + "' has " + std::to_string(rec.data.size()) +
                       " elements but its shape implies " + std::to_string(rec.element_count()));
    }
    const std::uint64_t bytes = rec.data.size() * dtype_size(dtype);
    header[name] = {{"dtype", dtype_name(dtype)}, {"shape", rec.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!m.metadata.empty()) header["__metadata__"] = m.metadata;

  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');

  std::vector<unsigned char> out(8 + text.size() + offset);
  detail::store_u64_le(text.size(), out.data());
  std::memcpy(out.data() + 8, text.data(), text.size());
  unsigned char* dst = out.data() + 8 + text.size();
  for (const auto& [name, rec] : m.entries) {
    for (double x : rec.data) {
      if (dtype == DType::F32) {
        const float f = static_cast<float>(x);
        if (std::isfinite(x) && !std::isfinite(f)) throw FormatError("tensor '" + name + "': value out of F32 range");
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int b = 0; b < 4; ++b) *dst++ = static_cast<unsigned char>(bits >> (8 * b));
      } else {
        detail::store_u64_le(std::bit_cast<std::uint64_t>(x), dst);
        dst += 8;
      }
    }
  }
  return out;
}

inline void write_checkpoint(const CheckpointManifest& m, const std::filesystem::path& path, DType dtype = DType::F64) {
  const auto bytes = serialize_checkpoint(m, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Layer selection

// Glob with '*' (any run) and '?' (any one character). Bracket classes are
// not supported and rejected by validate_glob.
inline void validate_glob(std::string_view pattern) {
  if (pattern.empty()) throw InvalidArgument("empty layer pattern");
  if (pattern.find_first_of("[]{}") != std::string_view::npos) {
    throw InvalidArgument("unsupported glob syntax in '" + std::string(pattern) + "' (only '*' and '?' are wildcards)");
  }
}

inline bool glob_match(std::string_view pattern, std::string_view text) noexcept {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

struct NamedMatrix {
  std::string name;
  Matrix value;
};

struct LayerPair {
  std::string name;
  Matrix pre;
  Matrix post;
};

template <class T>
struct Selection {
  std::vector<T> items;               // lexicographic by name
  std::vector<std::string> warnings;  // tensors skipped for not being 2-D
};

// Rank-2 tensors whose names match `pattern` and whose dims are both >= min_dim.
inline Selection<NamedMatrix> select_layers(const CheckpointManifest& m, std::string_view pattern,
                                            std::size_t min_dim = 1) {
  validate_glob(pattern);
  Selection<NamedMatrix> out;
  for (const auto& [name, rec] : m.entries) {
    if (!glob_match(pattern, name)) continue;
    if (!rec.is_matrix()) {
      out.warnings.push_back("skipping '" + name + "': rank-" + std::to_string(rec.shape.size()) + " tensor");
      continue;
    }
    if (rec.shape[0] < min_dim || rec.shape[1] < min_dim) continue;
    out.items.push_back({name, rec.as_matrix()});
  }
  return out;
}

// Tensors present in both manifests under the same name. A name whose shapes
// differ is an error; names present in only one manifest are ignored.
inline Selection<LayerPair> match_layers(const CheckpointManifest& pre, const CheckpointManifest& post,
                                         std::string_view pattern, std::size_t min_dim = 1) {
  validate_glob(pattern);
  Selection<LayerPair> out;
  for (const auto& [name, a] : pre.entries) {
    if (!glob_match(pattern, name)) continue;
    const auto it = post.entries.find(name);
    if (it == post.entries.end()) continue;
    const TensorRecord& b = it->second;
    if (a.shape != b.shape) throw ShapeError("shape mismatch for tensor '" + name + "'");
    if (!a.is_matrix()) {
      out.warnings.push_back("skipping '" + name + "': rank-" + std::to_string(a.shape.size()) + " tensor");
      continue;
    }
    if (a.shape[0] < min_dim || a.shape[1] < min_dim) continue;
    out.items.push_back({name, a.as_matrix(), b.as_matrix()});
  }
  return out;
}

}  // namespace spectra
