#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cocktail/dtype.hpp"
#include "cocktail/errors.hpp"

namespace cocktail {

struct TensorMeta {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<std::int64_t> shape;
  // byte range inside the container's data region, [begin, end)
  std::pair<std::uint64_t, std::uint64_t> data_offsets{0, 0};
};

inline std::uint64_t element_count(const std::vector<std::int64_t>& shape) {
  std::uint64_t n = 1;
  for (std::int64_t d : shape) {
    if (d < 0) throw validation_error("negative dimension in tensor shape");
    const std::uint64_t u = static_cast<std::uint64_t>(d);
    if (u != 0 && n > UINT64_MAX / u) throw validation_error("tensor shape overflows");
    n *= u;
  }
  return n;
}

inline std::uint64_t tensor_byte_size(const TensorMeta& meta) {
  return element_count(meta.shape) * dtype_size(meta.dtype);
}

// One model checkpoint: named dense tensors with dtype and shape. Tensors are
// either resident (owned bytes) or file-backed and fetched on access, so a
// parsed checkpoint only keeps its header in memory. Immutable after
// construction apart from add_* calls; reads are safe from multiple threads.
class TensorMap {
 public:
  TensorMap() = default;

  void add_tensor(std::string name, Dtype dtype, std::vector<std::int64_t> shape,
                  std::vector<std::uint8_t> bytes) {
    TensorMeta meta{std::move(name), dtype, std::move(shape), {0, 0}};
    if (bytes.size() != tensor_byte_size(meta)) {
      throw validation_error("tensor \"" + meta.name +
                             "\": byte length disagrees with shape x dtype size");
    }
    Stored st;
    st.bytes = std::make_shared<const std::vector<std::uint8_t>>(std::move(bytes));
    insert(std::move(meta), std::move(st));
  }

  void add_file_tensor(TensorMeta meta, std::string file, std::uint64_t file_begin,
                       std::uint64_t file_end) {
    if (file_end - file_begin != tensor_byte_size(meta)) {
      throw validation_error("tensor \"" + meta.name +
                             "\": byte length disagrees with shape x dtype size");
    }
    Stored st;
    st.file = std::move(file);
    st.file_begin = file_begin;
    st.file_end = file_end;
    insert(std::move(meta), std::move(st));
  }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const TensorMeta& meta(const std::string& name) const { return stored(name).meta; }

  // Raw little-endian bytes of one tensor. File-backed tensors are read on
  // demand with a fresh stream, so concurrent calls are safe.
  std::vector<std::uint8_t> tensor_bytes(const std::string& name) const {
    const Stored& st = stored(name);
    if (st.bytes) return *st.bytes;
    std::ifstream in(st.file, std::ios::binary);
    if (!in) throw io_error("cannot open \"" + st.file + "\"");
    std::vector<std::uint8_t> buf(st.file_end - st.file_begin);
    in.seekg(static_cast<std::streamoff>(st.file_begin));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw io_error("short read from \"" + st.file + "\"");
    return buf;
  }

  std::vector<double> tensor_values(const std::string& name) const {
    const std::vector<std::uint8_t> raw = tensor_bytes(name);
    return decode_values(meta(name).dtype, raw);
  }

  // Optional "__metadata__" string map, preserved across read/write.
  std::map<std::string, std::string> metadata;

  // FNV-1a over a canonical serialization (names sorted, dtype, shape, raw
  // bytes). Loads one tensor at a time.
  std::uint64_t content_hash() const {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* p = static_cast<const std::uint8_t*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
      }
    };
    std::vector<std::string> sorted = order_;
    std::sort(sorted.begin(), sorted.end());
    for (const std::string& name : sorted) {
      const TensorMeta& m = meta(name);
      mix(name.data(), name.size());
      mix("\0", 1);
      const char* dn = dtype_name(m.dtype);
      mix(dn, std::char_traits<char>::length(dn));
      mix("\0", 1);
      for (std::int64_t d : m.shape) {
        std::uint8_t le[8];
        std::uint64_t u = static_cast<std::uint64_t>(d);
        for (int b = 0; b < 8; ++b) le[b] = static_cast<std::uint8_t>(u >> (8 * b));
        mix(le, 8);
      }
      const std::vector<std::uint8_t> raw = tensor_bytes(name);
      mix(raw.data(), raw.size());
    }
    return h;
  }

  std::string content_hash_hex() const {
    static const char* digits = "0123456789abcdef";
    const std::uint64_t h = content_hash();
    std::string s(16, '0');
    for (int i = 0; i < 16; ++i) s[15 - i] = digits[(h >> (4 * i)) & 0xF];
    return s;
  }

 private:
  struct Stored {
    TensorMeta meta;
    std::shared_ptr<const std::vector<std::uint8_t>> bytes;  // null => file-backed
    std::string file;
    std::uint64_t file_begin = 0;
    std::uint64_t file_end = 0;
  };

  void insert(TensorMeta meta, Stored st) {
    if (tensors_.count(meta.name)) {
      throw validation_error("duplicate tensor name \"" + meta.name + "\"");
    }
    std::string key = meta.name;
    st.meta = std::move(meta);
    order_.push_back(key);
    tensors_.emplace(std::move(key), std::move(st));
  }

  const Stored& stored(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw validation_error("no tensor named \"" + name + "\"");
    return it->second;
  }

  std::vector<std::string> order_;  // insertion order
  std::unordered_map<std::string, Stored> tensors_;
};

enum class MismatchReason { missing_in_some, shape_mismatch, dtype_mismatch };

inline const char* mismatch_reason_name(MismatchReason r) {
  switch (r) {
    case MismatchReason::missing_in_some: return "missing_in_some";
    case MismatchReason::shape_mismatch: return "shape_mismatch";
    case MismatchReason::dtype_mismatch: return "dtype_mismatch";
  }
  return "?";
}

struct CompatReport {
  bool compatible = true;
  std::vector<std::pair<std::string, MismatchReason>> mismatches;

  std::string to_string() const {
    std::string s;
    for (const auto& [name, reason] : mismatches) {
      if (!s.empty()) s += "\n";
      s += name;
      s += ": ";
      s += mismatch_reason_name(reason);
    }
    return s;
  }
};

// Same-architecture check: identical name sets and, per name, identical
// shapes and dtypes across all maps. Incompatibility is data, not an error.
inline CompatReport validate_compatibility(const std::vector<const TensorMap*>& maps) {
  if (maps.size() < 2) throw validation_error("compatibility check needs at least two models");
  std::vector<std::string> all_names;
  for (const TensorMap* m : maps) {
    for (const std::string& n : m->names()) all_names.push_back(n);
  }
  std::sort(all_names.begin(), all_names.end());
  all_names.erase(std::unique(all_names.begin(), all_names.end()), all_names.end());

  CompatReport report;
  for (const std::string& name : all_names) {
    bool everywhere = true;
    for (const TensorMap* m : maps) {
      if (!m->contains(name)) {
        everywhere = false;
        break;
      }
    }
    if (!everywhere) {
      report.mismatches.emplace_back(name, MismatchReason::missing_in_some);
      continue;
    }
    const TensorMeta& ref = maps[0]->meta(name);
    for (std::size_t i = 1; i < maps.size(); ++i) {
      const TensorMeta& m = maps[i]->meta(name);
      if (m.shape != ref.shape) {
        report.mismatches.emplace_back(name, MismatchReason::shape_mismatch);
        break;
      }
      if (m.dtype != ref.dtype) {
        report.mismatches.emplace_back(name, MismatchReason::dtype_mismatch);
        break;
      }
    }
  }
  report.compatible = report.mismatches.empty();
  return report;
}

}  // namespace cocktail
