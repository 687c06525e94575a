#pragma once

// Checkpoint container, bit-exact layout:
//   bytes 0..7    little-endian u64 N = header length
//   bytes 8..8+N  UTF-8 JSON object: tensor name -> {"dtype", "shape",
//                 "data_offsets"}, offsets relative to byte 8+N; an optional
//                 "__metadata__" string-to-string map is preserved
//   bytes 8+N..   raw little-endian tensor data, contiguous
//
// Writes list tensors in lexicographic name order so identical maps always
// produce identical files. A sharded checkpoint is a JSON index file
// {"weight_map": {tensor: shard}} whose shard filenames are resolved relative
// to the index file's directory; read_checkpoint treats any *.json path as an
// index.

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cocktail/errors.hpp"
#include "cocktail/tensor_map.hpp"

namespace cocktail {

namespace detail {

inline std::uint64_t file_size_of(const std::filesystem::path& path) {
  std::error_code ec;
  const std::uintmax_t sz = std::filesystem::file_size(path, ec);
  if (ec) throw io_error("cannot stat \"" + path.string() + "\": " + ec.message());
  return static_cast<std::uint64_t>(sz);
}

inline void check_contiguous_coverage(std::vector<std::pair<std::uint64_t, std::uint64_t>> spans,
                                      std::uint64_t data_size, const std::string& where) {
  std::sort(spans.begin(), spans.end());
  std::uint64_t cursor = 0;
  for (const auto& [begin, end] : spans) {
    if (begin < cursor) {
      throw validation_error(where + ": overlapping tensor data offsets");
    }
    if (begin > cursor) {
      throw validation_error(where + ": tensor data offsets leave a gap in the data region");
    }
    cursor = end;
  }
  if (cursor != data_size) {
    throw validation_error(where + ": tensor data offsets do not cover the data region");
  }
}

// Parses one container file. On return *data_begin_out (if given) holds the
// absolute offset of the data region.
inline TensorMap read_container(const std::filesystem::path& path,
                                std::uint64_t* data_begin_out = nullptr) {
  const std::string where = path.string();
  const std::uint64_t file_size = file_size_of(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open \"" + where + "\"");

  if (file_size < 8) throw validation_error(where + ": malformed header length");
  std::uint8_t len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  if (!in) throw io_error("short read from \"" + where + "\"");
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= static_cast<std::uint64_t>(len_bytes[i]) << (8 * i);
  if (header_len > file_size - 8) throw validation_error(where + ": malformed header length");

  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw io_error("short read from \"" + where + "\"");

  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(where + ": header JSON parse failure: " + e.what());
  }
  if (!doc.is_object()) throw validation_error(where + ": header is not a JSON object");

  const std::uint64_t data_begin = 8 + header_len;
  const std::uint64_t data_size = file_size - data_begin;
  if (data_begin_out) *data_begin_out = data_begin;

  TensorMap map;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& [name, entry] : doc.items()) {
    if (name == "__metadata__") {
      if (!entry.is_object()) throw validation_error(where + ": __metadata__ is not an object");
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) {
          throw validation_error(where + ": __metadata__ values must be strings");
        }
        map.metadata[k] = v.get<std::string>();
      }
      continue;
    }
    if (!entry.is_object()) {
      throw validation_error(where + ": tensor \"" + name + "\" entry is not an object");
    }
    TensorMeta meta;
    meta.name = name;
    try {
      meta.dtype = parse_dtype(entry.at("dtype").get<std::string>());
      meta.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offs = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offs.size() != 2) throw validation_error("data_offsets must have two entries");
      meta.data_offsets = {offs[0], offs[1]};
    } catch (const nlohmann::json::exception& e) {
      throw validation_error(where + ": tensor \"" + name + "\": " + e.what());
    }
    const auto [begin, end] = meta.data_offsets;
    if (begin > end || end > data_size) {
      throw validation_error(where + ": tensor \"" + name + "\" data offsets out of bounds");
    }
    if (end - begin != tensor_byte_size(meta)) {
      throw validation_error(where + ": tensor \"" + name +
                             "\": byte length disagrees with shape x dtype size");
    }
    spans.emplace_back(begin, end);
    map.add_file_tensor(std::move(meta), path.string(), data_begin + begin, data_begin + end);
  }
  check_contiguous_coverage(std::move(spans), data_size, where);
  return map;
}

inline TensorMap read_sharded(const std::filesystem::path& index_path) {
  const std::string where = index_path.string();
  std::ifstream in(index_path, std::ios::binary);
  if (!in) throw io_error("cannot open \"" + where + "\"");
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(where + ": index JSON parse failure: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("weight_map") || !doc["weight_map"].is_object()) {
    throw validation_error(where + ": index file has no \"weight_map\" object");
  }
  const std::filesystem::path dir = index_path.parent_path();

  struct Shard {
    TensorMap map;
    std::uint64_t data_begin = 0;
    std::string path;
  };
  std::map<std::string, Shard> shards;

  TensorMap map;
  for (const auto& [tensor, shard_entry] : doc["weight_map"].items()) {
    if (!shard_entry.is_string()) {
      throw validation_error(where + ": weight_map values must be shard filenames");
    }
    const std::string shard_name = shard_entry.get<std::string>();
    auto it = shards.find(shard_name);
    if (it == shards.end()) {
      Shard sh;
      sh.path = (dir / shard_name).string();
      sh.map = read_container(sh.path, &sh.data_begin);
      it = shards.emplace(shard_name, std::move(sh)).first;
    }
    const Shard& sh = it->second;
    if (!sh.map.contains(tensor)) {
      throw validation_error(where + ": tensor \"" + tensor + "\" not found in shard \"" +
                             shard_name + "\"");
    }
    TensorMeta meta = sh.map.meta(tensor);
    const std::uint64_t abs_begin = sh.data_begin + meta.data_offsets.first;
    const std::uint64_t abs_end = sh.data_begin + meta.data_offsets.second;
    map.add_file_tensor(std::move(meta), sh.path, abs_begin, abs_end);
  }
  return map;
}

inline std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  static std::atomic<unsigned> counter{0};
  const unsigned n = counter.fetch_add(1);
  return path.string() + ".tmp" + std::to_string(static_cast<long>(::getpid())) + "-" +
         std::to_string(n);
}

}  // namespace detail

// Streaming container writer: metas (in final header order) are fixed up
// front, tensor bytes are appended one at a time in that same order, and the
// finished file is moved into place atomically. A writer that is destroyed
// before finish() leaves no output behind.
class CheckpointWriter {
 public:
  CheckpointWriter(const std::filesystem::path& path, std::vector<TensorMeta> metas,
                   const std::map<std::string, std::string>& metadata = {})
      : final_path_(path), tmp_path_(detail::temp_sibling(path)), metas_(std::move(metas)) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    if (!metadata.empty()) {
      header["__metadata__"] = metadata;
    }
    std::uint64_t offset = 0;
    for (TensorMeta& meta : metas_) {
      const std::uint64_t size = tensor_byte_size(meta);
      meta.data_offsets = {offset, offset + size};
      header[meta.name] = {
          {"dtype", dtype_name(meta.dtype)},
          {"shape", meta.shape},
          {"data_offsets", {meta.data_offsets.first, meta.data_offsets.second}},
      };
      offset += size;
    }
    const std::string text = header.dump();
    out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw io_error("cannot create \"" + tmp_path_.string() + "\"");
    std::uint8_t len_bytes[8];
    const std::uint64_t n = text.size();
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<std::uint8_t>(n >> (8 * i));
    out_.write(reinterpret_cast<const char*>(len_bytes), 8);
    out_.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out_) throw io_error("write failure on \"" + tmp_path_.string() + "\"");
  }

  CheckpointWriter(const CheckpointWriter&) = delete;
  CheckpointWriter& operator=(const CheckpointWriter&) = delete;

  ~CheckpointWriter() {
    if (!finished_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_path_, ec);
    }
  }

  const std::vector<TensorMeta>& metas() const { return metas_; }

  // Bytes must arrive in meta order.
  void append(const std::string& name, std::span<const std::uint8_t> bytes) {
    if (next_ >= metas_.size()) throw validation_error("append past the declared tensor list");
    const TensorMeta& meta = metas_[next_];
    if (meta.name != name) {
      throw validation_error("append out of order: expected \"" + meta.name + "\", got \"" +
                             name + "\"");
    }
    if (bytes.size() != tensor_byte_size(meta)) {
      throw validation_error("tensor \"" + name +
                             "\": byte length disagrees with shape x dtype size");
    }
    out_.write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    if (!out_) throw io_error("write failure on \"" + tmp_path_.string() + "\"");
    ++next_;
  }

  void finish() {
    if (next_ != metas_.size()) {
      throw validation_error("finish() before all declared tensors were appended");
    }
    out_.flush();
    if (!out_) throw io_error("write failure on \"" + tmp_path_.string() + "\"");
    out_.close();
    std::error_code ec;
    std::filesystem::rename(tmp_path_, final_path_, ec);
    if (ec) {
      std::filesystem::remove(tmp_path_, ec);
      throw io_error("cannot move output into place at \"" + final_path_.string() + "\"");
    }
    finished_ = true;
  }

 private:
  std::filesystem::path final_path_;
  std::filesystem::path tmp_path_;
  std::vector<TensorMeta> metas_;
  std::ofstream out_;
  std::size_t next_ = 0;
  bool finished_ = false;
};

// Lexicographic tensor order for deterministic writes.
inline std::vector<TensorMeta> sorted_metas(const TensorMap& map) {
  std::vector<std::string> names = map.names();
  std::sort(names.begin(), names.end());
  std::vector<TensorMeta> metas;
  metas.reserve(names.size());
  for (const std::string& n : names) metas.push_back(map.meta(n));
  return metas;
}

inline void write_checkpoint(const TensorMap& map, const std::filesystem::path& path) {
  CheckpointWriter writer(path, sorted_metas(map), map.metadata);
  for (const TensorMeta& meta : writer.metas()) {
    writer.append(meta.name, map.tensor_bytes(meta.name));
  }
  writer.finish();
}

// Reads either a single container file or (for *.json paths) a shard index.
inline TensorMap read_checkpoint(const std::filesystem::path& path) {
  if (path.extension() == ".json") return detail::read_sharded(path);
  return detail::read_container(path);
}

}  // namespace cocktail
