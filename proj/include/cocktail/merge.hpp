#pragma once

// Weighted-average model merging. Three entry points share one core:
//
//   cocktail_merge       out = alpha * target + (1 - alpha) * sum_i w_i * c_i
//   mono_specialist      out = alpha * target + (1 - alpha) * base
//   zero_shot_merge      out = sum_i w_i * c_i
//
// Per-element sums run in 64-bit floating point and are cast once to the
// output dtype, which each tensor inherits from the target (or the first
// candidate when there is no target). Candidates are summed in (content
// hash, weight) order, so permuting the (candidate, weight) pairs cannot
// change the output. Tensors are processed one at a time and can stream to
// disk, keeping peak memory at O(largest tensor x models), not O(checkpoint).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cocktail/checkpoint_io.hpp"
#include "cocktail/errors.hpp"
#include "cocktail/tensor_map.hpp"

namespace cocktail {

inline constexpr double kWeightSumTolerance = 1e-9;
inline constexpr double kDefaultAlpha = 0.5;

enum class MergeMode { General, MonoSpecialist, NoFineTune };

inline const char* merge_mode_name(MergeMode m) {
  switch (m) {
    case MergeMode::General: return "general";
    case MergeMode::MonoSpecialist: return "mono";
    case MergeMode::NoFineTune: return "zero-shot";
  }
  return "?";
}

inline MergeMode parse_merge_mode(const std::string& s) {
  if (s == "general") return MergeMode::General;
  if (s == "mono") return MergeMode::MonoSpecialist;
  if (s == "zero-shot") return MergeMode::NoFineTune;
  throw validation_error("unknown merge mode \"" + s + "\" (general, mono, zero-shot)");
}

struct MergeOptions {
  int threads = 1;
};

namespace detail {

inline void check_weights(const std::vector<double>& weights, std::size_t n_candidates) {
  if (weights.size() != n_candidates) {
    throw validation_error("weight count does not match candidate count");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w)) throw validation_error("weights must be finite");
    if (w < 0.0) throw validation_error("weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > kWeightSumTolerance) {
    throw validation_error("weights must sum to 1 (got " + std::to_string(sum) + ")");
  }
}

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw validation_error("alpha must lie in [0, 1]");
  }
}

inline void check_compatible(const std::vector<const TensorMap*>& maps) {
  const CompatReport report = validate_compatibility(maps);
  if (!report.compatible) {
    throw validation_error("models are not compatible:\n" + report.to_string());
  }
}

// One weighted term of the merge sum.
struct Term {
  const TensorMap* map;
  double coeff;
};

struct MemorySink {
  TensorMap result;
  std::vector<TensorMeta> metas;
  void begin(std::vector<TensorMeta> order) { metas = std::move(order); }
  void put(std::size_t index, std::vector<std::uint8_t> bytes) {
    const TensorMeta& m = metas[index];
    result.add_tensor(m.name, m.dtype, m.shape, std::move(bytes));
  }
  void finish() {}
};

struct FileSink {
  std::optional<CheckpointWriter> writer;
  std::filesystem::path path;
  explicit FileSink(std::filesystem::path p) : path(std::move(p)) {}
  void begin(std::vector<TensorMeta> order) { writer.emplace(path, std::move(order)); }
  void put(std::size_t index, std::vector<std::uint8_t> bytes) {
    writer->append(writer->metas()[index].name, bytes);
  }
  void finish() { writer->finish(); }
};

inline std::vector<std::uint8_t> merge_one_tensor(const std::string& name, const TensorMeta& meta,
                                                  const std::vector<Term>& terms) {
  const std::uint64_t n = element_count(meta.shape);
  std::vector<double> acc(n, 0.0);
  for (const Term& term : terms) {
    const std::vector<double> vals = term.map->tensor_values(name);
    for (std::uint64_t k = 0; k < n; ++k) acc[k] += term.coeff * vals[k];
  }
  return encode_values(meta.dtype, acc);
}

// Copied verbatim when byte-identical everywhere; anything else cannot be
// averaged meaningfully. Unreachable while Dtype holds only floating types,
// kept for when the container grows integer buffers.
inline std::vector<std::uint8_t> copy_verbatim_tensor(const std::string& name,
                                                      const std::vector<Term>& terms) {
  std::vector<std::uint8_t> ref = terms.front().map->tensor_bytes(name);
  for (std::size_t i = 1; i < terms.size(); ++i) {
    if (terms[i].map->tensor_bytes(name) != ref) {
      throw validation_error("non-floating tensor \"" + name + "\" differs across inputs");
    }
  }
  return ref;
}

inline bool dtype_is_float(Dtype) { return true; }

// terms[0] donates tensor names, shapes and per-tensor output dtypes; output
// is assembled in lexicographic name order. Tensors are merged in chunks of
// `threads`, so thread count changes scheduling but never the bytes.
template <typename Sink>
void weighted_merge(const std::vector<Term>& terms, Sink& sink, const MergeOptions& opts) {
  std::vector<const TensorMap*> maps;
  maps.reserve(terms.size());
  for (const Term& t : terms) maps.push_back(t.map);
  if (maps.size() >= 2) check_compatible(maps);

  const std::vector<TensorMeta> metas = sorted_metas(*terms.front().map);
  sink.begin(metas);

  const std::size_t threads =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::max(1, opts.threads)));
  std::vector<std::vector<std::uint8_t>> chunk(threads);
  for (std::size_t start = 0; start < metas.size(); start += threads) {
    const std::size_t count = std::min(threads, metas.size() - start);
    auto work = [&](std::size_t k) {
      const TensorMeta& meta = metas[start + k];
      chunk[k] = dtype_is_float(meta.dtype) ? merge_one_tensor(meta.name, meta, terms)
                                            : copy_verbatim_tensor(meta.name, terms);
    };
    if (count == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(count);
      for (std::size_t k = 0; k < count; ++k) pool.emplace_back(work, k);
      for (std::thread& t : pool) t.join();
    }
    for (std::size_t k = 0; k < count; ++k) sink.put(start + k, std::move(chunk[k]));
  }
  sink.finish();
}

// Deterministic summation order: sort candidate terms by (content hash,
// coefficient) so identical recipes always sum identically, whatever order
// the candidates were given in.
inline std::vector<Term> hash_sorted_terms(const std::vector<const TensorMap*>& candidates,
                                           const std::vector<double>& coeffs) {
  std::vector<std::pair<std::pair<std::uint64_t, double>, Term>> keyed;
  keyed.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    keyed.push_back({{candidates[i]->content_hash(), coeffs[i]}, Term{candidates[i], coeffs[i]}});
  }
  std::sort(keyed.begin(), keyed.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Term> terms;
  terms.reserve(keyed.size());
  for (auto& [key, term] : keyed) terms.push_back(term);
  return terms;
}

template <typename Sink>
void cocktail_merge_impl(const TensorMap& target, const std::vector<const TensorMap*>& candidates,
                         const std::vector<double>& weights, double alpha, Sink& sink,
                         const MergeOptions& opts) {
  check_alpha(alpha);
  if (candidates.empty()) throw validation_error("general merge needs at least one candidate");
  check_weights(weights, candidates.size());
  std::vector<double> coeffs;
  coeffs.reserve(weights.size());
  for (double w : weights) coeffs.push_back((1.0 - alpha) * w);
  std::vector<Term> terms{{&target, alpha}};
  for (const Term& t : hash_sorted_terms(candidates, coeffs)) terms.push_back(t);
  weighted_merge(terms, sink, opts);
}

template <typename Sink>
void zero_shot_merge_impl(const std::vector<const TensorMap*>& candidates,
                          const std::vector<double>& weights, Sink& sink,
                          const MergeOptions& opts) {
  if (candidates.empty()) throw validation_error("zero-shot merge needs at least one candidate");
  check_weights(weights, candidates.size());
  // all candidates are layout-compatible, so the hash-sorted head can donate
  std::vector<Term> terms = hash_sorted_terms(candidates, weights);
  weighted_merge(terms, sink, opts);
}

}  // namespace detail

inline TensorMap cocktail_merge(const TensorMap& target,
                                const std::vector<const TensorMap*>& candidates,
                                const std::vector<double>& weights, double alpha = kDefaultAlpha,
                                const MergeOptions& opts = {}) {
  detail::MemorySink sink;
  detail::cocktail_merge_impl(target, candidates, weights, alpha, sink, opts);
  return std::move(sink.result);
}

inline void cocktail_merge_to_file(const TensorMap& target,
                                   const std::vector<const TensorMap*>& candidates,
                                   const std::vector<double>& weights, double alpha,
                                   const std::filesystem::path& out_path,
                                   const MergeOptions& opts = {}) {
  detail::FileSink sink(out_path);
  detail::cocktail_merge_impl(target, candidates, weights, alpha, sink, opts);
}

inline TensorMap mono_specialist_merge(const TensorMap& target, const TensorMap& base,
                                       double alpha = kDefaultAlpha,
                                       const MergeOptions& opts = {}) {
  detail::check_alpha(alpha);
  detail::MemorySink sink;
  std::vector<detail::Term> terms{{&target, alpha}, {&base, 1.0 - alpha}};
  detail::weighted_merge(terms, sink, opts);
  return std::move(sink.result);
}

inline void mono_specialist_merge_to_file(const TensorMap& target, const TensorMap& base,
                                          double alpha, const std::filesystem::path& out_path,
                                          const MergeOptions& opts = {}) {
  detail::check_alpha(alpha);
  detail::FileSink sink(out_path);
  std::vector<detail::Term> terms{{&target, alpha}, {&base, 1.0 - alpha}};
  detail::weighted_merge(terms, sink, opts);
}

inline TensorMap zero_shot_merge(const std::vector<const TensorMap*>& candidates,
                                 const std::vector<double>& weights,
                                 const MergeOptions& opts = {}) {
  detail::MemorySink sink;
  detail::zero_shot_merge_impl(candidates, weights, sink, opts);
  return std::move(sink.result);
}

inline void zero_shot_merge_to_file(const std::vector<const TensorMap*>& candidates,
                                    const std::vector<double>& weights,
                                    const std::filesystem::path& out_path,
                                    const MergeOptions& opts = {}) {
  detail::FileSink sink(out_path);
  detail::zero_shot_merge_impl(candidates, weights, sink, opts);
}

}  // namespace cocktail
