#pragma once

// Seeded synthetic classification tasks for the forgetting lab. Each task
// owns a region of input space (an anchor along the last axis) holding one
// Gaussian cluster per class; the cluster -> label assignment is a per-task
// permutation, so tasks genuinely conflict and fine-tuning on one task can
// damage the others. Sampling uses a local splitmix64 + Box-Muller generator
// so datasets are bit-identical across standard libraries.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cocktail/errors.hpp"

namespace cocktail {

struct Rng {
  std::uint64_t state;

  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // standard normal via Box-Muller
  double next_gauss() {
    const double u1 = 1.0 - next_unit();  // (0, 1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // derive an independent stream
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (0xD1B54A32D192ED03ull * (stream + 1)));
    return r.next_u64();
  }
};

// Flat row-major feature matrix plus labels.
struct Dataset {
  std::int64_t d_in = 0;
  std::int64_t n_classes = 0;
  std::vector<double> features;  // size() * d_in
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * static_cast<std::size_t>(d_in),
            static_cast<std::size_t>(d_in)};
  }

  void append(std::span<const double> x, int label) {
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  // first n examples (n = 0 means everything)
  Dataset head(std::size_t n) const {
    if (n == 0 || n >= size()) return *this;
    Dataset out;
    out.d_in = d_in;
    out.n_classes = n_classes;
    out.features.assign(features.begin(),
                        features.begin() + static_cast<std::ptrdiff_t>(n * d_in));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  }
};

struct TaskGenOptions {
  int n_train_per_class = 64;
  int n_test_per_class = 50;
  int n_heldout_per_class = 64;
  double sigma = 0.1;          // per-dimension sample noise
  double class_sep = 0.6;      // distance from anchor to each class mean
  double anchor_spacing = 1.0; // distance between task anchors on the last axis
};

struct SyntheticTask {
  std::string task_id;
  std::int64_t d_in = 0;
  std::int64_t n_classes = 0;
  std::vector<std::vector<double>> class_means;  // indexed by label
  Dataset train;
  Dataset test;
  Dataset heldout;  // few-shot pool, disjoint from train and test
};

inline std::vector<SyntheticTask> make_tasks(std::uint64_t seed, int n_tasks, int d_in,
                                             int n_classes,
                                             const TaskGenOptions& opts = {}) {
  if (n_tasks < 2) throw validation_error("need at least two tasks");
  if (n_classes < 2 || d_in < n_classes + 1) {
    throw validation_error("degenerate dims: need n_classes >= 2 and d_in >= n_classes + 1");
  }
  if (opts.n_train_per_class < 1 || opts.n_test_per_class < 1 || opts.n_heldout_per_class < 1) {
    throw validation_error("degenerate dims: per-class split sizes must be >= 1");
  }

  // one random base permutation per seed; each task rotates it by its own
  // index, so neighbouring tasks always assign conflicting labels to the
  // same cluster directions and no task's mapping can be extrapolated from
  // the others
  std::vector<int> base_perm(static_cast<std::size_t>(n_classes));
  {
    Rng rng(Rng::mix(seed, 0xD00D));
    for (int c = 0; c < n_classes; ++c) base_perm[static_cast<std::size_t>(c)] = c;
    for (int c = n_classes - 1; c > 0; --c) {
      const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(c + 1));
      std::swap(base_perm[static_cast<std::size_t>(c)], base_perm[static_cast<std::size_t>(j)]);
    }
  }

  std::vector<SyntheticTask> tasks;
  for (int t = 0; t < n_tasks; ++t) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(t)));
    SyntheticTask task;
    task.task_id = "task" + std::to_string(t);
    task.d_in = d_in;
    task.n_classes = n_classes;

    // cluster c sits at anchor + class_sep * e_c and carries the rotated label
    std::vector<int> label_of(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
      label_of[static_cast<std::size_t>(c)] = base_perm[static_cast<std::size_t>((c + t) % n_classes)];
    }
    const double anchor =
        (t - (n_tasks - 1) / 2.0) * opts.anchor_spacing;

    task.class_means.assign(static_cast<std::size_t>(n_classes),
                            std::vector<double>(static_cast<std::size_t>(d_in), 0.0));
    for (int c = 0; c < n_classes; ++c) {
      std::vector<double>& mean = task.class_means[static_cast<std::size_t>(label_of[c])];
      mean[static_cast<std::size_t>(c)] = opts.class_sep;
      mean[static_cast<std::size_t>(d_in - 1)] += anchor;
    }

    // classes interleaved so any prefix of a split is class-balanced
    auto fill = [&](Dataset& ds, int per_class) {
      ds.d_in = d_in;
      ds.n_classes = n_classes;
      std::vector<double> x(static_cast<std::size_t>(d_in));
      for (int i = 0; i < per_class; ++i) {
        for (int c = 0; c < n_classes; ++c) {
          const std::vector<double>& mean = task.class_means[static_cast<std::size_t>(c)];
          for (int k = 0; k < d_in; ++k) {
            x[static_cast<std::size_t>(k)] =
                mean[static_cast<std::size_t>(k)] + opts.sigma * rng.next_gauss();
          }
          ds.append(x, c);
        }
      }
    };
    fill(task.train, opts.n_train_per_class);
    fill(task.test, opts.n_test_per_class);
    fill(task.heldout, opts.n_heldout_per_class);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

// All tasks' training data concatenated: the generalist pre-training mixture.
// One task may be under-represented (the usual situation for a later
// fine-tuning target): only the first `fraction` of its training split goes
// into the mixture.
inline Dataset mixture_of(const std::vector<SyntheticTask>& tasks, int reduced_task = -1,
                          double fraction = 1.0) {
  Dataset out;
  out.d_in = tasks.front().d_in;
  out.n_classes = tasks.front().n_classes;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Dataset& full = tasks[t].train;
    if (static_cast<int>(t) == reduced_task && fraction < 1.0) {
      const auto n = static_cast<std::size_t>(fraction * static_cast<double>(full.size()));
      const Dataset part = full.head(std::max<std::size_t>(n, 1));
      out.features.insert(out.features.end(), part.features.begin(), part.features.end());
      out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
    } else {
      out.features.insert(out.features.end(), full.features.begin(), full.features.end());
      out.labels.insert(out.labels.end(), full.labels.begin(), full.labels.end());
    }
  }
  return out;
}

}  // namespace cocktail
