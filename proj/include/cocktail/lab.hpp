#pragma once

// The forgetting lab: train a generalist MLP on a mixture of synthetic
// tasks, fine-tune it per task to induce catastrophic forgetting, merge the
// fine-tuned target with the base (and with the peer specialists, weighted by
// held-out few-shot losses), and report target/other-task accuracy across
// alpha, pool and example count. The whole run is a pure function of its
// config: identical configs give byte-identical reports.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cocktail/errors.hpp"
#include "cocktail/loss_report.hpp"
#include "cocktail/merge.hpp"
#include "cocktail/mlp.hpp"
#include "cocktail/synthetic.hpp"
#include "cocktail/version.hpp"
#include "cocktail/weight_solver.hpp"

namespace cocktail {

struct LabHyper {
  double base_lr = 0.1;
  int base_epochs = 12;
  double ft_lr = 0.05;
  int ft_epochs = 12;
  int batch_size = 32;
  double init_std = 0.35;
  // share of the target task's training data seen during base pre-training;
  // the fine-tuning target is typically under-represented in the generalist
  // mixture, which is exactly what gives fine-tuning its headroom
  double target_mixture_fraction = 0.25;
};

struct LabConfig {
  std::uint64_t seed = 0;
  int n_tasks = 5;
  int d_in = 8;
  int n_classes = 4;
  int hidden = 48;
  int target_task = 0;
  double tau = kDefaultTau;
  std::vector<double> alpha_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<int> example_counts = {5, 0};  // 0 = the whole held-out pool
  bool run_mono = true;
  bool run_general = true;
  TaskGenOptions gen;
  LabHyper hyper;

  void validate() const {
    if (n_tasks < 2) throw validation_error("lab needs at least two tasks");
    if (target_task < 0 || target_task >= n_tasks) {
      throw validation_error("target task index out of range");
    }
    if (!(tau > 0.0)) throw validation_error("tau must be positive");
    if (alpha_grid.empty()) throw validation_error("alpha grid is empty");
    for (double a : alpha_grid) detail::check_alpha(a);
    if ((run_general) && example_counts.empty()) {
      throw validation_error("example count grid is empty");
    }
    for (int n : example_counts) {
      if (n < 0) throw validation_error("example counts must be >= 0");
    }
  }
};

struct ExperimentRow {
  std::string mode;  // base | finetuned | mono | general
  std::optional<double> alpha;
  std::string pool;
  std::optional<int> n_examples;
  double target_acc = 0.0;
  double other_acc = 0.0;
  std::vector<std::pair<std::string, double>> weights;  // solved weights, general mode
};

struct ExperimentReport {
  LabConfig config;
  std::vector<ExperimentRow> rows;

  const ExperimentRow& find(const std::string& mode, std::optional<double> alpha = {},
                            std::optional<int> n_examples = {}) const {
    for (const ExperimentRow& r : rows) {
      if (r.mode != mode) continue;
      if (alpha && (!r.alpha || *r.alpha != *alpha)) continue;
      if (n_examples && (!r.n_examples || *r.n_examples != *n_examples)) continue;
      return r;
    }
    throw validation_error("no matching report row for mode \"" + mode + "\"");
  }
};

inline ExperimentReport run_forgetting_experiment(const LabConfig& cfg) {
  cfg.validate();
  const std::vector<SyntheticTask> tasks =
      make_tasks(cfg.seed, cfg.n_tasks, cfg.d_in, cfg.n_classes, cfg.gen);
  const SyntheticTask& target = tasks[static_cast<std::size_t>(cfg.target_task)];

  const MlpShape shape{cfg.d_in, cfg.hidden, cfg.n_classes};
  const MlpNet init = init_mlp(shape, Rng::mix(cfg.seed, 0xBA5E), cfg.hyper.init_std);

  const TrainHyper base_hyper{cfg.hyper.base_lr, cfg.hyper.base_epochs, cfg.hyper.batch_size,
                              Rng::mix(cfg.seed, 1)};
  const MlpNet base_net = train_mlp(
      init, mixture_of(tasks, cfg.target_task, cfg.hyper.target_mixture_fraction), base_hyper);

  std::vector<MlpNet> specialists;
  specialists.reserve(tasks.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const TrainHyper ft_hyper{cfg.hyper.ft_lr, cfg.hyper.ft_epochs, cfg.hyper.batch_size,
                              Rng::mix(cfg.seed, 100 + t)};
    specialists.push_back(train_mlp(base_net, tasks[t].train, ft_hyper));
  }

  // models cross into TensorMap form here; every accuracy below is measured
  // on the same F32 weights the merge engine sees
  const TensorMap base_map = mlp_to_tensor_map(base_net);
  std::vector<TensorMap> specialist_maps;
  for (const MlpNet& net : specialists) specialist_maps.push_back(mlp_to_tensor_map(net));
  const TensorMap& target_map = specialist_maps[static_cast<std::size_t>(cfg.target_task)];

  auto measure = [&](const TensorMap& params, ExperimentRow row) {
    const MlpNet net = mlp_from_tensor_map(params);
    row.target_acc = mlp_accuracy(net, target.test);
    double sum = 0.0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (static_cast<int>(t) == cfg.target_task) continue;
      sum += mlp_accuracy(net, tasks[t].test);
    }
    row.other_acc = sum / static_cast<double>(tasks.size() - 1);
    return row;
  };

  ExperimentReport report;
  report.config = cfg;
  report.rows.push_back(measure(base_map, {"base", {}, "", {}, 0, 0, {}}));
  report.rows.push_back(measure(target_map, {"finetuned", {}, "", {}, 0, 0, {}}));

  if (cfg.run_mono) {
    for (double alpha : cfg.alpha_grid) {
      const TensorMap merged = mono_specialist_merge(target_map, base_map, alpha);
      report.rows.push_back(measure(merged, {"mono", alpha, "base", {}, 0, 0, {}}));
    }
  }

  if (cfg.run_general) {
    std::vector<const TensorMap*> candidates{&base_map};
    std::vector<std::string> candidate_ids{"base"};
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (static_cast<int>(t) == cfg.target_task) continue;
      candidates.push_back(&specialist_maps[t]);
      candidate_ids.push_back(tasks[t].task_id);
    }
    for (int requested : cfg.example_counts) {
      const Dataset fewshot = target.heldout.head(static_cast<std::size_t>(requested));
      const int resolved = static_cast<int>(fewshot.size());
      LossReport losses;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        losses.add(candidate_ids[i], {mlp_loss(*candidates[i], fewshot)});
      }
      const WeightVector wv = solve_weights(losses, cfg.tau);
      const std::vector<double> w = wv.ordered(candidate_ids);
      for (double alpha : cfg.alpha_grid) {
        const TensorMap merged = cocktail_merge(target_map, candidates, w, alpha);
        ExperimentRow row{"general", alpha, "base+peers", resolved, 0, 0, wv.weights};
        report.rows.push_back(measure(merged, std::move(row)));
      }
    }
  }
  return report;
}

// --- report serialization ----------------------------------------------------

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline std::string experiment_report_csv(const ExperimentReport& report) {
  std::string out = "# other_acc = macro-average accuracy over all non-target tasks\n";
  out += "mode,alpha,pool,n_examples,target_acc,other_acc\n";
  for (const ExperimentRow& r : report.rows) {
    out += r.mode;
    out += ',';
    if (r.alpha) out += detail::fixed(*r.alpha, 4);
    out += ',';
    out += r.pool;
    out += ',';
    if (r.n_examples) out += std::to_string(*r.n_examples);
    out += ',';
    out += detail::fixed(r.target_acc, 6);
    out += ',';
    out += detail::fixed(r.other_acc, 6);
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json experiment_report_json(const ExperimentReport& report) {
  nlohmann::ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["version"] = kVersion;
  doc["seed"] = report.config.seed;
  doc["n_tasks"] = report.config.n_tasks;
  doc["target_task"] = report.config.target_task;
  doc["tau"] = report.config.tau;
  doc["other_acc_aggregation"] = "macro";
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const ExperimentRow& r : report.rows) {
    nlohmann::ordered_json row;
    row["mode"] = r.mode;
    if (r.alpha) {
      row["alpha"] = *r.alpha;
    } else {
      row["alpha"] = nullptr;
    }
    row["pool"] = r.pool;
    if (r.n_examples) {
      row["n_examples"] = *r.n_examples;
    } else {
      row["n_examples"] = nullptr;
    }
    row["target_acc"] = r.target_acc;
    row["other_acc"] = r.other_acc;
    if (!r.weights.empty()) {
      nlohmann::ordered_json w = nlohmann::ordered_json::object();
      for (const auto& [id, weight] : r.weights) w[id] = weight;
      row["weights"] = std::move(w);
    }
    rows.push_back(std::move(row));
  }
  doc["rows"] = std::move(rows);
  return doc;
}

// Accuracy-vs-alpha curves (target solid, other dashed), one color per mode.
inline std::string experiment_report_svg(const ExperimentReport& report) {
  const int width = 480, height = 360;
  const double x0 = 60, y0 = 300, plot_w = 380, plot_h = 250;
  auto sx = [&](double alpha) { return x0 + alpha * plot_w; };
  auto sy = [&](double acc) { return y0 - acc * plot_h; };

  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
      "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
      " " + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double acc = i * 0.25;
    svg += "<line x1=\"" + detail::fixed(x0, 1) + "\" y1=\"" + detail::fixed(sy(acc), 1) +
           "\" x2=\"" + detail::fixed(x0 + plot_w, 1) + "\" y2=\"" + detail::fixed(sy(acc), 1) +
           "\" stroke=\"#dddddd\"/>\n";
    svg += "<text x=\"" + detail::fixed(x0 - 8, 1) + "\" y=\"" + detail::fixed(sy(acc) + 4, 1) +
           "\" font-size=\"11\" text-anchor=\"end\">" + detail::fixed(acc, 2) + "</text>\n";
    const double alpha = i * 0.25;
    svg += "<text x=\"" + detail::fixed(sx(alpha), 1) + "\" y=\"" + detail::fixed(y0 + 16, 1) +
           "\" font-size=\"11\" text-anchor=\"middle\">" + detail::fixed(alpha, 2) + "</text>\n";
  }
  svg += "<text x=\"" + detail::fixed(x0 + plot_w / 2, 1) + "\" y=\"" +
         detail::fixed(y0 + 34, 1) +
         "\" font-size=\"12\" text-anchor=\"middle\">alpha</text>\n";
  svg += "<text x=\"14\" y=\"" + detail::fixed(y0 - plot_h / 2, 1) +
         "\" font-size=\"12\" transform=\"rotate(-90 14 " + detail::fixed(y0 - plot_h / 2, 1) +
         ")\" text-anchor=\"middle\">accuracy</text>\n";

  const std::vector<std::pair<std::string, std::string>> modes = {{"mono", "#1f77b4"},
                                                                  {"general", "#d62728"}};
  double legend_y = 24;
  for (const auto& [mode, color] : modes) {
    // first example-count sweep only, for the general mode
    std::optional<int> first_n;
    std::string target_pts, other_pts;
    for (const ExperimentRow& r : report.rows) {
      if (r.mode != mode || !r.alpha) continue;
      if (r.n_examples) {
        if (!first_n) first_n = *r.n_examples;
        if (*r.n_examples != *first_n) continue;
      }
      target_pts += detail::fixed(sx(*r.alpha), 1) + "," + detail::fixed(sy(r.target_acc), 1) + " ";
      other_pts += detail::fixed(sx(*r.alpha), 1) + "," + detail::fixed(sy(r.other_acc), 1) + " ";
    }
    if (target_pts.empty()) continue;
    svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" +
           target_pts + "\"/>\n";
    svg += "<polyline fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"2\" stroke-dasharray=\"5,4\" points=\"" + other_pts + "\"/>\n";
    svg += "<text x=\"" + detail::fixed(x0 + 6, 1) + "\" y=\"" + detail::fixed(legend_y, 1) +
           "\" font-size=\"11\" fill=\"" + color + "\">" + mode +
           " (solid = target task, dashed = other tasks)</text>\n";
    legend_y += 16;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace cocktail
