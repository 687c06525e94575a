// cocktail: merge same-architecture model checkpoints by weighted parameter
// averaging, with merging weights derived from few-shot prediction losses.
//
//   cocktail merge    weighted-average merge (general / mono / zero-shot)
//   cocktail eval     few-shot losses of candidate checkpoints (toy models)
//   cocktail weights  softmax merging weights from a loss report
//   cocktail lab      synthetic forgetting-and-recovery experiment
//
// Exit codes: 0 success, 1 I/O failure, 2 validation failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "cocktail/checkpoint_io.hpp"
#include "cocktail/few_shot.hpp"
#include "cocktail/lab.hpp"
#include "cocktail/loss_report.hpp"
#include "cocktail/merge.hpp"
#include "cocktail/recipe.hpp"
#include "cocktail/toy_transformer.hpp"
#include "cocktail/version.hpp"
#include "cocktail/weight_solver.hpp"

namespace {

using namespace cocktail;

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw validation_error("cannot parse \"" + item + "\" as a number");
    }
  }
  if (out.empty()) throw validation_error("empty number list");
  return out;
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw validation_error("tau must be positive");
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = detail::temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot create \"" + tmp.string() + "\"");
    out << text;
    if (!out) throw io_error("write failure on \"" + tmp.string() + "\"");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw io_error("cannot move output into place at \"" + path.string() + "\"");
  }
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text_atomic(out_path, text);
  }
}

struct MergeArgs {
  std::string mode = "general";
  std::string target;
  std::string base;
  std::vector<std::string> candidates;
  double alpha = kDefaultAlpha;
  std::string weights_csv;
  std::string weights_json;
  std::string out;
  int threads = 1;
};

int cmd_merge(const MergeArgs& args) {
  MergeRecipe recipe;
  recipe.mode = parse_merge_mode(args.mode);
  recipe.alpha = args.alpha;
  if (!args.target.empty()) recipe.target = args.target;

  // flag consistency first, before touching any file
  detail::check_alpha(args.alpha);
  if (recipe.mode == MergeMode::NoFineTune && recipe.target) {
    throw validation_error("zero-shot mode takes no target model");
  }
  if (recipe.mode != MergeMode::NoFineTune && !recipe.target) {
    throw validation_error(std::string(merge_mode_name(recipe.mode)) +
                           " mode requires a target model");
  }

  if (recipe.mode == MergeMode::MonoSpecialist) {
    if (args.base.empty()) throw validation_error("mono mode requires --base");
    if (!args.candidates.empty()) {
      throw validation_error("mono mode takes --base, not --candidates");
    }
    recipe.candidates = {args.base};
    recipe.weights = {1.0};
  } else {
    if (!args.base.empty()) throw validation_error("--base is only for --mode mono");
    recipe.candidates = args.candidates;
    if (!args.weights_csv.empty() && !args.weights_json.empty()) {
      throw validation_error("give either --weights or --weights-json, not both");
    }
    if (!args.weights_csv.empty()) {
      recipe.weights = parse_double_list(args.weights_csv);
    } else if (!args.weights_json.empty()) {
      const WeightVector wv = load_weight_vector(args.weights_json);
      for (const std::string& id : recipe.candidates) recipe.weights.push_back(wv.at(id));
      for (const auto& [id, loss] : wv.losses) recipe.solver_losses[id] = loss;
      recipe.tau = wv.tau;
    } else {
      throw validation_error("provide merging weights via --weights or --weights-json");
    }
  }

  const MergeProvenance prov = run_recipe(recipe, args.out, {args.threads});
  std::fprintf(stderr, "wrote %s (%s merge of %zu model(s), alpha=%g)\n", args.out.c_str(),
               prov.mode.c_str(), prov.candidates.size() + (prov.target_id ? 1 : 0),
               prov.alpha);
  return 0;
}

struct EvalArgs {
  std::vector<std::string> examples;
  bool pool = false;
  std::string arch;
  std::vector<std::string> candidates;
  std::string out;
  int threads = 1;
};

FewShotSet load_example_files(const std::vector<std::string>& paths, bool pool) {
  if (paths.empty()) throw validation_error("--examples is required");
  if (paths.size() > 1 && !pool) {
    throw validation_error("multiple --examples files need --pool");
  }
  std::vector<FewShotSet> sets;
  for (const std::string& p : paths) sets.push_back(load_examples_jsonl(p));
  return pool ? pool_examples(sets) : sets.front();
}

int cmd_eval(const EvalArgs& args) {
  if (args.arch.empty()) throw validation_error("--arch is required");
  if (args.candidates.empty()) throw validation_error("--candidates is required");
  const ToyArchConfig cfg = load_arch_config(args.arch);
  const FewShotSet set = load_example_files(args.examples, args.pool);

  // candidates are independent read-only evaluations; chunked like the merge
  const std::size_t threads =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::max(1, args.threads)));
  std::vector<CandidateLosses> results(args.candidates.size());
  for (std::size_t start = 0; start < args.candidates.size(); start += threads) {
    const std::size_t count = std::min(threads, args.candidates.size() - start);
    auto work = [&](std::size_t k) {
      const std::string& path = args.candidates[start + k];
      results[start + k] = evaluate_loss(read_checkpoint(path), cfg, set, path);
    };
    if (count == 1) {
      work(0);
    } else {
      std::vector<std::thread> workers;
      for (std::size_t k = 0; k < count; ++k) workers.emplace_back(work, k);
      for (std::thread& t : workers) t.join();
    }
  }

  LossReport report;
  for (CandidateLosses& entry : results) report.add(entry.id, entry.losses);

  nlohmann::ordered_json doc = report.to_json();
  doc["task_id"] = set.task_id;
  doc["tokenizer"] = "bytes";
  doc["example_format"] = set.kind == ExampleKind::Decoder
                              ? "decoder: loss over target tokens of input+target"
                              : "encoder: first positive vs negatives, temperature 0.02";
  emit(doc.dump(2) + "\n", args.out);
  return 0;
}

struct WeightsArgs {
  std::string losses;
  std::vector<std::string> examples;
  bool pool = false;
  std::string arch;
  std::vector<std::string> candidates;
  double tau = kDefaultTau;
  std::string target_id;
  bool joint = false;
  std::string out;
  int threads = 1;
};

int cmd_weights(const WeightsArgs& args) {
  check_tau(args.tau);
  LossReport report;
  if (!args.losses.empty()) {
    if (!args.examples.empty() || !args.arch.empty() || !args.candidates.empty()) {
      throw validation_error("--losses already provides losses; drop --examples/--arch/--candidates");
    }
    report = load_external_losses(args.losses);
  } else {
    if (args.arch.empty() || args.candidates.empty() || args.examples.empty()) {
      throw validation_error("need either --losses or --examples + --arch + --candidates");
    }
    const ToyArchConfig cfg = load_arch_config(args.arch);
    const FewShotSet set = load_example_files(args.examples, args.pool);
    for (const std::string& path : args.candidates) {
      const CandidateLosses entry = evaluate_loss(read_checkpoint(path), cfg, set, path);
      report.add(entry.id, entry.losses);
    }
  }
  if (!args.target_id.empty() && !args.joint) {
    report = drop_target_candidate(report, args.target_id);
  }
  const WeightVector wv = solve_weights(report, args.tau);
  emit(wv.to_json().dump(2) + "\n", args.out);
  return 0;
}

struct LabArgs {
  std::uint64_t seed = 0;
  std::string preset = "default";
  std::string alpha_grid;
  std::string examples_grid;
  int n_tasks = 0;
  int target_task = -1;
  double tau = 0.0;
  std::string modes;
  std::string out_csv;
  std::string out_json;
  std::string out_svg;
};

int cmd_lab(const LabArgs& args) {
  if (args.preset != "default") {
    throw validation_error("unknown preset \"" + args.preset + "\" (available: default)");
  }
  LabConfig cfg;
  cfg.seed = args.seed;
  if (!args.alpha_grid.empty()) cfg.alpha_grid = parse_double_list(args.alpha_grid);
  if (args.n_tasks > 0) cfg.n_tasks = args.n_tasks;
  if (args.target_task >= 0) cfg.target_task = args.target_task;
  if (args.tau != 0.0) {
    check_tau(args.tau);
    cfg.tau = args.tau;
  }
  if (!args.examples_grid.empty()) {
    cfg.example_counts.clear();
    std::stringstream ss(args.examples_grid);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      if (item == "all") {
        cfg.example_counts.push_back(0);
      } else {
        try {
          cfg.example_counts.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw validation_error("cannot parse \"" + item + "\" as an example count");
        }
      }
    }
  }
  if (!args.modes.empty()) {
    cfg.run_mono = args.modes.find("mono") != std::string::npos;
    cfg.run_general = args.modes.find("general") != std::string::npos;
    if (!cfg.run_mono && !cfg.run_general) {
      throw validation_error("--modes must name mono and/or general");
    }
  }

  const ExperimentReport report = run_forgetting_experiment(cfg);
  emit(experiment_report_csv(report), args.out_csv);
  if (!args.out_json.empty()) {
    write_text_atomic(args.out_json, experiment_report_json(report).dump(2) + "\n");
  }
  if (!args.out_svg.empty()) {
    write_text_atomic(args.out_svg, experiment_report_svg(report));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weighted-average checkpoint merging with few-shot loss-based weights"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  const char* env_threads = std::getenv("COCKTAIL_THREADS");
  const int default_threads = env_threads ? std::max(1, std::atoi(env_threads)) : 1;

  MergeArgs margs;
  margs.threads = default_threads;
  CLI::App* merge = app.add_subcommand("merge", "merge checkpoints by weighted averaging");
  merge->add_option("--mode", margs.mode, "general | mono | zero-shot")->required();
  merge->add_option("--target", margs.target, "target (fine-tuned) checkpoint");
  merge->add_option("--base", margs.base, "base checkpoint (mono mode)");
  merge->add_option("--candidates", margs.candidates, "candidate checkpoints");
  merge->add_option("--alpha", margs.alpha, "target share of the merge, in [0,1]")
      ->default_val(kDefaultAlpha);
  merge->add_option("--weights", margs.weights_csv, "comma-separated candidate weights");
  merge->add_option("--weights-json", margs.weights_json,
                    "weight vector JSON produced by `cocktail weights`");
  merge->add_option("-o,--out", margs.out, "output checkpoint path")->required();
  merge->add_option("--threads", margs.threads, "worker threads for per-tensor merging");

  EvalArgs eargs;
  eargs.threads = default_threads;
  CLI::App* eval = app.add_subcommand("eval", "few-shot losses of candidate checkpoints");
  eval->add_option("--examples", eargs.examples, "JSONL example file(s)")->required();
  eval->add_flag("--pool", eargs.pool, "pool all example files into one unified set");
  eval->add_option("--arch", eargs.arch, "architecture config JSON")->required();
  eval->add_option("--candidates", eargs.candidates, "checkpoints to score")->required();
  eval->add_option("-o,--out", eargs.out, "loss report path (stdout when omitted)");
  eval->add_option("--threads", eargs.threads, "evaluate candidates in parallel");

  WeightsArgs wargs;
  CLI::App* weights = app.add_subcommand("weights", "solve merging weights from losses");
  weights->add_option("--losses", wargs.losses, "loss report JSON");
  weights->add_option("--examples", wargs.examples, "JSONL example file(s)");
  weights->add_flag("--pool", wargs.pool, "pool all example files into one unified set");
  weights->add_option("--arch", wargs.arch, "architecture config JSON");
  weights->add_option("--candidates", wargs.candidates, "checkpoints to score");
  weights->add_option("--tau", wargs.tau, "softmax temperature (> 0)")->default_val(kDefaultTau);
  weights->add_option("--target-id", wargs.target_id,
                      "candidate id to drop before solving (the target model)");
  weights->add_flag("--joint", wargs.joint, "keep the target candidate in the softmax");
  weights->add_option("-o,--out", wargs.out, "weight vector path (stdout when omitted)");
  weights->add_option("--threads", wargs.threads, "evaluate candidates in parallel");

  LabArgs largs;
  CLI::App* lab = app.add_subcommand("lab", "forgetting-and-recovery experiment on toy tasks");
  lab->add_option("--seed", largs.seed, "experiment seed")->default_val(0);
  lab->add_option("--preset", largs.preset, "scenario preset")->default_val("default");
  lab->add_option("--alpha-grid", largs.alpha_grid, "comma-separated alpha values");
  lab->add_option("--examples-grid", largs.examples_grid,
                  "comma-separated few-shot counts (\"all\" for the whole pool)");
  lab->add_option("--tasks", largs.n_tasks, "number of synthetic tasks");
  lab->add_option("--target", largs.target_task, "target task index");
  lab->add_option("--tau", largs.tau, "softmax temperature for solved weights");
  lab->add_option("--modes", largs.modes, "merge modes to sweep (mono,general)");
  lab->add_option("--out-csv", largs.out_csv, "report CSV path (stdout when omitted)");
  lab->add_option("--out-json", largs.out_json, "report JSON path");
  lab->add_option("--out-svg", largs.out_svg, "accuracy-vs-alpha plot path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (merge->parsed()) return cmd_merge(margs);
    if (eval->parsed()) return cmd_eval(eargs);
    if (weights->parsed()) return cmd_weights(wargs);
    if (lab->parsed()) return cmd_lab(largs);
  } catch (const validation_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
