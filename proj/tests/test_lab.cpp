#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cocktail/lab.hpp"
#include "cocktail/mlp.hpp"
#include "cocktail/synthetic.hpp"

using namespace cocktail;

namespace {

// Test-side linear oracle: nearest class mean, fit on the training split.
struct NearestMean {
  std::vector<std::vector<double>> means;

  static NearestMean fit(const Dataset& train) {
    NearestMean nm;
    nm.means.assign(static_cast<std::size_t>(train.n_classes),
                    std::vector<double>(static_cast<std::size_t>(train.d_in), 0.0));
    std::vector<int> counts(static_cast<std::size_t>(train.n_classes), 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto x = train.row(i);
      auto& m = nm.means[static_cast<std::size_t>(train.labels[i])];
      for (std::size_t k = 0; k < x.size(); ++k) m[k] += x[k];
      ++counts[static_cast<std::size_t>(train.labels[i])];
    }
    for (std::size_t c = 0; c < nm.means.size(); ++c) {
      for (double& v : nm.means[c]) v /= std::max(counts[c], 1);
    }
    return nm;
  }

  int predict(std::span<const double> x) const {
    int best = 0;
    double best_d = HUGE_VAL;
    for (std::size_t c = 0; c < means.size(); ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) {
        d += (x[k] - means[c][k]) * (x[k] - means[c][k]);
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    return best;
  }

  double accuracy(const Dataset& data) const {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (predict(data.row(i)) == data.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
  }
};

Dataset five_sample_batch(std::uint64_t seed) {
  const auto tasks = make_tasks(seed, 2, 8, 4);
  Dataset batch;
  batch.d_in = tasks[0].train.d_in;
  batch.n_classes = tasks[0].train.n_classes;
  for (std::size_t i = 0; i < 5; ++i) {
    batch.append(tasks[0].train.row(i), tasks[0].train.labels[i]);
  }
  return batch;
}

}  // namespace

TEST_CASE("task generation is deterministic in the seed") {
  const auto a = make_tasks(7, 3, 8, 4);
  const auto b = make_tasks(7, 3, 8, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].train.features == b[t].train.features);
    CHECK(a[t].train.labels == b[t].train.labels);
    CHECK(a[t].test.features == b[t].test.features);
    CHECK(a[t].heldout.features == b[t].heldout.features);
    CHECK(a[t].class_means == b[t].class_means);
  }
  const auto c = make_tasks(8, 3, 8, 4);
  CHECK(a[0].train.features != c[0].train.features);
}

TEST_CASE("two tasks have disjoint test splits") {
  const auto tasks = make_tasks(1, 2, 8, 4);
  for (std::size_t i = 0; i < tasks[0].test.size(); ++i) {
    const auto row_a = tasks[0].test.row(i);
    for (std::size_t j = 0; j < tasks[1].test.size(); ++j) {
      const auto row_b = tasks[1].test.row(j);
      bool equal = true;
      for (std::size_t k = 0; k < row_a.size(); ++k) {
        if (row_a[k] != row_b[k]) {
          equal = false;
          break;
        }
      }
      CHECK(!equal);
    }
  }
  // splits within one task are disjoint as well
  CHECK(tasks[0].train.features != tasks[0].test.features);
  CHECK(tasks[0].test.features != tasks[0].heldout.features);
}

TEST_CASE("well-separated classes: a nearest-mean oracle reaches 0.99") {
  // class means sit >= 4 sigma apart by construction
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto tasks = make_tasks(seed, 5, 8, 4);
    for (const SyntheticTask& task : tasks) {
      const NearestMean oracle = NearestMean::fit(task.train);
      CHECK(oracle.accuracy(task.test) >= 0.99);
    }
  }
}

TEST_CASE("degenerate task dims are rejected") {
  CHECK_THROWS_AS(make_tasks(0, 1, 8, 4), validation_error);
  CHECK_THROWS_WITH_AS(make_tasks(0, 2, 4, 4), doctest::Contains("degenerate dims"),
                       validation_error);
  TaskGenOptions bad;
  bad.n_train_per_class = 0;
  CHECK_THROWS_AS(make_tasks(0, 2, 8, 4, bad), validation_error);
}

TEST_CASE("training with lr = 0 returns the init bitwise") {
  const auto tasks = make_tasks(3, 2, 8, 4);
  const MlpNet init = init_mlp({8, 16, 4}, 5, 0.35);
  const MlpNet out = train_mlp(init, tasks[0].train, {0.0, 3, 32, 11});
  auto a = init.params();
  auto b = out.params();
  for (std::size_t p = 0; p < a.size(); ++p) {
    CHECK(*a[p] == *b[p]);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  const Dataset batch = five_sample_batch(4);
  MlpNet net = init_mlp({8, 6, 4}, 9, 0.4);
  MlpNet grad = MlpNet::zeros(net.shape);
  mlp_loss_grad(net, batch, grad);

  const double h = 1e-4;
  auto nets = net.params();
  auto grads = grad.params();
  double worst = 0.0;
  for (std::size_t p = 0; p < nets.size(); ++p) {
    for (std::size_t k = 0; k < nets[p]->size(); ++k) {
      const double saved = (*nets[p])[k];
      (*nets[p])[k] = saved + h;
      const double up = mlp_loss(net, batch);
      (*nets[p])[k] = saved - h;
      const double down = mlp_loss(net, batch);
      (*nets[p])[k] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double a = (*grads[p])[k];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("50 epochs of SGD reach 0.99 train accuracy on a separated task") {
  const auto tasks = make_tasks(6, 2, 8, 4);
  // the oracle confirms the task is separable before the threshold applies
  REQUIRE(NearestMean::fit(tasks[0].train).accuracy(tasks[0].train) >= 0.99);
  const MlpNet init = init_mlp({8, 16, 4}, 1, 0.35);
  const MlpNet trained = train_mlp(init, tasks[0].train, {0.1, 50, 32, 2});
  CHECK(mlp_accuracy(trained, tasks[0].train) >= 0.99);
}

TEST_CASE("accuracy evaluation") {
  const auto tasks = make_tasks(10, 2, 8, 4);
  const SyntheticTask& task = tasks[0];

  SUBCASE("a constant-output model scores 1/n_classes on the balanced test split") {
    const TensorMap zeros = mlp_to_tensor_map(MlpNet::zeros({8, 16, 4}));
    const double acc = evaluate_accuracy(zeros, task);
    CHECK(std::abs(acc - 0.25) <= 0.02);
  }
  SUBCASE("evaluation is deterministic") {
    const TensorMap params = mlp_to_tensor_map(init_mlp({8, 16, 4}, 3, 0.35));
    CHECK(evaluate_accuracy(params, task) == evaluate_accuracy(params, task));
  }
  SUBCASE("the linear oracle embedded in the MLP matches the oracle's accuracy") {
    const NearestMean oracle = NearestMean::fit(task.train);
    // nearest mean == argmax of mu_c . x - |mu_c|^2 / 2, planted in layer 1;
    // tiny epsilon keeps both tanh layers in their linear range
    const double eps = 1e-3;
    MlpNet net = MlpNet::zeros({8, 8, 4});
    for (int c = 0; c < 4; ++c) {
      double sq = 0.0;
      for (int k = 0; k < 8; ++k) {
        net.w1[static_cast<std::size_t>(k * 8 + c)] = eps * oracle.means[c][k];
        sq += oracle.means[c][k] * oracle.means[c][k];
      }
      net.b1[static_cast<std::size_t>(c)] = -eps * sq / 2.0;
      net.w2[static_cast<std::size_t>(c * 8 + c)] = eps;
      net.w3[static_cast<std::size_t>(c * 4 + c)] = 1.0;
    }
    const double mlp_acc = evaluate_accuracy(mlp_to_tensor_map(net), task);
    CHECK(std::abs(mlp_acc - oracle.accuracy(task.test)) <= 0.01);
  }
}

TEST_CASE("mlp loss") {
  const auto tasks = make_tasks(12, 2, 8, 4);

  SUBCASE("uniform outputs give ln(n_classes)") {
    const MlpNet zeros = MlpNet::zeros({8, 16, 4});
    CHECK(std::abs(mlp_loss(zeros, tasks[0].test) - std::log(4.0)) < 1e-6);
  }
  SUBCASE("reordering the example subset leaves the loss unchanged") {
    Dataset fwd = tasks[0].heldout.head(5);
    Dataset rev;
    rev.d_in = fwd.d_in;
    rev.n_classes = fwd.n_classes;
    for (std::size_t i = fwd.size(); i > 0; --i) {
      rev.append(fwd.row(i - 1), fwd.labels[i - 1]);
    }
    const MlpNet net = init_mlp({8, 16, 4}, 5, 0.35);
    CHECK(mlp_loss(net, fwd) == doctest::Approx(mlp_loss(net, rev)).epsilon(1e-12));
  }
  SUBCASE("training strictly lowers the loss on the training task") {
    const MlpNet init = init_mlp({8, 16, 4}, 6, 0.35);
    const MlpNet trained = train_mlp(init, tasks[0].train, {0.1, 20, 32, 7});
    CHECK(mlp_loss(trained, tasks[0].train) < mlp_loss(init, tasks[0].train));
  }
  SUBCASE("empty example set is rejected") {
    CHECK_THROWS_AS(mlp_loss(MlpNet::zeros({8, 16, 4}), Dataset{8, 4, {}, {}}),
                    validation_error);
  }
}

TEST_CASE("tensor map round-trip preserves the network") {
  const MlpNet net = init_mlp({8, 12, 4}, 8, 0.35);
  const MlpNet back = mlp_from_tensor_map(mlp_to_tensor_map(net));
  // F32 storage: values agree to float precision
  auto a = net.params();
  auto b = back.params();
  for (std::size_t p = 0; p < a.size(); ++p) {
    REQUIRE(a[p]->size() == b[p]->size());
    for (std::size_t k = 0; k < a[p]->size(); ++k) {
      CHECK((*b[p])[k] == doctest::Approx((*a[p])[k]).epsilon(1e-6));
      CHECK(static_cast<float>((*a[p])[k]) == static_cast<float>((*b[p])[k]));
    }
  }
}

TEST_CASE("forgetting experiment: alpha endpoints reproduce the reference rows exactly") {
  LabConfig cfg;
  cfg.seed = 0;
  cfg.alpha_grid = {0.0, 0.5, 1.0};
  cfg.example_counts = {5};
  const ExperimentReport rep = run_forgetting_experiment(cfg);

  const ExperimentRow& base = rep.find("base");
  const ExperimentRow& ft = rep.find("finetuned");

  const ExperimentRow& mono0 = rep.find("mono", 0.0);
  CHECK(mono0.target_acc == base.target_acc);
  CHECK(mono0.other_acc == base.other_acc);

  const ExperimentRow& mono1 = rep.find("mono", 1.0);
  CHECK(mono1.target_acc == ft.target_acc);
  CHECK(mono1.other_acc == ft.other_acc);

  const ExperimentRow& gen1 = rep.find("general", 1.0, 5);
  CHECK(gen1.target_acc == ft.target_acc);
  CHECK(gen1.other_acc == ft.other_acc);
}

TEST_CASE("forgetting experiment: default scenario shows the drop-and-recover pattern") {
  LabConfig cfg;
  cfg.seed = 0;
  cfg.alpha_grid = {0.5};
  cfg.example_counts = {5, 0};
  const ExperimentReport rep = run_forgetting_experiment(cfg);

  const ExperimentRow& base = rep.find("base");
  const ExperimentRow& ft = rep.find("finetuned");
  const ExperimentRow& merged = rep.find("mono", 0.5);

  // fine-tuning hurts the other tasks, the merge recovers most of the damage
  // while keeping the target-task gain
  CHECK(ft.other_acc < base.other_acc - 0.05);
  CHECK(merged.other_acc > ft.other_acc);
  CHECK(merged.other_acc >= ft.other_acc + 0.5 * (base.other_acc - ft.other_acc));
  CHECK(merged.target_acc > base.target_acc);
  CHECK(merged.target_acc >= base.target_acc + 0.8 * (ft.target_acc - base.target_acc));

  // weights solved from 5 examples stay close to the full-pool weights
  const int all = static_cast<int>(cfg.gen.n_heldout_per_class) * cfg.n_classes;
  const ExperimentRow& g5 = rep.find("general", 0.5, 5);
  const ExperimentRow& gall = rep.find("general", 0.5, all);
  REQUIRE(g5.weights.size() == gall.weights.size());
  for (std::size_t i = 0; i < g5.weights.size(); ++i) {
    CHECK(g5.weights[i].first == gall.weights[i].first);
    CHECK(std::abs(g5.weights[i].second - gall.weights[i].second) < 0.2);
  }
}

TEST_CASE("experiment reports serialize deterministically") {
  LabConfig cfg;
  cfg.seed = 1;
  cfg.alpha_grid = {0.0, 0.5, 1.0};
  cfg.example_counts = {5};
  const ExperimentReport a = run_forgetting_experiment(cfg);
  const ExperimentReport b = run_forgetting_experiment(cfg);
  CHECK(experiment_report_csv(a) == experiment_report_csv(b));
  CHECK(experiment_report_json(a).dump(2) == experiment_report_json(b).dump(2));

  const std::string csv = experiment_report_csv(a);
  CHECK(csv.find("# other_acc = macro-average") == 0);
  CHECK(csv.find("mode,alpha,pool,n_examples,target_acc,other_acc\n") != std::string::npos);
  CHECK(csv.find("\nbase,,,,") != std::string::npos);
  // 2 reference rows + 3 mono + 3 general + header + comment
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 2 + 2 + 3 + 3);

  const std::string svg = experiment_report_svg(a);
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("lab config validation") {
  LabConfig cfg;
  cfg.target_task = 99;
  CHECK_THROWS_AS(run_forgetting_experiment(cfg), validation_error);
  LabConfig bad_tau;
  bad_tau.tau = 0.0;
  CHECK_THROWS_WITH_AS(bad_tau.validate(), doctest::Contains("tau must be positive"),
                       validation_error);
  LabConfig bad_alpha;
  bad_alpha.alpha_grid = {1.5};
  CHECK_THROWS_AS(bad_alpha.validate(), validation_error);
}
