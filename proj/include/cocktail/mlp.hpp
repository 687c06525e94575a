#pragma once

// Two-hidden-layer tanh MLP with a softmax head, trained by plain minibatch
// SGD with hand-derived gradients. Math runs in double; checkpoints cross the
// merge engine as F32 TensorMaps under the names
//   l1.w [d_in,h]  l1.b [h]  l2.w [h,h]  l2.b [h]  out.w [h,C]  out.b [C]
// with matrices applied as y = x @ W.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cocktail/errors.hpp"
#include "cocktail/synthetic.hpp"
#include "cocktail/tensor_map.hpp"

namespace cocktail {

struct MlpShape {
  std::int64_t d_in = 0;
  std::int64_t hidden = 0;
  std::int64_t n_classes = 0;

  void validate() const {
    if (d_in < 1 || hidden < 1 || n_classes < 2) {
      throw validation_error("degenerate MLP shape");
    }
  }
};

struct MlpNet {
  MlpShape shape;
  std::vector<double> w1, b1, w2, b2, w3, b3;

  static MlpNet zeros(const MlpShape& s) {
    s.validate();
    MlpNet net;
    net.shape = s;
    net.w1.assign(static_cast<std::size_t>(s.d_in * s.hidden), 0.0);
    net.b1.assign(static_cast<std::size_t>(s.hidden), 0.0);
    net.w2.assign(static_cast<std::size_t>(s.hidden * s.hidden), 0.0);
    net.b2.assign(static_cast<std::size_t>(s.hidden), 0.0);
    net.w3.assign(static_cast<std::size_t>(s.hidden * s.n_classes), 0.0);
    net.b3.assign(static_cast<std::size_t>(s.n_classes), 0.0);
    return net;
  }

  // flat view over all parameter arrays, for generic updates and checks
  std::vector<std::vector<double>*> params() {
    return {&w1, &b1, &w2, &b2, &w3, &b3};
  }
  std::vector<const std::vector<double>*> params() const {
    return {&w1, &b1, &w2, &b2, &w3, &b3};
  }
};

inline MlpNet init_mlp(const MlpShape& shape, std::uint64_t seed, double weight_std) {
  MlpNet net = MlpNet::zeros(shape);
  Rng rng(Rng::mix(seed, 0x1717));
  for (double& v : net.w1) v = weight_std * rng.next_gauss();
  for (double& v : net.w2) v = weight_std * rng.next_gauss();
  for (double& v : net.w3) v = weight_std * rng.next_gauss();
  return net;
}

namespace detail {

struct MlpActivations {
  std::vector<double> h1, h2, probs;
};

inline void mlp_forward(const MlpNet& net, std::span<const double> x, MlpActivations& act) {
  const MlpShape& s = net.shape;
  act.h1.assign(static_cast<std::size_t>(s.hidden), 0.0);
  for (std::int64_t j = 0; j < s.hidden; ++j) {
    double acc = net.b1[static_cast<std::size_t>(j)];
    for (std::int64_t i = 0; i < s.d_in; ++i) {
      acc += x[static_cast<std::size_t>(i)] * net.w1[static_cast<std::size_t>(i * s.hidden + j)];
    }
    act.h1[static_cast<std::size_t>(j)] = std::tanh(acc);
  }
  act.h2.assign(static_cast<std::size_t>(s.hidden), 0.0);
  for (std::int64_t j = 0; j < s.hidden; ++j) {
    double acc = net.b2[static_cast<std::size_t>(j)];
    for (std::int64_t i = 0; i < s.hidden; ++i) {
      acc += act.h1[static_cast<std::size_t>(i)] *
             net.w2[static_cast<std::size_t>(i * s.hidden + j)];
    }
    act.h2[static_cast<std::size_t>(j)] = std::tanh(acc);
  }
  act.probs.assign(static_cast<std::size_t>(s.n_classes), 0.0);
  double max_logit = -HUGE_VAL;
  for (std::int64_t j = 0; j < s.n_classes; ++j) {
    double acc = net.b3[static_cast<std::size_t>(j)];
    for (std::int64_t i = 0; i < s.hidden; ++i) {
      acc += act.h2[static_cast<std::size_t>(i)] *
             net.w3[static_cast<std::size_t>(i * s.n_classes + j)];
    }
    act.probs[static_cast<std::size_t>(j)] = acc;
    max_logit = std::max(max_logit, acc);
  }
  double denom = 0.0;
  for (double& p : act.probs) {
    p = std::exp(p - max_logit);
    denom += p;
  }
  for (double& p : act.probs) p /= denom;
}

}  // namespace detail

// Class logits' argmax for one input, ties broken toward the lowest index.
inline int mlp_predict(const MlpNet& net, std::span<const double> x) {
  detail::MlpActivations act;
  detail::mlp_forward(net, x, act);
  int best = 0;
  for (std::size_t j = 1; j < act.probs.size(); ++j) {
    if (act.probs[j] > act.probs[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

// Mean softmax cross-entropy (nats) over the dataset.
inline double mlp_loss(const MlpNet& net, const Dataset& data) {
  if (data.size() == 0) throw validation_error("empty example set");
  detail::MlpActivations act;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::mlp_forward(net, data.row(i), act);
    total -= std::log(act.probs[static_cast<std::size_t>(data.labels[i])]);
  }
  return total / static_cast<double>(data.size());
}

// Mean loss over the batch plus its gradient. The gradient layout mirrors
// MlpNet exactly; see the backprop identities inline.
inline double mlp_loss_grad(const MlpNet& net, const Dataset& data, MlpNet& grad) {
  if (data.size() == 0) throw validation_error("empty example set");
  const MlpShape& s = net.shape;
  grad = MlpNet::zeros(s);
  detail::MlpActivations act;
  const double inv_n = 1.0 / static_cast<double>(data.size());
  std::vector<double> dz3(static_cast<std::size_t>(s.n_classes));
  std::vector<double> dz2(static_cast<std::size_t>(s.hidden));
  std::vector<double> dz1(static_cast<std::size_t>(s.hidden));
  double total = 0.0;

  for (std::size_t n = 0; n < data.size(); ++n) {
    const std::span<const double> x = data.row(n);
    detail::mlp_forward(net, x, act);
    const int label = data.labels[n];
    total -= std::log(act.probs[static_cast<std::size_t>(label)]);

    // dL/dz3 = (p - onehot) / N
    for (std::int64_t j = 0; j < s.n_classes; ++j) {
      dz3[static_cast<std::size_t>(j)] =
          (act.probs[static_cast<std::size_t>(j)] - (j == label ? 1.0 : 0.0)) * inv_n;
    }
    for (std::int64_t i = 0; i < s.hidden; ++i) {
      const double h2i = act.h2[static_cast<std::size_t>(i)];
      double dh2 = 0.0;
      for (std::int64_t j = 0; j < s.n_classes; ++j) {
        grad.w3[static_cast<std::size_t>(i * s.n_classes + j)] +=
            h2i * dz3[static_cast<std::size_t>(j)];
        dh2 += dz3[static_cast<std::size_t>(j)] *
               net.w3[static_cast<std::size_t>(i * s.n_classes + j)];
      }
      // tanh' = 1 - tanh^2
      dz2[static_cast<std::size_t>(i)] = dh2 * (1.0 - h2i * h2i);
    }
    for (std::int64_t j = 0; j < s.n_classes; ++j) {
      grad.b3[static_cast<std::size_t>(j)] += dz3[static_cast<std::size_t>(j)];
    }
    for (std::int64_t i = 0; i < s.hidden; ++i) {
      const double h1i = act.h1[static_cast<std::size_t>(i)];
      double dh1 = 0.0;
      for (std::int64_t j = 0; j < s.hidden; ++j) {
        grad.w2[static_cast<std::size_t>(i * s.hidden + j)] +=
            h1i * dz2[static_cast<std::size_t>(j)];
        dh1 += dz2[static_cast<std::size_t>(j)] *
               net.w2[static_cast<std::size_t>(i * s.hidden + j)];
      }
      dz1[static_cast<std::size_t>(i)] = dh1 * (1.0 - h1i * h1i);
    }
    for (std::int64_t j = 0; j < s.hidden; ++j) {
      grad.b2[static_cast<std::size_t>(j)] += dz2[static_cast<std::size_t>(j)];
      grad.b1[static_cast<std::size_t>(j)] += dz1[static_cast<std::size_t>(j)];
    }
    for (std::int64_t i = 0; i < s.d_in; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < s.hidden; ++j) {
        grad.w1[static_cast<std::size_t>(i * s.hidden + j)] +=
            xi * dz1[static_cast<std::size_t>(j)];
      }
    }
  }
  return total * inv_n;
}

struct TrainHyper {
  double lr = 0.1;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

inline MlpNet train_mlp(const MlpNet& init, const Dataset& data, const TrainHyper& hyper) {
  if (data.d_in != init.shape.d_in || data.n_classes != init.shape.n_classes) {
    throw validation_error("dataset dims do not match the MLP shape");
  }
  if (data.size() == 0) throw validation_error("empty training set");
  MlpNet net = init;
  MlpNet grad = MlpNet::zeros(net.shape);
  Rng rng(Rng::mix(hyper.seed, 0x7A17));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t batch =
      std::min<std::size_t>(std::max(1, hyper.batch_size), data.size());
  Dataset mini;
  mini.d_in = data.d_in;
  mini.n_classes = data.n_classes;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.next_u64() % i]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(start + batch, order.size());
      mini.features.clear();
      mini.labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        mini.append(data.row(order[k]), data.labels[order[k]]);
      }
      const double loss = mlp_loss_grad(net, mini, grad);
      if (!std::isfinite(loss)) {
        throw validation_error("training diverged: non-finite loss");
      }
      auto nets = net.params();
      auto grads = grad.params();
      for (std::size_t p = 0; p < nets.size(); ++p) {
        for (std::size_t k = 0; k < nets[p]->size(); ++k) {
          (*nets[p])[k] -= hyper.lr * (*grads[p])[k];
        }
      }
    }
  }
  return net;
}

// Fraction of examples whose argmax matches the label.
inline double mlp_accuracy(const MlpNet& net, const Dataset& data) {
  if (data.size() == 0) throw validation_error("empty example set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (mlp_predict(net, data.row(i)) == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// --- TensorMap bridge -------------------------------------------------------

inline TensorMap mlp_to_tensor_map(const MlpNet& net) {
  const MlpShape& s = net.shape;
  TensorMap map;
  auto add = [&](const std::string& name, std::vector<std::int64_t> shape,
                 const std::vector<double>& vals) {
    map.add_tensor(name, Dtype::F32, std::move(shape), encode_values(Dtype::F32, vals));
  };
  add("l1.w", {s.d_in, s.hidden}, net.w1);
  add("l1.b", {s.hidden}, net.b1);
  add("l2.w", {s.hidden, s.hidden}, net.w2);
  add("l2.b", {s.hidden}, net.b2);
  add("out.w", {s.hidden, s.n_classes}, net.w3);
  add("out.b", {s.n_classes}, net.b3);
  return map;
}

inline MlpNet mlp_from_tensor_map(const TensorMap& map) {
  for (const char* name : {"l1.w", "l1.b", "l2.w", "l2.b", "out.w", "out.b"}) {
    if (!map.contains(name)) {
      throw validation_error(std::string("MLP checkpoint is missing tensor \"") + name + "\"");
    }
  }
  const auto& w1_shape = map.meta("l1.w").shape;
  const auto& w3_shape = map.meta("out.w").shape;
  if (w1_shape.size() != 2 || w3_shape.size() != 2) {
    throw validation_error("MLP weight tensors must be rank 2");
  }
  MlpShape s{w1_shape[0], w1_shape[1], w3_shape[1]};
  s.validate();
  MlpNet net = MlpNet::zeros(s);
  net.w1 = map.tensor_values("l1.w");
  net.b1 = map.tensor_values("l1.b");
  net.w2 = map.tensor_values("l2.w");
  net.b2 = map.tensor_values("l2.b");
  net.w3 = map.tensor_values("out.w");
  net.b3 = map.tensor_values("out.b");
  if (net.b1.size() != static_cast<std::size_t>(s.hidden) ||
      net.w2.size() != static_cast<std::size_t>(s.hidden * s.hidden) ||
      net.b2.size() != static_cast<std::size_t>(s.hidden) ||
      net.b3.size() != static_cast<std::size_t>(s.n_classes)) {
    throw validation_error("MLP tensor shapes are inconsistent");
  }
  return net;
}

// TensorMap-level wrappers used by the lab and the CLI.

inline TensorMap train_mlp(const TensorMap& init, const SyntheticTask& task,
                           const TrainHyper& hyper) {
  return mlp_to_tensor_map(train_mlp(mlp_from_tensor_map(init), task.train, hyper));
}

inline double evaluate_accuracy(const TensorMap& params, const SyntheticTask& task) {
  return mlp_accuracy(mlp_from_tensor_map(params), task.test);
}

inline double mlp_loss(const TensorMap& params, const Dataset& examples) {
  return mlp_loss(mlp_from_tensor_map(params), examples);
}

}  // namespace cocktail
