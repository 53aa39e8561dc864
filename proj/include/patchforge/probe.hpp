#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchforge/embed_metrics.hpp"
#include "patchforge/error.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

// Fixed linear-probe protocol: one linear layer, no hidden layers, no
// dropout, SGD with Nesterov momentum, cosine decay to zero without warmup.
struct ProbeConfig {
  int base_batch_size = 4096;
  int batch_size = 4096;
  double base_lr = 0.01;
  int total_steps = 12'500;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 0.0;
  // Early-stopping patience is max_epochs / early_stop_divisor epochs.
  int early_stop_divisor = 20;

  // Peak learning rate, scaled linearly with the batch size.
  double lr() const { return base_lr * batch_size / base_batch_size; }

  // Batch size for a training set of n samples: the largest power of two not
  // above min(n, base_batch_size).
  static ProbeConfig for_dataset(std::size_t n_train);

  void validate() const;
};

// lr() * (1 + cos(pi * step / total_steps)) / 2 for step in [0, total_steps].
double lr_at_step(const ProbeConfig& config, int step);

struct EpochPlan {
  int steps_per_epoch = 0;
  int max_epochs = 0;
  int patience = 0;
};

// steps_per_epoch = ceil(n_train / batch), max_epochs =
// ceil(total_steps / steps_per_epoch), patience = max(1, max_epochs / 20).
EpochPlan epoch_plan(const ProbeConfig& config, std::size_t n_train);

// Mean per-class recall over the classes present in y_true.
double balanced_accuracy(std::span<const int> y_true, std::span<const int> y_pred);

struct SplitAssignment {
  std::vector<int> split;  // split index per sample
  std::vector<std::string> warnings;
};

// Assigns whole groups to splits so that no group straddles two splits while
// tracking the requested fractions and the global class proportions.
// Deterministic in seed. Imbalance beyond 10% relative is reported in
// warnings, not thrown.
SplitAssignment split_stratified_grouped(std::span<const int> labels,
                                         std::span<const std::string> groups,
                                         std::span<const double> fractions, std::uint64_t seed);

struct ProbeRun {
  std::uint64_t seed = 0;
  double balanced_accuracy = 0.0;  // validation, best checkpoint
  std::optional<double> test_balanced_accuracy;
  int steps = 0;
  int epochs = 0;
  int best_epoch = 0;
  bool early_stopped = false;
  Eigen::MatrixXd weights;  // K x C, best checkpoint
  Eigen::VectorXd bias;
};

struct ProbeResult {
  std::vector<ProbeRun> runs;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  ProbeConfig config;
};

struct ProbeHooks {
  // Replaces the measured validation score for (epoch, measured).
  std::function<double(int, double)> val_score;
};

// Head initialization: weights uniform in [-1/sqrt(K), 1/sqrt(K)], bias 0.
Eigen::MatrixXd initial_head_weights(Eigen::Index k, Eigen::Index classes, std::uint64_t seed);

namespace detail {

inline void check_labels(std::span<const int> y, Eigen::Index rows, const char* what) {
  if (static_cast<Eigen::Index>(y.size()) != rows) {
    throw ValidationError(std::string(what) + " has " + std::to_string(rows) +
                          " embeddings but " + std::to_string(y.size()) + " labels");
  }
  for (int label : y) {
    if (label < 0) {
      throw ValidationError(std::string(what) + " has a negative class id");
    }
  }
}

template <typename Derived>
std::vector<int> predict(const Eigen::MatrixBase<Derived>& x, const Eigen::MatrixXd& w,
                         const Eigen::VectorXd& b) {
  const Eigen::MatrixXd logits = (x.template cast<double>() * w).rowwise() + b.transpose();
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

}  // namespace detail

// Trains one probe run. Validation runs once per epoch; training stops once
// the validation balanced accuracy has not improved for `patience`
// consecutive epochs, and the best-validation checkpoint is returned.
template <typename TrainDerived, typename ValDerived>
ProbeRun train_probe(const Eigen::MatrixBase<TrainDerived>& train_x, std::span<const int> train_y,
                     const Eigen::MatrixBase<ValDerived>& val_x, std::span<const int> val_y,
                     const ProbeConfig& config, std::uint64_t seed, const ProbeHooks& hooks = {},
                     const Eigen::MatrixXf* test_x = nullptr,
                     std::span<const int> test_y = {}) {
  config.validate();
  detail::check_labels(train_y, train_x.rows(), "train set");
  detail::check_labels(val_y, val_x.rows(), "validation set");
  if (val_x.rows() < 1) {
    throw ValidationError("validation set is empty");
  }
  if (train_x.cols() != val_x.cols()) {
    throw ValidationError("embedding width mismatch: train K=" + std::to_string(train_x.cols()) +
                          ", validation K=" + std::to_string(val_x.cols()));
  }
  std::vector<int> distinct(train_y.begin(), train_y.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) {
    throw ValidationError("training set has a single class");
  }
  int max_label = distinct.back();
  for (int v : val_y) {
    max_label = std::max(max_label, v);
  }
  const Eigen::Index classes = max_label + 1;
  const Eigen::Index k = train_x.cols();
  const std::size_t n = static_cast<std::size_t>(train_x.rows());

  const Eigen::MatrixXd x = train_x.template cast<double>();
  const EpochPlan plan = epoch_plan(config, n);
  const auto batch = static_cast<std::size_t>(std::min<std::size_t>(config.batch_size, n));

  ProbeRun run;
  run.seed = seed;
  Eigen::MatrixXd w = initial_head_weights(k, classes, seed);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(classes);
  Eigen::MatrixXd vel_w = Eigen::MatrixXd::Zero(k, classes);
  Eigen::VectorXd vel_b = Eigen::VectorXd::Zero(classes);
  run.weights = w;
  run.bias = b;

  CounterRng order_rng = CounterRng::substream(seed, "probe-batches");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = -1.0;
  int stale = 0;
  int epoch = 0;
  int step = 0;
  Eigen::MatrixXd xb;
  Eigen::MatrixXd target;
  while (step < config.total_steps) {
    order_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n && step < config.total_steps; start += batch, ++step) {
      const std::size_t end = std::min(n, start + batch);
      const auto rows = static_cast<Eigen::Index>(end - start);
      xb.resize(rows, k);
      target.setZero(rows, classes);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t idx = order[start + static_cast<std::size_t>(r)];
        xb.row(r) = x.row(static_cast<Eigen::Index>(idx));
        target(r, train_y[idx]) = 1.0;
      }
      Eigen::MatrixXd prob = (xb * w).rowwise() + b.transpose();
      for (Eigen::Index r = 0; r < rows; ++r) {
        auto row = prob.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
      }
      const Eigen::MatrixXd delta = (prob - target) / static_cast<double>(rows);
      Eigen::MatrixXd grad_w = xb.transpose() * delta;
      Eigen::VectorXd grad_b = delta.colwise().sum().transpose();
      if (config.weight_decay != 0.0) {
        grad_w += config.weight_decay * w;
        grad_b += config.weight_decay * b;
      }
      vel_w = config.momentum * vel_w + grad_w;
      vel_b = config.momentum * vel_b + grad_b;
      const double lr = lr_at_step(config, step);
      if (config.nesterov) {
        w -= lr * (grad_w + config.momentum * vel_w);
        b -= lr * (grad_b + config.momentum * vel_b);
      } else {
        w -= lr * vel_w;
        b -= lr * vel_b;
      }
    }
    ++epoch;
    double score = balanced_accuracy(val_y, detail::predict(val_x, w, b));
    if (hooks.val_score) {
      score = hooks.val_score(epoch, score);
    }
    if (score > best) {
      best = score;
      stale = 0;
      run.best_epoch = epoch;
      run.weights = w;
      run.bias = b;
    } else if (++stale >= plan.patience) {
      run.early_stopped = true;
      break;
    }
  }
  run.steps = step;
  run.epochs = epoch;
  run.balanced_accuracy = best;
  if (test_x != nullptr) {
    detail::check_labels(test_y, test_x->rows(), "test set");
    run.test_balanced_accuracy =
        balanced_accuracy(test_y, detail::predict(*test_x, run.weights, run.bias));
  }
  return run;
}

// Mean and sample standard deviation (n - 1) of run accuracies.
void summarize(ProbeResult& result);

// `runs` independent head trainings on a fixed split, seeds seed, seed+1, ...
template <typename TrainDerived, typename ValDerived>
ProbeResult run_probe(const Eigen::MatrixBase<TrainDerived>& train_x,
                      std::span<const int> train_y,
                      const Eigen::MatrixBase<ValDerived>& val_x, std::span<const int> val_y,
                      const ProbeConfig& config, std::uint64_t seed, int runs = 5,
                      const Eigen::MatrixXf* test_x = nullptr,
                      std::span<const int> test_y = {}) {
  if (runs < 1) {
    throw ValidationError("at least one probe run is required");
  }
  ProbeResult result;
  result.config = config;
  for (int r = 0; r < runs; ++r) {
    result.runs.push_back(train_probe(train_x, train_y, val_x, val_y, config,
                                      seed + static_cast<std::uint64_t>(r), {}, test_x, test_y));
  }
  summarize(result);
  return result;
}

std::string to_json(const ProbeResult& result);

}  // namespace patchforge
