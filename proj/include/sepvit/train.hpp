#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "sepvit/dataset.hpp"
#include "sepvit/model.hpp"
#include "sepvit/ops.hpp"
#include "sepvit/tape.hpp"

namespace sepvit {

/// Momentum SGD with decoupled weight decay:
///   v ← μ·v + g;  p ← p − lr·v − lr·wd·p
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(Model<T>& model, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    model.visit_params([&](const std::string&, Tensor<T>& t) {
      params_.push_back(t);
      velocity_.emplace_back(t.size(), T(0));
    });
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      if (!p.has_grad()) continue;
      const T* g = p.grad().data();
      T* v = velocity_[i].data();
      T* w = p.data();
      const T mu = static_cast<T>(momentum_);
      const T step_lr = static_cast<T>(lr);
      const T decay = static_cast<T>(lr * weight_decay_);
      for (std::size_t j = 0; j < p.size(); ++j) {
        v[j] = mu * v[j] + g[j];
        w[j] -= step_lr * v[j] + decay * w[j];
      }
    }
  }

  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  double momentum_, weight_decay_;
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
};

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 7;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::size_t> per_class_total;
  std::vector<std::size_t> per_class_correct;
  std::vector<std::size_t> confusion;  // [true][pred], row-major K×K
};

/// Forward-only top-1 evaluation. Per-sample logits are independent of the
/// batch split, so the result does not depend on `batch`.
template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& ds, std::size_t batch = 16) {
  if (ds.resolution != model.config().input_resolution) {
    throw ShapeError("dataset resolution " + std::to_string(ds.resolution) +
                     " vs model input resolution " +
                     std::to_string(model.config().input_resolution));
  }
  EvalResult result;
  const std::size_t k = ds.classes;
  result.per_class_total.assign(k, 0);
  result.per_class_correct.assign(k, 0);
  result.confusion.assign(k * k, 0);

  std::vector<std::size_t> order(ds.count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t correct = 0;
  for (std::size_t first = 0; first < ds.count; first += batch) {
    const std::size_t b = std::min(batch, ds.count - first);
    std::vector<int> labels;
    Tensor<T> images = dataset_batch<T>(ds, order, first, b, &labels);
    Tensor<T> logits = model.forward(images);
    const T* lp = logits.data();
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < classes; ++j) {
        if (lp[i * classes + j] > lp[i * classes + best]) best = j;
      }
      const std::size_t truth = static_cast<std::size_t>(labels[i]);
      result.per_class_total[truth]++;
      result.confusion[truth * k + best]++;
      if (best == truth) {
        result.per_class_correct[truth]++;
        ++correct;
      }
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(ds.count);
  return result;
}

inline double cosine_lr(double base_lr, std::size_t epoch, std::size_t total_epochs) {
  if (total_epochs <= 1) return base_lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return base_lr * 0.5 * (1.0 + std::cos(3.141592653589793238 * t));
}

/// Mini-batch training with per-epoch shuffling, cosine-decayed learning
/// rate, and a full train-set evaluation after each epoch (that accuracy is
/// what the metrics log records). Deterministic given the seed. A non-finite
/// loss aborts with a numeric error.
template <typename T>
std::vector<EpochMetrics> train_model(Model<T>& model, const Dataset& ds,
                                      const TrainOptions& opts) {
  if (ds.resolution != model.config().input_resolution) {
    throw ShapeError("dataset resolution " + std::to_string(ds.resolution) +
                     " vs model input resolution " +
                     std::to_string(model.config().input_resolution));
  }
  if (ds.classes != model.config().num_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.classes) + " classes, model head has " +
                      std::to_string(model.config().num_classes));
  }
  SgdOptimizer<T> opt(model, opts.momentum, opts.weight_decay);
  Rng shuffle_rng = Rng(opts.seed).fork(0x5466);
  Rng droppath_rng = Rng(opts.seed).fork(0xD20);

  std::vector<std::size_t> order(ds.count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochMetrics> metrics;

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const double lr = cosine_lr(opts.lr, epoch, opts.epochs);
    // Fisher-Yates on the deterministic stream.
    for (std::size_t i = ds.count; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    for (std::size_t first = 0; first < ds.count; first += opts.batch) {
      const std::size_t b = std::min(opts.batch, ds.count - first);
      std::vector<int> labels;
      Tensor<T> images = dataset_batch<T>(ds, order, first, b, &labels);
      Tape<T> tape;
      Tensor<T> logits = model.forward(images, &tape, /*training=*/true, &droppath_rng);
      Tensor<T> loss = cross_entropy_logits(logits, labels, &tape);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw NumericError("training diverged: loss " + std::to_string(loss_value) + " at epoch " +
                           std::to_string(epoch + 1) + ", sample offset " + std::to_string(first));
      }
      loss_sum += loss_value * static_cast<double>(b);
      opt.zero_grads();
      tape.backward(loss);
      opt.step(lr);
    }

    EpochMetrics em;
    em.epoch = epoch + 1;
    em.lr = lr;
    em.loss = loss_sum / static_cast<double>(ds.count);
    em.train_accuracy = evaluate(model, ds, opts.batch).accuracy;
    metrics.push_back(em);
  }
  return metrics;
}

/// CSV with a fixed numeric format so equal runs produce equal bytes.
inline std::string metrics_to_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,lr,loss,train_accuracy\n";
  char line[160];
  for (const auto& m : metrics) {
    std::snprintf(line, sizeof(line), "%zu,%.9e,%.9e,%.9e\n", m.epoch, m.lr, m.loss,
                  m.train_accuracy);
    out += line;
  }
  return out;
}

inline std::string eval_to_csv(const EvalResult& result) {
  std::string out = "metric,class,value\n";
  char line[160];
  std::snprintf(line, sizeof(line), "top1_accuracy,,%.9e\n", result.accuracy);
  out += line;
  for (std::size_t k = 0; k < result.per_class_total.size(); ++k) {
    const double acc = result.per_class_total[k]
                           ? static_cast<double>(result.per_class_correct[k]) /
                                 static_cast<double>(result.per_class_total[k])
                           : 0.0;
    std::snprintf(line, sizeof(line), "class_accuracy,%zu,%.9e\n", k, acc);
    out += line;
  }
  return out;
}

inline std::string confusion_to_csv(const EvalResult& result) {
  const std::size_t k = result.per_class_total.size();
  std::string out = "true_class,pred_class,count\n";
  char line[96];
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      std::snprintf(line, sizeof(line), "%zu,%zu,%zu\n", t, p, result.confusion[t * k + p]);
      out += line;
    }
  }
  return out;
}

}  // namespace sepvit
