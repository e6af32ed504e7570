#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dmn/data.hpp"
#include "dmn/errors.hpp"
#include "dmn/model.hpp"
#include "dmn/params.hpp"

namespace dmn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over every parameter in a store. Moment buffers mirror
// parameter shapes; the step counter is shared.
class AdamState {
 public:
  AdamState(const ParamStore& store, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(store.count());
    v_.reserve(store.count());
    for (const Param& p : store.all()) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }

  std::size_t steps() const { return step_; }

  void step(ParamStore& store) {
    if (store.count() != m_.size())
      throw ConfigError("adam state does not match parameter store");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < m_.size(); ++pi) {
      Param& p = store.at(pi);
      for (std::size_t i = 0; i < p.grad.size(); ++i) {
        const double g = p.grad[i];
        if (!std::isfinite(g))
          throw TrainingFault("non-finite gradient in parameter " + p.name);
        double& m = m_[pi][i];
        double& v = v_[pi][i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        p.value.values[i] -= cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

// 0.5 * strength * sum of squared weights, biases excluded either way.
inline double l2_penalty(const ParamStore& store, double strength) {
  double acc = 0.0;
  for (const Param& p : store.all()) {
    if (p.bias) continue;
    for (double w : p.value.values) acc += w * w;
  }
  return 0.5 * strength * acc;
}

inline void add_l2_gradients(ParamStore& store, double strength) {
  if (strength == 0.0) return;
  for (Param& p : store.all()) {
    if (p.bias) continue;
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += strength * p.value.values[i];
  }
}

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 256;
  std::size_t patience = 20;
  double l2_strength = 1e-5;
  double keep_p = 0.9;
  std::uint64_t seed = 1;
  std::size_t sentence_limit = 70;

  void validate() const {
    if (!(keep_p > 0.0 && keep_p <= 1.0))
      throw ConfigError("train config: keep probability must be in (0, 1]");
    if (patience == 0) throw ConfigError("train config: patience must be at least 1");
    if (batch_size == 0) throw ConfigError("train config: batch size must be at least 1");
    if (max_epochs == 0) throw ConfigError("train config: epoch budget must be at least 1");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double best_val_acc = 0.0;
  bool early_stopped = false;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
};

// Exact-match accuracy with deterministic argmax predictions. Answers absent
// from the model's answer vocabulary simply never match.
inline EvalResult evaluate(const Model& model, const Dataset& data) {
  if (data.empty()) throw InputError("evaluate: empty dataset");
  EvalResult res;
  res.predictions.reserve(data.size());
  std::size_t correct = 0;
  for (const Example& ex : data) {
    const std::size_t pred = model.predict(ex);
    res.predictions.push_back(pred);
    if (model.vocab.answers[pred] == ex.answer) ++correct;
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return res;
}

// min(matching-human-count / 3, 1): full credit once three humans agree.
inline double vqa_consensus_accuracy(const std::string& predicted,
                                     const std::vector<std::string>& human_answers) {
  if (human_answers.empty()) throw InputError("consensus accuracy: empty human answer set");
  std::size_t count = 0;
  for (const std::string& a : human_answers)
    if (a == predicted) ++count;
  return std::min(static_cast<double>(count) / 3.0, 1.0);
}

inline double dataset_consensus_accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) throw InputError("evaluate: empty dataset");
  double acc = 0.0;
  for (const Example& ex : data)
    acc += vqa_consensus_accuracy(model.predict_label(ex), ex.human_answers);
  return acc / static_cast<double>(data.size());
}

namespace detail {

// In-place Fisher-Yates driven by the shared training rng; std::shuffle is
// not pinned down across standard libraries.
inline void shuffle_indices(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[draw(rng, i)]);
}

inline double mean_eval_loss(const Model& model, const Dataset& data) {
  Rng unused(0);
  double total = 0.0;
  for (const Example& ex : data) {
    Graph g(const_cast<ParamStore&>(model.store));
    Tensor loss = model.loss(g, ex, /*training=*/false, unused, 1.0);
    total += loss[0];
  }
  return total / static_cast<double>(data.size());
}

inline std::vector<std::vector<double>> snapshot_values(const ParamStore& store) {
  std::vector<std::vector<double>> snap;
  snap.reserve(store.count());
  for (const Param& p : store.all()) snap.push_back(p.value.values);
  return snap;
}

inline void restore_values(ParamStore& store, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < store.count(); ++i) store.at(i).value.values = snap[i];
}

}  // namespace detail

// Mini-batch training with batch-mean gradients, l2 on non-bias weights,
// early stopping on validation loss, and best-validation parameter restore.
// The validation split is the last tenth of the (already ordered) training
// data; with fewer than ten examples the training set doubles as its own
// validation set.
inline TrainReport train(Model& model, const Dataset& raw_data, const TrainConfig& cfg) {
  cfg.validate();
  if (raw_data.empty()) throw InputError("train: empty dataset");

  Dataset data;
  data.reserve(raw_data.size());
  for (const Example& ex : raw_data) data.push_back(truncate_context(ex, cfg.sentence_limit));

  const std::size_t n_val = data.size() / 10;
  const Dataset train_part(data.begin(), data.end() - static_cast<std::ptrdiff_t>(n_val));
  const Dataset val_part = n_val > 0
                               ? Dataset(data.end() - static_cast<std::ptrdiff_t>(n_val), data.end())
                               : train_part;

  Rng rng(cfg.seed);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  AdamState adam(model.store, adam_cfg);

  const std::vector<ParamId> emb_ids = model.embedding_ids();
  const std::size_t pad_offset = Vocabulary::kPad * model.config.embed_dim;

  TrainReport report;
  report.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_values = detail::snapshot_values(model.store);
  std::size_t since_improve = 0;

  std::vector<std::size_t> order(train_part.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    detail::shuffle_indices(order, rng);
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, order.size());
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      model.store.zero_grads();
      for (std::size_t k = start; k < stop; ++k) {
        Graph g(model.store);
        Tensor loss = model.loss(g, train_part[order[k]], /*training=*/true, rng, cfg.keep_p);
        if (!std::isfinite(loss[0]))
          throw TrainingFault("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch) + ", batch starting at " +
                              std::to_string(start));
        loss_sum += loss[0];
        g.backward(loss);
        g.accumulate_grads(inv_batch);
      }
      add_l2_gradients(model.store, cfg.l2_strength);
      // The pad embedding row stays pinned at zero.
      for (ParamId id : emb_ids) {
        Param& emb = model.store.at(id);
        for (std::size_t d = 0; d < model.config.embed_dim; ++d) emb.grad[pad_offset + d] = 0.0;
      }
      adam.step(model.store);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_part.size());
    rec.val_loss = detail::mean_eval_loss(model, val_part);
    rec.val_acc = evaluate(model, val_part).accuracy;
    report.epochs.push_back(rec);

    if (rec.val_loss < report.best_val_loss) {
      report.best_val_loss = rec.val_loss;
      report.best_val_acc = rec.val_acc;
      report.best_epoch = epoch;
      best_values = detail::snapshot_values(model.store);
      since_improve = 0;
    } else {
      ++since_improve;
      if (since_improve >= cfg.patience) {
        report.early_stopped = true;
        break;
      }
    }
  }

  detail::restore_values(model.store, best_values);
  return report;
}

}  // namespace dmn
