#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmn/errors.hpp"
#include "dmn/tensor.hpp"

namespace dmn {

using Rng = std::mt19937_64;

// Uniform draw in [0,1) with 53 random bits; identical across platforms for a
// given seed, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

using ParamId = std::size_t;

struct Param {
  std::string name;
  Tensor value;
  std::vector<double> grad;
  bool bias = false;  // excluded from the L2 penalty
};

// Owns all trainable parameters of a model. Graphs borrow values from here
// per example and deposit gradients back via accumulate_grads.
class ParamStore {
 public:
  ParamId add(const std::string& name, Tensor value, bool bias = false) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Param p;
    p.name = name;
    p.grad.assign(value.size(), 0.0);
    p.value = std::move(value);
    p.bias = bias;
    params_.push_back(std::move(p));
    index_[name] = params_.size() - 1;
    return params_.size() - 1;
  }

  std::size_t count() const { return params_.size(); }
  Param& at(ParamId id) { return params_.at(id); }
  const Param& at(ParamId id) const { return params_.at(id); }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  ParamId id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  void zero_grads() {
    for (Param& p : params_) p.grad.assign(p.grad.size(), 0.0);
  }

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One forward/backward pass over a fresh tape. use() memoizes so each
// parameter appears as a single leaf no matter how often it is consumed,
// which keeps the backward pass accumulating into one gradient slot.
class Graph {
 public:
  explicit Graph(ParamStore& store) : store_(store), bound_(store.count(), -1) {}

  Tape& tape() { return tape_; }

  Tensor use(ParamId id) {
    int& slot = bound_.at(id);
    if (slot < 0) {
      Tensor leaf = tape_.leaf(store_.at(id).value);
      slot = leaf.node;
      return leaf;
    }
    Tensor t = store_.at(id).value;
    t.tape = &tape_;
    t.node = slot;
    return t;
  }

  Tensor constant(const Tensor& t) { return tape_.leaf(t); }

  void backward(const Tensor& root) { tape_.backward(root); }

  // Adds scale * d(root)/d(param) into each bound parameter's grad buffer.
  void accumulate_grads(double scale = 1.0) {
    for (ParamId id = 0; id < bound_.size(); ++id) {
      if (bound_[id] < 0) continue;
      Tensor probe = store_.at(id).value;
      probe.tape = &tape_;
      probe.node = bound_[id];
      const std::vector<double>& g = tape_.grad(probe);
      std::vector<double>& acc = store_.at(id).grad;
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += scale * g[i];
    }
  }

 private:
  ParamStore& store_;
  Tape tape_;
  std::vector<int> bound_;
};

// Glorot-style uniform bound for a rows x cols weight matrix.
inline double xavier_bound(std::size_t fan_out, std::size_t fan_in) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (double& v : t.values) v = uniform_range(rng, lo, hi);
}

// Weight matrices get Xavier-uniform values, rank-1 parameters (biases,
// initial states) get zeros. Embedding tables are initialized separately.
inline void init_param(Param& p, Rng& rng) {
  if (p.value.rank() == 2) {
    const double b = xavier_bound(p.value.rows(), p.value.cols());
    fill_uniform(p.value, rng, -b, b);
  } else {
    p.value.values.assign(p.value.size(), 0.0);
  }
}

}  // namespace dmn
