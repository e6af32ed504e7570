#pragma once

#include <string>
#include <vector>

#include "dmn/encoding.hpp"
#include "dmn/errors.hpp"
#include "dmn/params.hpp"
#include "dmn/tensor.hpp"

namespace dmn {

// Bidirectional recurrent layer over sentence vectors. Two independent cells
// scan the facts in opposite directions from zero states; each position emits
// the elementwise sum of the two passes.
struct FusionLayerIds {
  GruCellIds fwd;
  GruCellIds bwd;

  static FusionLayerIds create(ParamStore& store, const std::string& prefix, std::size_t hidden,
                               std::size_t input = 0) {
    if (input == 0) input = hidden;
    FusionLayerIds ids;
    ids.fwd = GruCellIds::create(store, prefix + ".fwd", hidden, input);
    ids.bwd = GruCellIds::create(store, prefix + ".bwd", hidden, input);
    return ids;
  }
};

struct FusionLayer {
  GruCell fwd;
  GruCell bwd;
};

inline FusionLayer bind(Graph& g, const FusionLayerIds& ids) {
  return FusionLayer{bind(g, ids.fwd), bind(g, ids.bwd)};
}

inline std::vector<Tensor> fuse(Graph& g, const FusionLayer& layer,
                                const std::vector<Tensor>& facts) {
  if (facts.empty()) throw InputError("fuse: empty fact sequence");
  const std::size_t n = facts.size();
  const std::size_t hidden = layer.fwd.bu.size();

  std::vector<Tensor> forward(n);
  Tensor h = g.constant(Tensor::zeros({hidden}));
  for (std::size_t i = 0; i < n; ++i) {
    h = gru_step(layer.fwd, facts[i], h);
    forward[i] = h;
  }

  std::vector<Tensor> backward(n);
  h = g.constant(Tensor::zeros({hidden}));
  for (std::size_t i = n; i-- > 0;) {
    h = gru_step(layer.bwd, facts[i], h);
    backward[i] = h;
  }

  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(add(forward[i], backward[i]));
  return out;
}

}  // namespace dmn
