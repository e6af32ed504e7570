#pragma once

#include <string>
#include <vector>

#include "dmn/encoding.hpp"
#include "dmn/errors.hpp"
#include "dmn/params.hpp"
#include "dmn/tensor.hpp"

namespace dmn {

enum class AttentionKind { soft, attn_gru };
enum class UpdateKind { gru, relu };

struct EpisodicConfig {
  std::size_t passes = 3;
  AttentionKind attention = AttentionKind::attn_gru;
  UpdateKind update = UpdateKind::relu;
  bool untied = true;

  void validate() const {
    if (passes == 0) throw ConfigError("episodic config: pass count must be at least 1");
  }
};

// Two-layer scorer producing one scalar per fact.
struct AttentionScorerIds {
  ParamId W1, b1, W2, b2;

  static AttentionScorerIds create(ParamStore& store, const std::string& prefix,
                                   std::size_t attn_hidden, std::size_t hidden) {
    AttentionScorerIds ids;
    ids.W1 = store.add(prefix + ".W1", Tensor::zeros({attn_hidden, 4 * hidden}));
    ids.b1 = store.add(prefix + ".b1", Tensor::zeros({attn_hidden}), /*bias=*/true);
    ids.W2 = store.add(prefix + ".W2", Tensor::zeros({1, attn_hidden}));
    ids.b2 = store.add(prefix + ".b2", Tensor::zeros({1}), /*bias=*/true);
    return ids;
  }
};

struct AttentionScorer {
  Tensor W1, b1, W2, b2;
};

inline AttentionScorer bind(Graph& g, const AttentionScorerIds& ids) {
  return AttentionScorer{g.use(ids.W1), g.use(ids.b1), g.use(ids.W2), g.use(ids.b2)};
}

// z = [f*q; f*m; |f-q|; |f-m|], the similarity features the scorer sees.
inline Tensor interaction_vector(const Tensor& f, const Tensor& q, const Tensor& m) {
  return concat({mul(f, q), mul(f, m), abs(sub(f, q)), abs(sub(f, m))});
}

inline Tensor attention_score(const AttentionScorer& s, const Tensor& z) {
  return add(matvec(s.W2, tanh(add(matvec(s.W1, z), s.b1))), s.b2);
}

// Softmax over the scores of all facts; the result sums to 1 by construction.
inline Tensor attention_gates(const AttentionScorer& s, const std::vector<Tensor>& facts,
                              const Tensor& q, const Tensor& m) {
  if (facts.empty()) throw InputError("attention_gates: no facts");
  std::vector<Tensor> scores;
  scores.reserve(facts.size());
  for (const Tensor& f : facts) scores.push_back(attention_score(s, interaction_vector(f, q, m)));
  return softmax(concat(scores));
}

// c = sum_i g_i f_i. Discards fact order entirely.
inline Tensor soft_attention(const std::vector<Tensor>& facts, const Tensor& gates) {
  if (facts.empty()) throw InputError("soft_attention: no facts");
  if (gates.size() != facts.size())
    throw DimensionError("soft_attention: " + std::to_string(gates.size()) + " gates for " +
                         std::to_string(facts.size()) + " facts");
  Tensor c = scale(slice(gates, 0, 1), facts[0]);
  for (std::size_t i = 1; i < facts.size(); ++i)
    c = add(c, scale(slice(gates, i, 1), facts[i]));
  return c;
}

// Recurrent pass whose update gate is replaced by the scalar attention gate:
// h_i = g_i * hc_i + (1 - g_i) * h_{i-1}, reset gate kept. Starts from
// h_0 = 0 and returns h_N, so fact order matters. The cell's update-gate
// parameters are unused here.
inline Tensor attention_gru(Graph& g, const GruCell& cell, const std::vector<Tensor>& facts,
                            const Tensor& gates) {
  if (facts.empty()) throw InputError("attention_gru: no facts");
  if (gates.size() != facts.size())
    throw DimensionError("attention_gru: " + std::to_string(gates.size()) + " gates for " +
                         std::to_string(facts.size()) + " facts");
  const std::size_t hidden = cell.bc.size();
  Tensor h = g.constant(Tensor::zeros({hidden}));
  for (std::size_t i = 0; i < facts.size(); ++i) {
    Tensor r = sigmoid(add(add(matvec(cell.Wr, facts[i]), matvec(cell.Ur, h)), cell.br));
    Tensor hc = tanh(add(add(matvec(cell.Wc, facts[i]), mul(r, matvec(cell.Uc, h))), cell.bc));
    h = add(h, scale(slice(gates, i, 1), sub(hc, h)));
  }
  return h;
}

// Either a recurrent update m' = GRU(c, m) or a feedforward
// m' = relu(W [m; c; q] + b) with W of shape hidden x 3*hidden.
struct MemoryUpdateIds {
  UpdateKind kind = UpdateKind::gru;
  GruCellIds gru;
  ParamId W = 0, b = 0;

  static MemoryUpdateIds create(ParamStore& store, const std::string& prefix, UpdateKind kind,
                                std::size_t hidden) {
    MemoryUpdateIds ids;
    ids.kind = kind;
    if (kind == UpdateKind::gru) {
      ids.gru = GruCellIds::create(store, prefix + ".gru", hidden, hidden);
    } else {
      ids.W = store.add(prefix + ".W", Tensor::zeros({hidden, 3 * hidden}));
      ids.b = store.add(prefix + ".b", Tensor::zeros({hidden}), /*bias=*/true);
    }
    return ids;
  }
};

struct MemoryUpdate {
  UpdateKind kind = UpdateKind::gru;
  GruCell gru;
  Tensor W, b;
};

inline MemoryUpdate bind(Graph& g, const MemoryUpdateIds& ids) {
  MemoryUpdate u;
  u.kind = ids.kind;
  if (ids.kind == UpdateKind::gru) {
    u.gru = bind(g, ids.gru);
  } else {
    u.W = g.use(ids.W);
    u.b = g.use(ids.b);
  }
  return u;
}

inline Tensor memory_update(const MemoryUpdate& u, const Tensor& m_prev, const Tensor& c,
                            const Tensor& q) {
  if (u.kind == UpdateKind::gru) return gru_step(u.gru, c, m_prev);
  return relu(add(matvec(u.W, concat({m_prev, c, q})), u.b));
}

// Parameters for one pass: scorer, attention cell (present only for the
// attn_gru kind), and memory update.
struct EpisodePassIds {
  AttentionScorerIds scorer;
  GruCellIds attn_cell;
  MemoryUpdateIds update;
};

// Tied configs share one parameter block across passes; untied configs hold
// one block per pass.
struct EpisodicIds {
  EpisodicConfig config;
  std::vector<EpisodePassIds> blocks;

  static EpisodicIds create(ParamStore& store, const std::string& prefix,
                            const EpisodicConfig& config, std::size_t hidden,
                            std::size_t attn_hidden) {
    config.validate();
    EpisodicIds ids;
    ids.config = config;
    const std::size_t n_blocks = config.untied ? config.passes : 1;
    for (std::size_t t = 0; t < n_blocks; ++t) {
      const std::string p =
          config.untied ? prefix + ".pass" + std::to_string(t + 1) : prefix + ".shared";
      EpisodePassIds block;
      block.scorer = AttentionScorerIds::create(store, p + ".scorer", attn_hidden, hidden);
      if (config.attention == AttentionKind::attn_gru)
        block.attn_cell = GruCellIds::create(store, p + ".attn", hidden, hidden);
      block.update = MemoryUpdateIds::create(store, p + ".update", config.update, hidden);
      ids.blocks.push_back(block);
    }
    return ids;
  }

  const EpisodePassIds& at(std::size_t t) const {
    if (!config.untied) return blocks.at(0);
    if (t >= blocks.size())
      throw ConfigError("episodic weights: no parameter block for pass " + std::to_string(t + 1));
    return blocks[t];
  }
};

struct EpisodeRecord {
  Tensor gates;
  Tensor context;
  Tensor memory;
};

struct EpisodeHistory {
  Tensor initial_memory;
  std::vector<EpisodeRecord> records;

  const Tensor& final_memory() const {
    return records.empty() ? initial_memory : records.back().memory;
  }
};

// Full multi-pass sweep: m_0 = q, then for each pass gates -> context ->
// memory update. All intermediate gates are kept for inspection.
inline EpisodeHistory run_episodes(Graph& g, const EpisodicIds& ids,
                                   const std::vector<Tensor>& facts, const Tensor& q) {
  ids.config.validate();
  EpisodeHistory history;
  history.initial_memory = q;
  Tensor m = q;
  for (std::size_t t = 0; t < ids.config.passes; ++t) {
    const EpisodePassIds& block = ids.at(t);
    AttentionScorer scorer = bind(g, block.scorer);
    EpisodeRecord rec;
    rec.gates = attention_gates(scorer, facts, q, m);
    if (ids.config.attention == AttentionKind::attn_gru) {
      GruCell cell = bind(g, block.attn_cell);
      rec.context = attention_gru(g, cell, facts, rec.gates);
    } else {
      rec.context = soft_attention(facts, rec.gates);
    }
    MemoryUpdate update = bind(g, block.update);
    rec.memory = memory_update(update, m, rec.context, q);
    m = rec.memory;
    history.records.push_back(std::move(rec));
  }
  return history;
}

}  // namespace dmn
