#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmn/errors.hpp"
#include "dmn/params.hpp"
#include "dmn/tensor.hpp"

namespace dmn {

using TokenIds = std::vector<std::size_t>;

// Token table with two reserved entries: id 0 pads, id 1 absorbs tokens that
// were never added. encode() never throws on unseen text.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary() {
    add("<pad>");
    add("<unk>");
  }

  std::size_t add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    tokens_.push_back(token);
    index_[token] = tokens_.size() - 1;
    return tokens_.size() - 1;
  }

  std::size_t encode(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  TokenIds encode_all(const std::vector<std::string>& words) const {
    TokenIds ids;
    ids.reserve(words.size());
    for (const std::string& w : words) ids.push_back(encode(w));
    return ids;
  }

  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size())
      throw IndexError("token id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gated recurrent cell parameters: update gate u, reset gate r, candidate c.
struct GruCellIds {
  ParamId Wu, Uu, bu;
  ParamId Wr, Ur, br;
  ParamId Wc, Uc, bc;

  static GruCellIds create(ParamStore& store, const std::string& prefix, std::size_t hidden,
                           std::size_t input) {
    GruCellIds ids;
    ids.Wu = store.add(prefix + ".Wu", Tensor::zeros({hidden, input}));
    ids.Uu = store.add(prefix + ".Uu", Tensor::zeros({hidden, hidden}));
    ids.bu = store.add(prefix + ".bu", Tensor::zeros({hidden}), /*bias=*/true);
    ids.Wr = store.add(prefix + ".Wr", Tensor::zeros({hidden, input}));
    ids.Ur = store.add(prefix + ".Ur", Tensor::zeros({hidden, hidden}));
    ids.br = store.add(prefix + ".br", Tensor::zeros({hidden}), /*bias=*/true);
    ids.Wc = store.add(prefix + ".Wc", Tensor::zeros({hidden, input}));
    ids.Uc = store.add(prefix + ".Uc", Tensor::zeros({hidden, hidden}));
    ids.bc = store.add(prefix + ".bc", Tensor::zeros({hidden}), /*bias=*/true);
    return ids;
  }
};

// A cell's parameters bound onto one graph.
struct GruCell {
  Tensor Wu, Uu, bu;
  Tensor Wr, Ur, br;
  Tensor Wc, Uc, bc;
};

inline GruCell bind(Graph& g, const GruCellIds& ids) {
  GruCell c;
  c.Wu = g.use(ids.Wu);
  c.Uu = g.use(ids.Uu);
  c.bu = g.use(ids.bu);
  c.Wr = g.use(ids.Wr);
  c.Ur = g.use(ids.Ur);
  c.br = g.use(ids.br);
  c.Wc = g.use(ids.Wc);
  c.Uc = g.use(ids.Uc);
  c.bc = g.use(ids.bc);
  return c;
}

// u = sigmoid(Wu x + Uu h + bu)
// r = sigmoid(Wr x + Ur h + br)
// hc = tanh(Wc x + r * (Uc h) + bc)
// h' = u * hc + (1 - u) * h, written as h + u * (hc - h).
inline Tensor gru_step(const GruCell& c, const Tensor& x, const Tensor& h) {
  Tensor u = sigmoid(add(add(matvec(c.Wu, x), matvec(c.Uu, h)), c.bu));
  Tensor r = sigmoid(add(add(matvec(c.Wr, x), matvec(c.Ur, h)), c.br));
  Tensor hc = tanh(add(add(matvec(c.Wc, x), mul(r, matvec(c.Uc, h))), c.bc));
  return add(h, mul(u, sub(hc, h)));
}

// Position-by-dimension weights for summing a sentence of M word vectors of
// width D. Row j (1-based) weighs word j: l[j][d] = (1 - j/M) - (d/D)(1 - 2j/M).
inline Tensor positional_weights(std::size_t M, std::size_t D) {
  if (M == 0 || D == 0) throw InputError("positional_weights: M and D must be positive");
  std::vector<double> w(M * D);
  const double md = static_cast<double>(M);
  const double dd = static_cast<double>(D);
  for (std::size_t j = 1; j <= M; ++j)
    for (std::size_t d = 1; d <= D; ++d)
      w[(j - 1) * D + (d - 1)] =
          (1.0 - j / md) - (d / dd) * (1.0 - 2.0 * j / md);
  return Tensor::matrix(M, D, std::move(w));
}

// Order-sensitive bag encoding: f = sum_j l_j * E[w_j].
inline Tensor encode_sentence_pe(Graph& g, const Tensor& embeddings, const TokenIds& words) {
  if (words.empty()) throw InputError("encode_sentence_pe: empty sentence");
  const std::size_t D = embeddings.cols();
  Tensor weights = g.constant(positional_weights(words.size(), D));
  Tensor acc = mul(row(weights, 0), row(embeddings, words[0]));
  for (std::size_t j = 1; j < words.size(); ++j)
    acc = add(acc, mul(row(weights, j), row(embeddings, words[j])));
  return acc;
}

// One recurrent pass over the story as a flat word stream; the hidden state
// at each sentence boundary becomes that sentence's fact vector.
inline std::vector<Tensor> encode_story_word_gru(Graph& g, const GruCell& cell,
                                                 const Tensor& embeddings,
                                                 const std::vector<TokenIds>& sentences) {
  if (sentences.empty()) throw InputError("encode_story_word_gru: empty story");
  const std::size_t hidden = cell.bu.size();
  Tensor h = g.constant(Tensor::zeros({hidden}));
  std::vector<Tensor> facts;
  facts.reserve(sentences.size());
  for (const TokenIds& sent : sentences) {
    if (sent.empty()) throw InputError("encode_story_word_gru: empty sentence");
    for (std::size_t w : sent) h = gru_step(cell, row(embeddings, w), h);
    facts.push_back(h);
  }
  return facts;
}

// Final hidden state of a recurrent pass over the question words.
inline Tensor encode_question(Graph& g, const GruCell& cell, const Tensor& embeddings,
                              const TokenIds& words) {
  if (words.empty()) throw InputError("encode_question: empty question");
  const std::size_t hidden = cell.bu.size();
  Tensor h = g.constant(Tensor::zeros({hidden}));
  for (std::size_t w : words) h = gru_step(cell, row(embeddings, w), h);
  return h;
}

}  // namespace dmn
