#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dmn/data.hpp"
#include "dmn/encoding.hpp"
#include "dmn/episodic.hpp"
#include "dmn/errors.hpp"
#include "dmn/fusion.hpp"
#include "dmn/params.hpp"
#include "dmn/tensor.hpp"
#include "dmn/visual.hpp"

namespace dmn {

enum class InputKind { word_gru, fusion };

struct ModelConfig {
  std::size_t embed_dim = 80;
  std::size_t hidden = 80;
  std::size_t attn_hidden = 0;  // 0 = same as hidden
  std::size_t passes = 3;
  InputKind input = InputKind::fusion;
  AttentionKind attention = AttentionKind::attn_gru;
  UpdateKind update = UpdateKind::relu;
  bool untied = true;
  bool shared_embeddings = true;   // question encoder reuses the story table
  bool ablate_memory = false;      // answer head reads [q; q] instead of [q; m]
  std::size_t visual_channels = 0;  // nonzero = feature-grid input

  std::size_t attn() const { return attn_hidden == 0 ? hidden : attn_hidden; }

  void validate() const {
    if (embed_dim == 0 || hidden == 0) throw ConfigError("model config: zero dimension");
    if (passes == 0) throw ConfigError("model config: pass count must be at least 1");
  }
};

// Named presets spanning the variant axes: input module, attention kind,
// memory update, weight tying.
inline ModelConfig variant_config(const std::string& name) {
  ModelConfig cfg;
  if (name == "odmn") {
    cfg.input = InputKind::word_gru;
    cfg.attention = AttentionKind::soft;
    cfg.update = UpdateKind::gru;
    cfg.untied = false;
  } else if (name == "dmn2") {
    cfg.input = InputKind::fusion;
    cfg.attention = AttentionKind::soft;
    cfg.update = UpdateKind::gru;
    cfg.untied = false;
  } else if (name == "dmn3") {
    cfg.input = InputKind::fusion;
    cfg.attention = AttentionKind::attn_gru;
    cfg.update = UpdateKind::gru;
    cfg.untied = false;
  } else if (name == "dmn+") {
    cfg.input = InputKind::fusion;
    cfg.attention = AttentionKind::attn_gru;
    cfg.update = UpdateKind::relu;
    cfg.untied = true;
  } else {
    throw ConfigError("unknown variant: " + name + " (expected odmn, dmn2, dmn3, dmn+)");
  }
  return cfg;
}

inline std::string input_kind_name(InputKind k) {
  return k == InputKind::word_gru ? "word_gru" : "fusion";
}
inline InputKind input_kind_from_name(const std::string& s) {
  if (s == "word_gru") return InputKind::word_gru;
  if (s == "fusion") return InputKind::fusion;
  throw ConfigError("unknown input kind: " + s);
}
inline std::string attention_kind_name(AttentionKind k) {
  return k == AttentionKind::soft ? "soft" : "attn_gru";
}
inline AttentionKind attention_kind_from_name(const std::string& s) {
  if (s == "soft") return AttentionKind::soft;
  if (s == "attn_gru") return AttentionKind::attn_gru;
  throw ConfigError("unknown attention kind: " + s);
}
inline std::string update_kind_name(UpdateKind k) {
  return k == UpdateKind::gru ? "gru" : "relu";
}
inline UpdateKind update_kind_from_name(const std::string& s) {
  if (s == "gru") return UpdateKind::gru;
  if (s == "relu") return UpdateKind::relu;
  throw ConfigError("unknown update kind: " + s);
}

// Keeps each entry with probability keep_p and rescales survivors by
// 1/keep_p, so the expectation matches the identity the evaluation path
// uses.
inline Tensor apply_dropout(Graph& g, const Tensor& x, double keep_p, Rng& rng, bool training) {
  if (!(keep_p > 0.0 && keep_p <= 1.0))
    throw ConfigError("dropout keep probability must be in (0, 1]");
  if (!training || keep_p == 1.0) return x;
  std::vector<double> mask(x.size());
  for (double& m : mask) m = uniform01(rng) < keep_p ? 1.0 / keep_p : 0.0;
  return mul(x, g.constant(Tensor(x.shape, std::move(mask))));
}

struct ModelOutput {
  Tensor logits;
  EpisodeHistory history;
};

// The assembled network: input module (word-level reader or positional
// encoding + fusion; feature-grid projection for visual input), question
// reader, multi-pass episodic memory, linear answer head over [q; m].
class Model {
 public:
  ModelConfig config;
  VocabPair vocab;
  ParamStore store;

  Model(ModelConfig cfg, VocabPair voc) : config(cfg), vocab(std::move(voc)) {
    config.validate();
    if (vocab.answers.empty()) throw ConfigError("model: empty answer vocabulary");

    embeddings_ = store.add("embeddings",
                            Tensor::zeros({vocab.input.size(), config.embed_dim}));
    if (!config.shared_embeddings)
      question_embeddings_ =
          store.add("question_embeddings", Tensor::zeros({vocab.input.size(), config.embed_dim}));

    question_cell_ = GruCellIds::create(store, "question", config.hidden, config.embed_dim);

    const bool visual = config.visual_channels > 0;
    if (visual)
      projection_ = VisualProjectionIds::create(store, "visual_proj", config.hidden,
                                                config.visual_channels);
    // Facts enter the input module at embedding width for text and at hidden
    // width once projected for grids.
    const std::size_t fact_in = visual ? config.hidden : config.embed_dim;
    if (config.input == InputKind::word_gru)
      reader_cell_ = GruCellIds::create(store, "reader", config.hidden, fact_in);
    else
      fusion_ = FusionLayerIds::create(store, "fusion", config.hidden, fact_in);

    EpisodicConfig ep;
    ep.passes = config.passes;
    ep.attention = config.attention;
    ep.update = config.update;
    ep.untied = config.untied;
    episodic_ = EpisodicIds::create(store, "episodic", ep, config.hidden, config.attn());

    answer_W_ = store.add("answer.W", Tensor::zeros({vocab.answers.size(), 2 * config.hidden}));
    answer_b_ = store.add("answer.b", Tensor::zeros({vocab.answers.size()}), /*bias=*/true);
  }

  // Xavier for matrices, zeros for biases, uniform [-sqrt(3), sqrt(3)] for
  // embedding tables whose pad row stays zero.
  void init(Rng& rng) {
    const double r3 = std::sqrt(3.0);
    for (Param& p : store.all()) init_param(p, rng);
    for (ParamId id : embedding_ids()) {
      Param& emb = store.at(id);
      fill_uniform(emb.value, rng, -r3, r3);
      for (std::size_t d = 0; d < config.embed_dim; ++d)
        emb.value.values[Vocabulary::kPad * config.embed_dim + d] = 0.0;
    }
  }

  std::vector<ParamId> embedding_ids() const {
    std::vector<ParamId> ids = {embeddings_};
    if (!config.shared_embeddings) ids.push_back(question_embeddings_);
    return ids;
  }

  // Forward pass for one example. The dropout rng is consumed only when
  // training is set; evaluation is deterministic and mask-free.
  ModelOutput forward(Graph& g, const Example& ex, bool training, Rng& rng,
                      double keep_p) const {
    Tensor story_emb = g.use(embeddings_);
    Tensor question_emb =
        config.shared_embeddings ? story_emb : g.use(question_embeddings_);
    Tensor q = encode_question(g, bind(g, question_cell_), question_emb,
                               vocab.input.encode_all(ex.question));

    std::vector<Tensor> facts = encode_facts(g, ex, story_emb, training, rng, keep_p);
    EpisodeHistory history = run_episodes(g, episodic_, facts, q);

    Tensor answer_in =
        concat({q, config.ablate_memory ? q : history.final_memory()});
    answer_in = apply_dropout(g, answer_in, keep_p, rng, training);
    Tensor logits = add(matvec(g.use(answer_W_), answer_in), g.use(answer_b_));
    return ModelOutput{std::move(logits), std::move(history)};
  }

  Tensor loss(Graph& g, const Example& ex, bool training, Rng& rng, double keep_p) const {
    ModelOutput out = forward(g, ex, training, rng, keep_p);
    return cross_entropy(out.logits, vocab.answer_index(ex.answer));
  }

  // Lowest index wins ties, so prediction is deterministic.
  std::size_t predict(const Example& ex) const {
    Graph g(store_mutable());
    Rng unused(0);
    ModelOutput out = forward(g, ex, /*training=*/false, unused, 1.0);
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.logits.size(); ++i)
      if (out.logits[i] > out.logits[best]) best = i;
    return best;
  }

  const std::string& predict_label(const Example& ex) const {
    return vocab.answers[predict(ex)];
  }

 private:
  ParamId embeddings_ = 0;
  ParamId question_embeddings_ = 0;
  GruCellIds question_cell_;
  GruCellIds reader_cell_;
  FusionLayerIds fusion_;
  VisualProjectionIds projection_;
  EpisodicIds episodic_;
  ParamId answer_W_ = 0;
  ParamId answer_b_ = 0;

  // Graph construction needs a mutable store; prediction does not modify
  // parameter values.
  ParamStore& store_mutable() const { return const_cast<Model*>(this)->store; }

  std::vector<Tensor> encode_facts(Graph& g, const Example& ex, const Tensor& emb, bool training,
                                   Rng& rng, double keep_p) const {
    if (config.visual_channels > 0) {
      if (!ex.grid) throw InputError("visual model: example has no feature grid");
      if (ex.grid->channels != config.visual_channels)
        throw DimensionError("feature grid has " + std::to_string(ex.grid->channels) +
                             " channels, model expects " +
                             std::to_string(config.visual_channels));
      VisualProjection proj = bind(g, projection_);
      std::vector<Tensor> projected;
      projected.reserve(ex.grid->cells());
      for (Tensor& patch : grid_patches(*ex.grid)) {
        Tensor p = apply_dropout(g, g.constant(patch), keep_p, rng, training);
        projected.push_back(project_patch(proj, p));
      }
      if (config.input == InputKind::fusion) return fuse(g, bind(g, fusion_), projected);
      // Word-style reader over the patch sequence: every state is a fact.
      GruCell cell = bind(g, reader_cell_);
      Tensor h = g.constant(Tensor::zeros({config.hidden}));
      std::vector<Tensor> facts;
      facts.reserve(projected.size());
      for (const Tensor& p : projected) {
        h = gru_step(cell, p, h);
        facts.push_back(h);
      }
      return facts;
    }

    if (ex.context.empty()) throw InputError("text model: example has no context sentences");
    std::vector<TokenIds> sentences;
    sentences.reserve(ex.context.size());
    for (const Words& sent : ex.context) sentences.push_back(vocab.input.encode_all(sent));

    if (config.input == InputKind::word_gru) {
      std::vector<Tensor> states =
          encode_story_word_gru(g, bind(g, reader_cell_), emb, sentences);
      for (Tensor& s : states) s = apply_dropout(g, s, keep_p, rng, training);
      return states;
    }
    std::vector<Tensor> sent_vecs;
    sent_vecs.reserve(sentences.size());
    for (const TokenIds& sent : sentences)
      sent_vecs.push_back(apply_dropout(g, encode_sentence_pe(g, emb, sent), keep_p, rng, training));
    return fuse(g, bind(g, fusion_), sent_vecs);
  }
};

}  // namespace dmn
