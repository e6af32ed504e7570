#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "dmn/data.hpp"
#include "dmn/gradcheck.hpp"
#include "dmn/io.hpp"
#include "dmn/model.hpp"
#include "dmn/train.hpp"

namespace dmn {
namespace {

Dataset tiny_dataset() {
  std::istringstream in(
      "1 mary went to the kitchen.\n"
      "2 john went to the garden.\n"
      "3 where is mary?\tkitchen\t1\n"
      "1 john went to the office.\n"
      "2 mary went to the hallway.\n"
      "3 where is john?\toffice\t1\n"
      "1 sandra went to the garden.\n"
      "2 john went to the kitchen.\n"
      "3 where is sandra?\tgarden\t1\n"
      "1 mary went to the hallway.\n"
      "2 sandra went to the office.\n"
      "3 where is mary?\thallway\t1\n");
  return parse_babi(in);
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.hidden = 8;
  cfg.attn_hidden = 4;
  cfg.passes = 2;
  return cfg;
}

TEST(Adam, FirstStepIsBiasCorrected) {
  ParamStore store;
  ParamId w = store.add("w", Tensor::vec({1.0, 2.0}));
  AdamConfig cfg;
  AdamState adam(store, cfg);

  store.at(w).grad = {0.5, 0.0};
  adam.step(store);
  EXPECT_EQ(adam.steps(), 1u);

  // Bias correction makes the first step lr * g / (|g| + eps).
  const double expected = 1.0 - 0.001 * (0.5 / (0.5 + 1e-8));
  EXPECT_NEAR(store.at(w).value[0], expected, 1e-15);
  // Zero gradient moves nothing at all.
  EXPECT_EQ(store.at(w).value[1], 2.0);
}

TEST(Adam, RejectsNonFiniteGradients) {
  ParamStore store;
  ParamId w = store.add("windy", Tensor::vec({1.0}));
  AdamState adam(store, AdamConfig{});
  store.at(w).grad = {std::numeric_limits<double>::infinity()};
  try {
    adam.step(store);
    FAIL() << "expected TrainingFault";
  } catch (const TrainingFault& e) {
    EXPECT_NE(std::string(e.what()).find("windy"), std::string::npos);
  }
}

TEST(Adam, RejectsMismatchedStore) {
  ParamStore store;
  store.add("w", Tensor::vec({1.0}));
  AdamState adam(store, AdamConfig{});
  store.add("later", Tensor::vec({1.0}));
  EXPECT_THROW(adam.step(store), ConfigError);
}

TEST(L2, PenalizesWeightsNotBiases) {
  ParamStore store;
  ParamId w = store.add("w", Tensor::matrix(2, 2, {1.0, -2.0, 3.0, 4.0}));
  ParamId b = store.add("b", Tensor::vec({5.0}), /*bias=*/true);
  EXPECT_DOUBLE_EQ(l2_penalty(store, 0.1), 0.5 * 0.1 * 30.0);

  store.zero_grads();
  add_l2_gradients(store, 0.1);
  EXPECT_DOUBLE_EQ(store.at(w).grad[0], 0.1);
  EXPECT_DOUBLE_EQ(store.at(w).grad[1], -0.2);
  EXPECT_DOUBLE_EQ(store.at(w).grad[3], 0.4);
  EXPECT_DOUBLE_EQ(store.at(b).grad[0], 0.0);

  add_l2_gradients(store, 0.0);
  EXPECT_DOUBLE_EQ(store.at(w).grad[0], 0.1);
}

TEST(Dropout, IdentityWhenEvaluatingOrKeepingEverything) {
  ParamStore store;
  Graph g(store);
  Tensor x = g.constant(Tensor::vec({1.0, 2.0, 3.0}));
  Rng rng(3);
  Tensor eval_out = apply_dropout(g, x, 0.5, rng, /*training=*/false);
  EXPECT_EQ(eval_out.values, x.values);
  Tensor keep_all = apply_dropout(g, x, 1.0, rng, /*training=*/true);
  EXPECT_EQ(keep_all.values, x.values);
}

TEST(Dropout, InvertedScalingPreservesExpectation) {
  ParamStore store;
  Graph g(store);
  const std::size_t n = 400;
  Tensor x = g.constant(Tensor(std::vector<std::size_t>{n}, std::vector<double>(n, 1.0)));
  Rng rng(17);
  Tensor y = apply_dropout(g, x, 0.8, rng, /*training=*/true);

  double sum = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = y[i];
    ASSERT_TRUE(v == 0.0 || std::abs(v - 1.25) < 1e-12) << v;
    if (v != 0.0) ++kept;
    sum += v;
  }
  EXPECT_NEAR(static_cast<double>(kept) / n, 0.8, 0.07);
  EXPECT_NEAR(sum / static_cast<double>(n), 1.0, 0.09);
}

TEST(Dropout, RejectsKeepProbabilityOutsideUnitInterval) {
  ParamStore store;
  Graph g(store);
  Tensor x = g.constant(Tensor::vec({1.0}));
  Rng rng(1);
  EXPECT_THROW(apply_dropout(g, x, 0.0, rng, true), ConfigError);
  EXPECT_THROW(apply_dropout(g, x, -0.2, rng, true), ConfigError);
  EXPECT_THROW(apply_dropout(g, x, 1.5, rng, true), ConfigError);
}

TEST(Dropout, MeanOverManyMasksApproachesIdentity) {
  ParamStore store;
  Graph g(store);
  Tensor x = g.constant(Tensor::vec({1.0, -2.0, 0.5, 3.0}));
  Rng rng(29);
  const int trials = 10000;
  std::vector<double> acc(4, 0.0);
  for (int t = 0; t < trials; ++t) {
    Tensor y = apply_dropout(g, x, 0.9, rng, true);
    for (std::size_t d = 0; d < 4; ++d) acc[d] += y[d];
  }
  for (std::size_t d = 0; d < 4; ++d)
    EXPECT_NEAR(acc[d] / trials, x[d], std::abs(x[d]) * 0.05) << "coordinate " << d;
}

TEST(Init, EmbeddingFillStaysInRangeWithNearZeroMean) {
  Tensor t = Tensor::zeros({100000});
  Rng rng(123);
  const double r3 = std::sqrt(3.0);
  fill_uniform(t, rng, -r3, r3);
  double mean = 0.0;
  for (double v : t.values) {
    ASSERT_LE(std::abs(v), r3);
    mean += v;
  }
  mean /= static_cast<double>(t.size());
  EXPECT_LT(std::abs(mean), 0.02);
}

TEST(Predict, TieBreaksLowAndIgnoresLogitShifts) {
  Dataset data = tiny_dataset();
  Model model(tiny_config(), build_vocab(data));
  // Never initialized: every logit is zero, so the tie rule picks index 0.
  EXPECT_EQ(model.predict(data[0]), 0u);

  Param& b = model.store.at(model.store.id_of("answer.b"));
  b.value.values[2] = 5.0;
  EXPECT_EQ(model.predict(data[0]), 2u);

  for (double& v : b.value.values) v += 3.25;
  EXPECT_EQ(model.predict(data[0]), 2u);
}

TEST(ConsensusAccuracy, ThreeAgreeingHumansGiveFullCredit) {
  const std::vector<std::string> humans = {"red", "red", "red", "blue", "red", "red"};
  EXPECT_DOUBLE_EQ(vqa_consensus_accuracy("green", humans), 0.0);
  EXPECT_DOUBLE_EQ(vqa_consensus_accuracy("blue", humans), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(vqa_consensus_accuracy("red", humans), 1.0);

  EXPECT_DOUBLE_EQ(vqa_consensus_accuracy("a", {"a", "a"}), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(vqa_consensus_accuracy("a", {"a", "a", "a", "a", "a"}), 1.0);
  EXPECT_THROW(vqa_consensus_accuracy("a", {}), InputError);
}

TEST(TrainConfig, ValidatesBounds) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.keep_p = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.patience = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.max_epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Train, OverfitsATinyDataset) {
  Dataset data = tiny_dataset();
  Model model(tiny_config(), build_vocab(data));
  Rng rng(5);
  model.init(rng);

  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 4;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.keep_p = 1.0;
  cfg.l2_strength = 0.0;
  cfg.seed = 5;
  TrainReport report = train(model, data, cfg);

  ASSERT_FALSE(report.epochs.empty());
  EXPECT_LT(report.best_val_loss, 0.05);
  EXPECT_DOUBLE_EQ(report.best_val_acc, 1.0);
  EXPECT_DOUBLE_EQ(evaluate(model, data).accuracy, 1.0);

  // Four examples leave no tenth for validation, so the train split is its
  // own validation set and the restored weights reproduce the best loss.
  EXPECT_DOUBLE_EQ(detail::mean_eval_loss(model, data), report.best_val_loss);
}

TEST(Train, MemorizesASingleExample) {
  Dataset data = tiny_dataset();
  // Vocabulary from all four stories keeps several answer classes, so the
  // starting loss is nontrivial even though only one example is trained on.
  VocabPair vocab = build_vocab(data);
  data.resize(1);

  Model model(tiny_config(), vocab);
  Rng rng(9);
  model.init(rng);

  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 1;
  cfg.max_epochs = 150;
  cfg.patience = 150;
  cfg.keep_p = 1.0;
  cfg.l2_strength = 0.0;
  cfg.seed = 9;
  TrainReport report = train(model, data, cfg);

  EXPECT_LT(report.best_val_loss, 0.01);
  EXPECT_EQ(model.predict(data[0]), vocab.answer_index(data[0].answer));
}

TEST(Train, StopsAfterPatienceWithoutImprovement) {
  Dataset data = tiny_dataset();
  Model model(tiny_config(), build_vocab(data));
  Rng rng(6);
  model.init(rng);

  // A zero learning rate freezes validation loss, so the second epoch
  // already exhausts a patience of one.
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.batch_size = 4;
  cfg.max_epochs = 30;
  cfg.patience = 1;
  cfg.keep_p = 1.0;
  TrainReport report = train(model, data, cfg);

  EXPECT_TRUE(report.early_stopped);
  EXPECT_EQ(report.epochs.size(), 2u);
  EXPECT_EQ(report.best_epoch, 1u);
  EXPECT_DOUBLE_EQ(report.epochs[0].val_loss, report.epochs[1].val_loss);
}

TEST(Train, SameSeedGivesIdenticalTrajectories) {
  Dataset data = tiny_dataset();
  auto run = [&](std::uint64_t seed) {
    Model model(tiny_config(), build_vocab(data));
    Rng rng(9);
    model.init(rng);
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.batch_size = 2;
    cfg.max_epochs = 6;
    cfg.patience = 6;
    cfg.seed = seed;
    return train(model, data, cfg);
  };

  TrainReport a = run(42);
  TrainReport b = run(42);
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].train_loss, b.epochs[i].train_loss) << "epoch " << i;
    EXPECT_EQ(a.epochs[i].val_loss, b.epochs[i].val_loss) << "epoch " << i;
  }

  TrainReport c = run(43);
  bool differs = a.epochs.size() != c.epochs.size();
  for (std::size_t i = 0; !differs && i < a.epochs.size(); ++i)
    differs = a.epochs[i].train_loss != c.epochs[i].train_loss;
  EXPECT_TRUE(differs) << "different shuffling seeds produced identical losses";
}

TEST(Train, RejectsEmptyDataset) {
  Dataset data = tiny_dataset();
  Model model(tiny_config(), build_vocab(data));
  TrainConfig cfg;
  EXPECT_THROW(train(model, Dataset{}, cfg), InputError);
}

TEST(Evaluate, RejectsEmptyDataset) {
  Dataset data = tiny_dataset();
  Model model(tiny_config(), build_vocab(data));
  EXPECT_THROW(evaluate(model, Dataset{}), InputError);
  EXPECT_THROW(dataset_consensus_accuracy(model, Dataset{}), InputError);
}

TEST(FullModel, GradCheckWithoutDropout) {
  Dataset data = tiny_dataset();
  ModelConfig cfg;
  cfg.embed_dim = 3;
  cfg.hidden = 3;
  cfg.attn_hidden = 2;
  cfg.passes = 2;
  Model model(cfg, build_vocab(data));
  Rng rng(12);
  model.init(rng);

  auto report = grad_check(model.store, [&](Graph& g) {
    Rng unused(0);
    Tensor total = model.loss(g, data[0], false, unused, 1.0);
    return add(total, model.loss(g, data[1], false, unused, 1.0));
  });
  EXPECT_TRUE(report.pass) << report.summary();
}

TEST(ConfigJson, ModelRoundTrip) {
  ModelConfig cfg;
  cfg.embed_dim = 12;
  cfg.hidden = 34;
  cfg.attn_hidden = 5;
  cfg.passes = 4;
  cfg.input = InputKind::word_gru;
  cfg.attention = AttentionKind::soft;
  cfg.update = UpdateKind::gru;
  cfg.untied = false;
  cfg.shared_embeddings = false;
  cfg.ablate_memory = true;
  cfg.visual_channels = 7;

  ModelConfig back = model_config_from_json(model_config_json(cfg));
  EXPECT_EQ(back.embed_dim, cfg.embed_dim);
  EXPECT_EQ(back.hidden, cfg.hidden);
  EXPECT_EQ(back.attn_hidden, cfg.attn_hidden);
  EXPECT_EQ(back.passes, cfg.passes);
  EXPECT_EQ(back.input, cfg.input);
  EXPECT_EQ(back.attention, cfg.attention);
  EXPECT_EQ(back.update, cfg.update);
  EXPECT_EQ(back.untied, cfg.untied);
  EXPECT_EQ(back.shared_embeddings, cfg.shared_embeddings);
  EXPECT_EQ(back.ablate_memory, cfg.ablate_memory);
  EXPECT_EQ(back.visual_channels, cfg.visual_channels);
}

TEST(ConfigJson, TrainRoundTrip) {
  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.batch_size = 7;
  cfg.max_epochs = 11;
  cfg.patience = 3;
  cfg.l2_strength = 0.25;
  cfg.keep_p = 0.6;
  cfg.seed = 99;
  cfg.sentence_limit = 13;

  TrainConfig back = train_config_from_json(train_config_json(cfg));
  EXPECT_EQ(back.lr, cfg.lr);
  EXPECT_EQ(back.batch_size, cfg.batch_size);
  EXPECT_EQ(back.max_epochs, cfg.max_epochs);
  EXPECT_EQ(back.patience, cfg.patience);
  EXPECT_EQ(back.l2_strength, cfg.l2_strength);
  EXPECT_EQ(back.keep_p, cfg.keep_p);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.sentence_limit, cfg.sentence_limit);
}

TEST(Report, JsonLinesCarryEveryEpochField) {
  TrainReport report;
  report.epochs.push_back({1, 0.5, 0.6, 0.25});
  report.epochs.push_back({2, 0.4, 0.55, 0.5});
  std::ostringstream out;
  append_report(out, 3, report);

  std::istringstream in(out.str());
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    Json j = Json::parse(line);
    EXPECT_EQ(j.at("restart").get<std::size_t>(), 3u);
    EXPECT_EQ(j.at("epoch").get<std::size_t>(), rows + 1);
    EXPECT_TRUE(j.contains("train_loss"));
    EXPECT_TRUE(j.contains("val_loss"));
    EXPECT_TRUE(j.contains("val_acc"));
    ++rows;
  }
  EXPECT_EQ(rows, 2u);
}

TEST(Checkpoint, RoundTripsParametersAndVocabulary) {
  Dataset data = tiny_dataset();
  Model model(tiny_config(), build_vocab(data));
  Rng rng(8);
  model.init(rng);

  const std::string path = ::testing::TempDir() + "/round.ckpt";
  save_checkpoint(path, model);
  Model back = load_checkpoint(path);

  EXPECT_EQ(back.config.hidden, model.config.hidden);
  EXPECT_EQ(back.config.passes, model.config.passes);
  EXPECT_EQ(back.vocab.input.tokens(), model.vocab.input.tokens());
  EXPECT_EQ(back.vocab.answers, model.vocab.answers);
  ASSERT_EQ(back.store.count(), model.store.count());
  for (std::size_t i = 0; i < model.store.count(); ++i) {
    EXPECT_EQ(back.store.at(i).name, model.store.at(i).name);
    EXPECT_EQ(back.store.at(i).value.values, model.store.at(i).value.values) << "param " << i;
  }
  for (const Example& ex : data) EXPECT_EQ(back.predict(ex), model.predict(ex));
}

TEST(Checkpoint, RejectsCorruptedFiles) {
  Dataset data = tiny_dataset();
  Model model(tiny_config(), build_vocab(data));
  Rng rng(8);
  model.init(rng);
  const std::string dir = ::testing::TempDir();
  const std::string good = dir + "/good.ckpt";
  save_checkpoint(good, model);

  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  {
    std::ofstream out(dir + "/magic.ckpt", std::ios::binary);
    out << "NOPE" << bytes.substr(4);
  }
  EXPECT_THROW(load_checkpoint(dir + "/magic.ckpt"), FormatError);

  {
    std::ofstream out(dir + "/cut.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 9);
  }
  EXPECT_THROW(load_checkpoint(dir + "/cut.ckpt"), FormatError);

  {
    std::ofstream out(dir + "/padded.ckpt", std::ios::binary);
    out << bytes << '\0';
  }
  EXPECT_THROW(load_checkpoint(dir + "/padded.ckpt"), FormatError);

  EXPECT_THROW(load_checkpoint(dir + "/absent.ckpt"), InputError);
}

TEST(GatesCsv, OneRowPerExamplePassAndFact) {
  Dataset data = tiny_dataset();
  data.resize(2);
  Model model(tiny_config(), build_vocab(data));
  Rng rng(14);
  model.init(rng);

  std::ostringstream out;
  write_gates_csv(out, model, data);
  std::istringstream in(out.str());
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "example_id,pass,fact,gate");

  std::map<std::pair<int, int>, double> sums;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    int e, t, f;
    double gate;
    char c1, c2, c3;
    std::istringstream row(line);
    ASSERT_TRUE(row >> e >> c1 >> t >> c2 >> f >> c3 >> gate) << line;
    sums[{e, t}] += gate;
    ++rows;
  }
  // Two examples, two passes, two facts each.
  EXPECT_EQ(rows, 2u * 2u * 2u);
  for (const auto& [key, sum] : sums) EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(GatesCsv, VisualRowsCarrySnakeCoordinates) {
  auto grid = std::make_shared<FeatureGrid>();
  grid->height = 2;
  grid->width = 3;
  grid->channels = 3;
  grid->data.resize(18);
  Rng noise(31);
  for (float& f : grid->data) f = static_cast<float>(uniform_range(noise, -1.0, 1.0));

  Example ex;
  ex.grid = grid;
  ex.grid_path = "probe";
  ex.question = {"what", "is", "here"};
  ex.answer = "ball";
  ex.human_answers = {"ball"};
  Dataset data{ex};

  ModelConfig cfg = tiny_config();
  cfg.visual_channels = 3;
  Model model(cfg, build_vocab(data));
  Rng rng(15);
  model.init(rng);

  std::ostringstream out;
  write_gates_csv(out, model, data);
  std::istringstream in(out.str());
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "example_id,pass,fact,row,col,gate");

  // 2x3 grid, serpentine: top row left to right, bottom row right to left.
  const std::vector<std::pair<int, int>> expect = {
      {0, 0}, {0, 1}, {0, 2}, {1, 2}, {1, 1}, {1, 0}};
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    int e, t, f, r, c;
    double gate;
    char d1, d2, d3, d4, d5;
    std::istringstream row(line);
    ASSERT_TRUE(row >> e >> d1 >> t >> d2 >> f >> d3 >> r >> d4 >> c >> d5 >> gate) << line;
    ASSERT_LT(static_cast<std::size_t>(f), expect.size());
    EXPECT_EQ(r, expect[f].first) << line;
    EXPECT_EQ(c, expect[f].second) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 2u * 6u);
}

}  // namespace
}  // namespace dmn
