#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmn/data.hpp"
#include "dmn/gradcheck.hpp"
#include "dmn/io.hpp"
#include "dmn/model.hpp"
#include "dmn/train.hpp"

namespace dmn {
namespace cli {

struct GenerateArgs {
  std::string family;
  std::size_t entities = 4;
  std::size_t locations = 4;
  std::size_t story_len = 8;
  std::size_t n_train = 1000;
  std::size_t n_test = 200;
  std::uint64_t seed = 1;
  std::string out_dir;
};

inline void run_generate(const GenerateArgs& a) {
  TaskSpec spec;
  spec.family = task_family_from_name(a.family);
  spec.entities = a.entities;
  spec.locations = a.locations;
  spec.story_len = a.story_len;
  spec.n_train = a.n_train;
  spec.n_test = a.n_test;
  spec.seed = a.seed;

  GeneratedData data = generate_task(spec);
  std::filesystem::create_directories(a.out_dir);
  const std::string train_path = a.out_dir + "/train.txt";
  const std::string test_path = a.out_dir + "/test.txt";
  save_babi(train_path, data.train);
  save_babi(test_path, data.test);
  std::cout << "wrote " << data.train.size() << " train examples to " << train_path << " and "
            << data.test.size() << " test examples to " << test_path << "\n";
}

struct TrainArgs {
  std::string data_path;
  bool visual = false;
  std::string variant = "dmn+";
  std::string input, attention, update, tying;
  bool ablate_memory = false;
  bool separate_embeddings = false;
  std::size_t dim = 80;
  std::size_t embed_dim = 0;
  std::size_t hidden = 0;
  std::size_t attn_hidden = 0;
  std::size_t passes = 3;
  double lr = 0.001;
  std::size_t batch = 128;
  std::size_t epochs = 256;
  std::size_t patience = 20;
  double keep_prob = 0.9;
  double l2 = 1e-5;
  std::uint64_t seed = 1;
  std::size_t sentence_limit = 70;
  std::size_t restarts = 1;
  std::string out_dir;
};

inline ModelConfig resolve_model_config(const TrainArgs& a, const Dataset& data) {
  ModelConfig cfg = variant_config(a.variant);
  if (!a.input.empty()) cfg.input = input_kind_from_name(a.input);
  if (!a.attention.empty()) cfg.attention = attention_kind_from_name(a.attention);
  if (!a.update.empty()) cfg.update = update_kind_from_name(a.update);
  if (!a.tying.empty()) {
    if (a.tying != "tied" && a.tying != "untied")
      throw ConfigError("unknown tying: " + a.tying + " (expected tied or untied)");
    cfg.untied = a.tying == "untied";
  }
  cfg.ablate_memory = a.ablate_memory;
  cfg.shared_embeddings = !a.separate_embeddings;
  cfg.embed_dim = a.embed_dim ? a.embed_dim : a.dim;
  cfg.hidden = a.hidden ? a.hidden : a.dim;
  cfg.attn_hidden = a.attn_hidden;
  cfg.passes = a.passes;
  if (a.visual) {
    if (data.empty() || !data[0].grid) throw InputError("visual dataset has no grids");
    cfg.visual_channels = data[0].grid->channels;
  }
  return cfg;
}

inline TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch;
  cfg.max_epochs = a.epochs;
  cfg.patience = a.patience;
  cfg.keep_p = a.keep_prob;
  cfg.l2_strength = a.l2;
  cfg.seed = a.seed;
  cfg.sentence_limit = a.sentence_limit;
  cfg.validate();
  return cfg;
}

inline void run_train(const TrainArgs& a) {
  if (a.restarts == 0) throw ConfigError("restarts must be at least 1");
  const Dataset data = a.visual ? load_visual_dataset(a.data_path) : load_babi(a.data_path);
  if (data.empty()) throw InputError("dataset " + a.data_path + " has no examples");

  const VocabPair vocab = build_vocab(data);
  const ModelConfig mcfg = resolve_model_config(a, data);
  const TrainConfig tcfg = resolve_train_config(a);

  std::filesystem::create_directories(a.out_dir);
  std::ofstream report_out(a.out_dir + "/report.jsonl", std::ios::trunc);
  if (!report_out) throw InputError("cannot write " + a.out_dir + "/report.jsonl");

  std::optional<Model> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_restart = 0;
  TrainReport best_report;

  for (std::size_t k = 0; k < a.restarts; ++k) {
    Model model(mcfg, vocab);
    Rng init_rng(a.seed + k);
    model.init(init_rng);

    TrainConfig rcfg = tcfg;
    rcfg.seed = a.seed + k;
    TrainReport report = train(model, data, rcfg);
    append_report(report_out, k, report);
    std::cout << "restart " << k << ": " << report.epochs.size() << " epochs, best epoch "
              << report.best_epoch << ", val_loss " << report.best_val_loss << ", val_acc "
              << report.best_val_acc << (report.early_stopped ? " (early stop)" : "") << "\n";
    if (report.best_val_loss < best_val) {
      best_val = report.best_val_loss;
      best = std::move(model);
      best_restart = k;
      best_report = report;
    }
  }

  Json manifest;
  manifest["command"] = "train";
  manifest["data"] = a.data_path;
  manifest["visual"] = a.visual;
  manifest["variant"] = a.variant;
  manifest["model"] = model_config_json(mcfg);
  manifest["training"] = train_config_json(tcfg);
  manifest["restarts"] = a.restarts;
  manifest["seed"] = a.seed;
  manifest["out_dir"] = a.out_dir;
  manifest["selected_restart"] = best_restart;
  save_json(a.out_dir + "/manifest.json", manifest);
  save_checkpoint(a.out_dir + "/checkpoint.bin", *best);

  std::cout << "kept restart " << best_restart << " (epoch " << best_report.best_epoch
            << ", val_loss " << best_report.best_val_loss << ", val_acc "
            << best_report.best_val_acc << "); checkpoint in " << a.out_dir << "\n";
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_path;
  std::string metric = "exact";
  std::size_t sentence_limit = 70;
  std::string out_path;
};

inline void run_eval(const EvalArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  const bool visual = model.config.visual_channels > 0;
  Dataset data = visual ? load_visual_dataset(a.data_path) : load_babi(a.data_path);
  if (data.empty()) throw InputError("dataset " + a.data_path + " has no examples");
  if (!visual)
    for (Example& ex : data) ex = truncate_context(ex, a.sentence_limit);

  double value = 0.0;
  if (a.metric == "exact") {
    value = evaluate(model, data).accuracy;
  } else if (a.metric == "vqa_consensus") {
    value = dataset_consensus_accuracy(model, data);
  } else {
    throw ConfigError("unknown metric: " + a.metric + " (expected exact or vqa_consensus)");
  }

  Json metrics{{"metric", a.metric},
               {"value", value},
               {"examples", data.size()},
               {"checkpoint", a.checkpoint},
               {"data", a.data_path}};
  if (!a.out_path.empty()) save_json(a.out_path, metrics);
  std::cout << a.metric << " accuracy: " << value << " over " << data.size() << " examples\n";
}

struct GradCheckArgs {
  bool corrupt = false;
  double eps = 1e-5;
  double tol = 1e-4;
};

namespace detail_gc {

// Small fixed corpus: enough distinct answers for a non-trivial loss.
inline Dataset probe_text_examples() {
  std::istringstream in(
      "1 mary went to the kitchen.\n"
      "2 john took the apple.\n"
      "3 john went to the garden.\n"
      "4 where is the apple?\tgarden\t2 3\n"
      "1 sandra took the milk.\n"
      "2 sandra went to the office.\n"
      "3 mary went to the hallway.\n"
      "4 where is the milk?\toffice\t1 2\n");
  return parse_babi(in);
}

inline Dataset probe_visual_examples() {
  Dataset out;
  Rng rng(97);
  for (int k = 0; k < 2; ++k) {
    auto grid = std::make_shared<FeatureGrid>();
    grid->height = 2;
    grid->width = 2;
    grid->channels = 3;
    grid->data.resize(12);
    for (float& f : grid->data)
      f = static_cast<float>(uniform_range(rng, -1.0, 1.0));
    Example ex;
    ex.grid = grid;
    ex.grid_path = "probe" + std::to_string(k);
    ex.question = {"what", "color", "is", "the", "square"};
    ex.answer = k == 0 ? "red" : "blue";
    ex.human_answers = {ex.answer};
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail_gc

// Exhaustive finite-difference sweep: every episodic configuration crossed
// with both input-module kinds, on both a 3-sentence story and a 4-cell
// feature grid. Returns true when every check lands the expected way.
inline bool run_gradcheck(const GradCheckArgs& a) {
  const Dataset text = detail_gc::probe_text_examples();
  const Dataset visual = detail_gc::probe_visual_examples();
  bool all_ok = true;
  unsigned seed = 1000;

  for (bool is_visual : {false, true}) {
    const Dataset& probe = is_visual ? visual : text;
    const VocabPair vocab = build_vocab(probe);
    for (InputKind input : {InputKind::word_gru, InputKind::fusion}) {
      for (AttentionKind att : {AttentionKind::soft, AttentionKind::attn_gru}) {
        for (UpdateKind upd : {UpdateKind::gru, UpdateKind::relu}) {
          for (bool untied : {false, true}) {
            ModelConfig cfg;
            cfg.embed_dim = 3;
            cfg.hidden = 3;
            cfg.attn_hidden = 2;
            cfg.passes = 2;
            cfg.input = input;
            cfg.attention = att;
            cfg.update = upd;
            cfg.untied = untied;
            cfg.visual_channels = is_visual ? 3 : 0;

            Model model(cfg, vocab);
            Rng rng(++seed);
            model.init(rng);

            auto report = grad_check(
                model.store,
                [&](Graph& g) {
                  g.tape().corrupt_tanh_backward = a.corrupt;
                  Rng unused(0);
                  Tensor total = model.loss(g, probe[0], false, unused, 1.0);
                  return add(total, model.loss(g, probe[1], false, unused, 1.0));
                },
                a.eps, a.tol);

            std::cout << (is_visual ? "visual " : "text   ") << input_kind_name(input) << ' '
                      << attention_kind_name(att) << ' ' << update_kind_name(upd) << ' '
                      << (untied ? "untied" : "tied") << ": " << report.summary() << "\n";
            if (!report.pass) all_ok = false;
          }
        }
      }
    }
  }
  std::cout << (all_ok ? "gradient check passed" : "gradient check FAILED") << "\n";
  return all_ok;
}

struct GatesArgs {
  std::string checkpoint;
  std::string data_path;
  std::string out_path;
  std::size_t limit = 0;
  std::size_t sentence_limit = 70;
};

inline void run_gates(const GatesArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  const bool visual = model.config.visual_channels > 0;
  Dataset data = visual ? load_visual_dataset(a.data_path) : load_babi(a.data_path);
  if (data.empty()) throw InputError("dataset " + a.data_path + " has no examples");
  if (!visual)
    for (Example& ex : data) ex = truncate_context(ex, a.sentence_limit);
  if (a.limit > 0 && data.size() > a.limit) data.resize(a.limit);

  std::ofstream out(a.out_path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + a.out_path);
  write_gates_csv(out, model, data);
  std::cout << "wrote gate activations for " << data.size() << " examples to " << a.out_path
            << "\n";
}

}  // namespace cli

inline int run_cli(int argc, char** argv) {
  CLI::App app{"episodic-memory question answering: data generation, training, evaluation"};
  app.require_subcommand(1);

  auto gen = std::make_shared<cli::GenerateArgs>();
  CLI::App* cmd_gen = app.add_subcommand("generate", "emit a synthetic story task dataset");
  cmd_gen->add_option("--family", gen->family, "single_fact, two_fact, yes_no, or counting")
      ->required();
  cmd_gen->add_option("--entities", gen->entities, "distinct actors (max 8)");
  cmd_gen->add_option("--locations", gen->locations, "distinct places (max 8)");
  cmd_gen->add_option("--story-len", gen->story_len, "sentences per story");
  cmd_gen->add_option("--n,--n-train", gen->n_train, "training examples");
  cmd_gen->add_option("--n-test", gen->n_test, "test examples");
  cmd_gen->add_option("--seed", gen->seed, "generator seed");
  cmd_gen->add_option("--out", gen->out_dir, "output directory")->required();
  cmd_gen->callback([gen] { cli::run_generate(*gen); });

  auto tr = std::make_shared<cli::TrainArgs>();
  CLI::App* cmd_tr = app.add_subcommand("train", "train a model and write a checkpoint");
  cmd_tr->add_option("--data", tr->data_path, "training dataset file")->required();
  cmd_tr->add_flag("--visual", tr->visual, "dataset lines are grid<TAB>question<TAB>answer");
  cmd_tr->add_option("--variant", tr->variant, "odmn, dmn2, dmn3, or dmn+ (default dmn+)");
  cmd_tr->add_option("--input", tr->input, "override input module: word_gru or fusion");
  cmd_tr->add_option("--attention", tr->attention, "override attention: soft or attn_gru");
  cmd_tr->add_option("--update", tr->update, "override memory update: gru or relu");
  cmd_tr->add_option("--tying", tr->tying, "override weight tying: tied or untied");
  cmd_tr->add_flag("--ablate-memory", tr->ablate_memory,
                   "answer head reads [q; q] instead of [q; m]");
  cmd_tr->add_flag("--separate-embeddings", tr->separate_embeddings,
                   "give the question encoder its own embedding table");
  cmd_tr->add_option("--dim", tr->dim, "embedding and hidden width (default 80)");
  cmd_tr->add_option("--embed-dim", tr->embed_dim, "override embedding width");
  cmd_tr->add_option("--hidden", tr->hidden, "override hidden width");
  cmd_tr->add_option("--attn-hidden", tr->attn_hidden, "attention scorer width (default hidden)");
  cmd_tr->add_option("--passes", tr->passes, "episodic passes T (default 3)");
  cmd_tr->add_option("--lr", tr->lr, "learning rate (default 0.001)");
  cmd_tr->add_option("--batch", tr->batch, "batch size (default 128)");
  cmd_tr->add_option("--epochs", tr->epochs, "epoch budget (default 256)");
  cmd_tr->add_option("--patience", tr->patience, "early-stop patience (default 20)");
  cmd_tr->add_option("--keep-prob", tr->keep_prob, "dropout keep probability (default 0.9)");
  cmd_tr->add_option("--l2", tr->l2, "l2 strength on non-bias weights (default 1e-5)");
  cmd_tr->add_option("--seed", tr->seed, "base seed");
  cmd_tr->add_option("--sentence-limit", tr->sentence_limit,
                     "keep only the last N context sentences (default 70)");
  cmd_tr->add_option("--restarts", tr->restarts, "independent runs, best validation kept");
  cmd_tr->add_option("--out", tr->out_dir, "output directory")->required();
  cmd_tr->callback([tr] { cli::run_train(*tr); });

  auto ev = std::make_shared<cli::EvalArgs>();
  CLI::App* cmd_ev = app.add_subcommand("eval", "score a checkpoint on a dataset");
  cmd_ev->add_option("--checkpoint", ev->checkpoint, "checkpoint file")->required();
  cmd_ev->add_option("--data", ev->data_path, "dataset file")->required();
  cmd_ev->add_option("--metric", ev->metric, "exact or vqa_consensus (default exact)");
  cmd_ev->add_option("--sentence-limit", ev->sentence_limit,
                     "context truncation for text data (default 70)");
  cmd_ev->add_option("--out", ev->out_path, "write metrics JSON here");
  cmd_ev->callback([ev] { cli::run_eval(*ev); });

  auto gc = std::make_shared<cli::GradCheckArgs>();
  CLI::App* cmd_gc = app.add_subcommand(
      "gradcheck", "finite-difference check over every model configuration");
  cmd_gc->add_flag("--corrupt", gc->corrupt, "inject a faulty tanh backward rule (must fail)");
  cmd_gc->add_option("--eps", gc->eps, "finite-difference step (default 1e-5)");
  cmd_gc->add_option("--tol", gc->tol, "max relative error (default 1e-4)");
  cmd_gc->callback([gc] {
    if (!cli::run_gradcheck(*gc)) throw TrainingFault("gradient check failed");
  });

  auto gt = std::make_shared<cli::GatesArgs>();
  CLI::App* cmd_gt = app.add_subcommand("gates", "dump attention gates to CSV");
  cmd_gt->add_option("--checkpoint", gt->checkpoint, "checkpoint file")->required();
  cmd_gt->add_option("--data", gt->data_path, "dataset file")->required();
  cmd_gt->add_option("--out", gt->out_path, "CSV output path")->required();
  cmd_gt->add_option("--limit", gt->limit, "only the first N examples (0 = all)");
  cmd_gt->add_option("--sentence-limit", gt->sentence_limit,
                     "context truncation for text data (default 70)");
  cmd_gt->callback([gt] { cli::run_gates(*gt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dmn
