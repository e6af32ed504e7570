#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmn/errors.hpp"
#include "dmn/model.hpp"
#include "dmn/train.hpp"
#include "dmn/visual.hpp"

namespace dmn {

using Json = nlohmann::json;

inline Json model_config_json(const ModelConfig& cfg) {
  return Json{{"embed_dim", cfg.embed_dim},
              {"hidden", cfg.hidden},
              {"attn_hidden", cfg.attn_hidden},
              {"passes", cfg.passes},
              {"input", input_kind_name(cfg.input)},
              {"attention", attention_kind_name(cfg.attention)},
              {"update", update_kind_name(cfg.update)},
              {"untied", cfg.untied},
              {"shared_embeddings", cfg.shared_embeddings},
              {"ablate_memory", cfg.ablate_memory},
              {"visual_channels", cfg.visual_channels}};
}

inline ModelConfig model_config_from_json(const Json& j) {
  ModelConfig cfg;
  cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
  cfg.hidden = j.at("hidden").get<std::size_t>();
  cfg.attn_hidden = j.at("attn_hidden").get<std::size_t>();
  cfg.passes = j.at("passes").get<std::size_t>();
  cfg.input = input_kind_from_name(j.at("input").get<std::string>());
  cfg.attention = attention_kind_from_name(j.at("attention").get<std::string>());
  cfg.update = update_kind_from_name(j.at("update").get<std::string>());
  cfg.untied = j.at("untied").get<bool>();
  cfg.shared_embeddings = j.at("shared_embeddings").get<bool>();
  cfg.ablate_memory = j.at("ablate_memory").get<bool>();
  cfg.visual_channels = j.at("visual_channels").get<std::size_t>();
  return cfg;
}

inline Json train_config_json(const TrainConfig& cfg) {
  return Json{{"lr", cfg.lr},
              {"batch_size", cfg.batch_size},
              {"max_epochs", cfg.max_epochs},
              {"patience", cfg.patience},
              {"l2_strength", cfg.l2_strength},
              {"keep_p", cfg.keep_p},
              {"seed", cfg.seed},
              {"sentence_limit", cfg.sentence_limit}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  cfg.lr = j.at("lr").get<double>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.max_epochs = j.at("max_epochs").get<std::size_t>();
  cfg.patience = j.at("patience").get<std::size_t>();
  cfg.l2_strength = j.at("l2_strength").get<double>();
  cfg.keep_p = j.at("keep_p").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.sentence_limit = j.at("sentence_limit").get<std::size_t>();
  return cfg;
}

namespace detail {

constexpr char kCheckpointMagic[4] = {'D', 'M', 'N', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw FormatError("checkpoint: truncated value data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw FormatError("checkpoint: truncated string");
  return s;
}

}  // namespace detail

// Versioned binary checkpoint: magic, version, a JSON header with the model
// configuration and vocabularies, then every named parameter tensor.
inline void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path);

  Json header;
  header["model"] = model_config_json(model.config);
  header["tokens"] = model.vocab.input.tokens();
  header["answers"] = model.vocab.answers;

  out.write(detail::kCheckpointMagic, 4);
  detail::write_u32(out, detail::kCheckpointVersion);
  detail::write_string(out, header.dump());
  detail::write_u32(out, static_cast<std::uint32_t>(model.store.count()));
  for (const Param& p : model.store.all()) {
    detail::write_string(out, p.name);
    detail::write_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.values) detail::write_f64(out, v);
  }
  if (!out) throw FormatError("checkpoint: write failed for " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::read_u32(in);
  if (version != detail::kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));

  Json header;
  try {
    header = Json::parse(detail::read_string(in));
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }

  VocabPair vocab;
  const auto tokens = header.at("tokens").get<std::vector<std::string>>();
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
    throw FormatError("checkpoint: vocabulary does not start with reserved tokens");
  for (std::size_t i = 2; i < tokens.size(); ++i) vocab.input.add(tokens[i]);
  vocab.answers = header.at("answers").get<std::vector<std::string>>();

  Model model(model_config_from_json(header.at("model")), std::move(vocab));

  const std::uint32_t n_params = detail::read_u32(in);
  if (n_params != model.store.count())
    throw FormatError("checkpoint: expected " + std::to_string(model.store.count()) +
                      " parameters, file has " + std::to_string(n_params));
  for (std::uint32_t k = 0; k < n_params; ++k) {
    const std::string name = detail::read_string(in);
    const std::uint32_t rank = detail::read_u32(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::read_u32(in);
    Param& p = model.store.at(model.store.id_of(name));
    if (p.value.shape != shape)
      throw FormatError("checkpoint: shape mismatch for parameter " + name);
    for (double& v : p.value.values) v = detail::read_f64(in);
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("checkpoint: trailing bytes in " + path);
  return model;
}

inline void save_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// One JSON record per line, one line per epoch, restart-tagged.
inline void append_report(std::ostream& out, std::size_t restart, const TrainReport& report) {
  for (const EpochRecord& rec : report.epochs) {
    Json line{{"restart", restart},
              {"epoch", rec.epoch},
              {"train_loss", rec.train_loss},
              {"val_loss", rec.val_loss},
              {"val_acc", rec.val_acc}};
    out << line.dump() << '\n';
  }
}

// Gate activations as CSV for attention inspection. Text rows carry the fact
// index; visual rows add the grid cell recovered from the snake traversal.
inline void write_gates_csv(std::ostream& out, const Model& model, const Dataset& data) {
  const bool visual = model.config.visual_channels > 0;
  out << (visual ? "example_id,pass,fact,row,col,gate\n" : "example_id,pass,fact,gate\n");
  out << std::setprecision(17);
  Rng unused(0);
  for (std::size_t e = 0; e < data.size(); ++e) {
    Graph g(const_cast<ParamStore&>(model.store));
    ModelOutput mo = model.forward(g, data[e], /*training=*/false, unused, 1.0);
    for (std::size_t t = 0; t < mo.history.records.size(); ++t) {
      const Tensor& gates = mo.history.records[t].gates;
      for (std::size_t i = 0; i < gates.size(); ++i) {
        out << e << ',' << (t + 1) << ',' << i;
        if (visual) {
          auto [r, c] = snake_position(data[e].grid->height, data[e].grid->width, i);
          out << ',' << r << ',' << c;
        }
        out << ',' << gates[i] << '\n';
      }
    }
  }
}

}  // namespace dmn
