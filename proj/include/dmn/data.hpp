#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmn/encoding.hpp"
#include "dmn/errors.hpp"
#include "dmn/params.hpp"
#include "dmn/visual.hpp"

namespace dmn {

using Words = std::vector<std::string>;

// One question with its evidence: either a list of context sentences or a
// feature grid. Supporting ids are 1-based positions into the context,
// carried for diagnostics only.
struct Example {
  std::vector<Words> context;
  Words question;
  std::string answer;
  std::vector<std::string> human_answers;  // consensus multiset; singleton otherwise
  std::vector<std::size_t> supporting;
  std::string grid_path;
  std::shared_ptr<FeatureGrid> grid;

  bool operator==(const Example& o) const {
    return context == o.context && question == o.question && answer == o.answer &&
           human_answers == o.human_answers && supporting == o.supporting &&
           grid_path == o.grid_path;
  }
};

using Dataset = std::vector<Example>;

namespace detail {

inline bool terminal_punct(char c) {
  return c == '.' || c == '?' || c == '!' || c == ',' || c == ';' || c == ':';
}

inline std::string lowercased(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string trimmed(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// Whitespace split, trailing punctuation stripped per token, lowercased.
inline Words tokenize(const std::string& text) {
  Words out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    while (!tok.empty() && detail::terminal_punct(tok.back())) tok.pop_back();
    if (tok.empty()) continue;
    out.push_back(detail::lowercased(tok));
  }
  return out;
}

namespace detail {

// A '|'-separated answer field is a human-consensus multiset; the example's
// single label is its most frequent element, ties going to the smaller
// string. Plain answers become their own singleton multiset, with internal
// whitespace joined by commas.
inline void parse_answer_field(const std::string& field, std::size_t line_no, Example& ex) {
  if (field.find('|') != std::string::npos) {
    for (const std::string& part : split(field, '|')) {
      std::string a = lowercased(trimmed(part));
      if (a.empty()) throw ParseError("empty answer in consensus list", line_no);
      ex.human_answers.push_back(a);
    }
    std::map<std::string, std::size_t> counts;
    for (const std::string& a : ex.human_answers) ++counts[a];
    std::size_t best = 0;
    for (const auto& [a, n] : counts) {
      if (n > best) {
        best = n;
        ex.answer = a;  // map iteration is sorted, so ties keep the smaller
      }
    }
    return;
  }
  Words parts = tokenize(field);
  if (parts.empty()) throw ParseError("missing answer", line_no);
  std::string joined = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) joined += "," + parts[i];
  ex.answer = joined;
  ex.human_answers = {joined};
}

}  // namespace detail

// Story text format: "ID sentence." fact lines and
// "ID question?\tanswer\tsupporting-ids" question lines. An ID of 1 starts a
// new story; IDs must increase inside one. Every question line yields one
// Example whose context is all story sentences so far.
inline Dataset parse_babi(std::istream& in) {
  Dataset out;
  std::vector<Words> context;
  std::unordered_map<long, std::size_t> id_to_pos;
  long last_id = 0;
  std::string line;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trimmed(line).empty()) continue;

    std::istringstream ss(line);
    long id = 0;
    if (!(ss >> id)) throw ParseError("expected leading line id", line_no);
    std::string rest;
    std::getline(ss, rest);
    rest = rest.empty() ? rest : rest.substr(rest.find_first_not_of(' '));

    if (id == 1) {
      context.clear();
      id_to_pos.clear();
      last_id = 0;
    } else if (id <= last_id) {
      throw ParseError("line id " + std::to_string(id) + " does not increase", line_no);
    }
    last_id = id;

    if (rest.find('\t') == std::string::npos) {
      Words sent = tokenize(rest);
      if (sent.empty()) throw ParseError("empty sentence", line_no);
      context.push_back(std::move(sent));
      id_to_pos[id] = context.size() - 1;
      continue;
    }

    auto fields = detail::split(rest, '\t');
    if (fields.size() < 2) throw ParseError("question without answer field", line_no);
    Example ex;
    ex.question = tokenize(fields[0]);
    if (ex.question.empty()) throw ParseError("empty question", line_no);
    if (context.empty()) throw ParseError("question before any facts", line_no);
    ex.context = context;
    detail::parse_answer_field(detail::trimmed(fields[1]), line_no, ex);
    if (fields.size() >= 3 && !detail::trimmed(fields[2]).empty()) {
      std::istringstream sup(fields[2]);
      long sid;
      while (sup >> sid) {
        auto it = id_to_pos.find(sid);
        if (it == id_to_pos.end())
          throw ParseError("supporting id " + std::to_string(sid) + " is not a story sentence",
                           line_no);
        ex.supporting.push_back(it->second + 1);
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline Dataset load_babi(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset " + path);
  return parse_babi(in);
}

// Serializes each example as its own story in the format parse_babi reads;
// parsing the output reproduces the examples exactly.
inline void write_babi(std::ostream& out, const Dataset& data) {
  for (const Example& ex : data) {
    std::size_t id = 1;
    for (const Words& sent : ex.context) {
      out << id++;
      for (const std::string& w : sent) out << ' ' << w;
      out << ".\n";
    }
    out << id;
    for (const std::string& w : ex.question) out << ' ' << w;
    out << "?\t";
    if (ex.human_answers.size() > 1) {
      for (std::size_t i = 0; i < ex.human_answers.size(); ++i)
        out << (i ? "|" : "") << ex.human_answers[i];
    } else {
      out << ex.answer;
    }
    if (!ex.supporting.empty()) {
      out << '\t';
      for (std::size_t i = 0; i < ex.supporting.size(); ++i)
        out << (i ? " " : "") << ex.supporting[i];
    }
    out << '\n';
  }
}

inline void save_babi(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write dataset " + path);
  write_babi(out, data);
}

// Keeps the last `limit` context sentences; supporting positions shift with
// the cut and vanish if they point into the dropped prefix.
inline Example truncate_context(const Example& ex, std::size_t limit) {
  if (limit == 0) throw InputError("truncate_context: limit must be positive");
  if (ex.context.size() <= limit) return ex;
  Example out = ex;
  const std::size_t drop = ex.context.size() - limit;
  out.context.assign(ex.context.begin() + static_cast<std::ptrdiff_t>(drop), ex.context.end());
  out.supporting.clear();
  for (std::size_t pos : ex.supporting)
    if (pos > drop) out.supporting.push_back(pos - drop);
  return out;
}

enum class TaskFamily { single_fact, two_fact, yes_no, counting };

inline TaskFamily task_family_from_name(const std::string& name) {
  if (name == "single_fact") return TaskFamily::single_fact;
  if (name == "two_fact") return TaskFamily::two_fact;
  if (name == "yes_no") return TaskFamily::yes_no;
  if (name == "counting") return TaskFamily::counting;
  throw ConfigError("unknown task family: " + name);
}

inline std::string task_family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::single_fact: return "single_fact";
    case TaskFamily::two_fact: return "two_fact";
    case TaskFamily::yes_no: return "yes_no";
    case TaskFamily::counting: return "counting";
  }
  throw ConfigError("unknown task family");
}

struct TaskSpec {
  TaskFamily family = TaskFamily::single_fact;
  std::size_t entities = 4;
  std::size_t locations = 4;
  std::size_t story_len = 8;
  std::size_t n_train = 1000;
  std::size_t n_test = 200;
  std::uint64_t seed = 1;
};

namespace detail {

inline const std::vector<std::string>& name_pool() {
  static const std::vector<std::string> v = {"mary", "john",  "sandra", "daniel",
                                             "emily", "peter", "hannah", "bill"};
  return v;
}
inline const std::vector<std::string>& location_pool() {
  static const std::vector<std::string> v = {"bathroom", "kitchen", "garden", "office",
                                             "hallway",  "bedroom", "park",   "school"};
  return v;
}
inline const std::vector<std::string>& move_verbs() {
  static const std::vector<std::string> v = {"moved", "went", "journeyed"};
  return v;
}
inline const std::vector<std::string>& object_pool() {
  static const std::vector<std::string> v = {"apple", "football", "milk"};
  return v;
}

inline std::size_t draw(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

struct StoryState {
  std::vector<Words> lines;
  // entity name -> (last location, 1-based line of that move)
  std::map<std::string, std::pair<std::string, std::size_t>> at;

  void move(Rng& rng, const std::string& who, const std::vector<std::string>& locs) {
    const std::string& loc = locs[draw(rng, locs.size())];
    const std::string& verb = move_verbs()[draw(rng, move_verbs().size())];
    lines.push_back({who, verb, "to", "the", loc});
    at[who] = {loc, lines.size()};
  }
};

}  // namespace detail

inline void validate_task_spec(const TaskSpec& spec) {
  if (spec.entities == 0 || spec.entities > detail::name_pool().size())
    throw ConfigError("task spec: entities must be 1.." +
                      std::to_string(detail::name_pool().size()));
  if (spec.locations == 0 || spec.locations > detail::location_pool().size())
    throw ConfigError("task spec: locations must be 1.." +
                      std::to_string(detail::location_pool().size()));
  std::size_t min_len = 1;
  if (spec.family == TaskFamily::two_fact) min_len = 2;
  if (spec.story_len < min_len)
    throw ConfigError("task spec: story length " + std::to_string(spec.story_len) +
                      " cannot hold the " + std::to_string(min_len) + " facts this family needs");
  if (spec.family == TaskFamily::yes_no && spec.locations < 2)
    throw ConfigError("task spec: yes_no needs at least 2 locations");
  if (spec.family == TaskFamily::two_fact && spec.entities < 2)
    throw ConfigError("task spec: two_fact needs at least 2 entities");
}

namespace detail {

inline Example gen_single_fact(Rng& rng, const TaskSpec& spec) {
  const auto names = std::vector<std::string>(name_pool().begin(),
                                              name_pool().begin() + spec.entities);
  const auto locs = std::vector<std::string>(location_pool().begin(),
                                             location_pool().begin() + spec.locations);
  StoryState st;
  for (std::size_t i = 0; i < spec.story_len; ++i) st.move(rng, names[draw(rng, names.size())], locs);

  std::vector<std::string> movers;
  for (const auto& [who, _] : st.at) movers.push_back(who);
  const std::string& who = movers[draw(rng, movers.size())];

  Example ex;
  ex.context = st.lines;
  ex.question = {"where", "is", who};
  ex.answer = st.at[who].first;
  ex.human_answers = {ex.answer};
  ex.supporting = {st.at[who].second};
  return ex;
}

inline Example gen_two_fact(Rng& rng, const TaskSpec& spec) {
  const auto names = std::vector<std::string>(name_pool().begin(),
                                              name_pool().begin() + spec.entities);
  const auto locs = std::vector<std::string>(location_pool().begin(),
                                             location_pool().begin() + spec.locations);
  const auto& objects = object_pool();

  const std::string holder = names[draw(rng, names.size())];
  const std::string object = objects[draw(rng, objects.size())];

  // Reserve one slot for the grab and one for a guaranteed move by the
  // holder, then fill the rest with distractor moves.
  const std::size_t grab_pos = draw(rng, spec.story_len);
  std::size_t holder_move_pos = draw(rng, spec.story_len);
  while (holder_move_pos == grab_pos) holder_move_pos = draw(rng, spec.story_len);

  // Optional distractor: someone else picks up a different object.
  std::size_t distractor_pos = spec.story_len;  // off the end = absent
  if (spec.story_len >= 4) {
    distractor_pos = draw(rng, spec.story_len);
    while (distractor_pos == grab_pos || distractor_pos == holder_move_pos)
      distractor_pos = draw(rng, spec.story_len);
  }

  StoryState st;
  std::size_t grab_line = 0;
  for (std::size_t i = 0; i < spec.story_len; ++i) {
    if (i == grab_pos) {
      st.lines.push_back({holder, "grabbed", "the", object});
      grab_line = st.lines.size();
    } else if (i == holder_move_pos) {
      st.move(rng, holder, locs);
    } else if (i == distractor_pos) {
      std::string other = names[draw(rng, names.size())];
      while (other == holder) other = names[draw(rng, names.size())];
      std::string other_obj = objects[draw(rng, objects.size())];
      while (other_obj == object) other_obj = objects[draw(rng, objects.size())];
      st.lines.push_back({other, "grabbed", "the", other_obj});
    } else {
      st.move(rng, names[draw(rng, names.size())], locs);
    }
  }

  Example ex;
  ex.context = st.lines;
  ex.question = {"where", "is", "the", object};
  ex.answer = st.at[holder].first;
  ex.human_answers = {ex.answer};
  ex.supporting = {grab_line, st.at[holder].second};
  std::sort(ex.supporting.begin(), ex.supporting.end());
  return ex;
}

inline Example gen_yes_no(Rng& rng, const TaskSpec& spec) {
  Example base = gen_single_fact(rng, spec);
  const auto locs = std::vector<std::string>(location_pool().begin(),
                                             location_pool().begin() + spec.locations);
  const std::string who = base.question[2];
  const std::string truth = base.answer;

  Example ex;
  ex.context = base.context;
  ex.supporting = base.supporting;
  std::string asked;
  if (draw(rng, 2) == 0) {
    asked = truth;
    ex.answer = "yes";
  } else {
    asked = locs[draw(rng, locs.size())];
    while (asked == truth) asked = locs[draw(rng, locs.size())];
    ex.answer = "no";
  }
  ex.question = {"is", who, "in", "the", asked};
  ex.human_answers = {ex.answer};
  return ex;
}

inline Example gen_counting(Rng& rng, const TaskSpec& spec) {
  const auto names = std::vector<std::string>(name_pool().begin(),
                                              name_pool().begin() + spec.entities);
  const auto locs = std::vector<std::string>(location_pool().begin(),
                                             location_pool().begin() + spec.locations);
  const auto& objects = object_pool();

  StoryState st;
  std::map<std::string, std::string> held_by;  // object -> entity
  std::map<std::string, std::vector<std::size_t>> events;  // entity -> event lines

  for (std::size_t i = 0; i < spec.story_len; ++i) {
    const std::string& who = names[draw(rng, names.size())];
    std::vector<std::string> unheld, carried;
    for (const std::string& o : objects) {
      auto it = held_by.find(o);
      if (it == held_by.end())
        unheld.push_back(o);
      else if (it->second == who)
        carried.push_back(o);
    }
    const bool can_take = !unheld.empty();
    const bool can_drop = !carried.empty();
    if (can_take && (!can_drop || draw(rng, 2) == 0)) {
      const std::string& o = unheld[draw(rng, unheld.size())];
      st.lines.push_back({who, "took", "the", o});
      held_by[o] = who;
      events[who].push_back(st.lines.size());
    } else if (can_drop) {
      const std::string& o = carried[draw(rng, carried.size())];
      st.lines.push_back({who, "discarded", "the", o});
      held_by.erase(o);
      events[who].push_back(st.lines.size());
    } else {
      st.move(rng, who, locs);
    }
  }

  const std::string& who = names[draw(rng, names.size())];
  std::size_t count = 0;
  for (const auto& [o, e] : held_by)
    if (e == who) ++count;

  Example ex;
  ex.context = st.lines;
  ex.question = {"how", "many", "objects", "is", who, "carrying"};
  ex.answer = std::to_string(count);
  ex.human_answers = {ex.answer};
  ex.supporting = events[who];
  return ex;
}

}  // namespace detail

struct GeneratedData {
  Dataset train;
  Dataset test;
};

// Deterministic for a given spec: train then test examples are drawn from
// one seeded stream.
inline GeneratedData generate_task(const TaskSpec& spec) {
  validate_task_spec(spec);
  Rng rng(spec.seed);
  auto gen_one = [&]() {
    switch (spec.family) {
      case TaskFamily::single_fact: return detail::gen_single_fact(rng, spec);
      case TaskFamily::two_fact: return detail::gen_two_fact(rng, spec);
      case TaskFamily::yes_no: return detail::gen_yes_no(rng, spec);
      case TaskFamily::counting: return detail::gen_counting(rng, spec);
    }
    throw ConfigError("unknown task family");
  };
  GeneratedData out;
  out.train.reserve(spec.n_train);
  out.test.reserve(spec.n_test);
  for (std::size_t i = 0; i < spec.n_train; ++i) out.train.push_back(gen_one());
  for (std::size_t i = 0; i < spec.n_test; ++i) out.test.push_back(gen_one());
  return out;
}

// Sorted input vocabulary and sorted answer label list; answers live in
// their own space because the answer head indexes them directly.
struct VocabPair {
  Vocabulary input;
  std::vector<std::string> answers;

  std::size_t answer_index(const std::string& label) const {
    auto it = std::lower_bound(answers.begin(), answers.end(), label);
    if (it == answers.end() || *it != label)
      throw ConfigError("answer label not in vocabulary: " + label);
    return static_cast<std::size_t>(it - answers.begin());
  }

  bool has_answer(const std::string& label) const {
    return std::binary_search(answers.begin(), answers.end(), label);
  }
};

inline VocabPair build_vocab(const Dataset& examples) {
  if (examples.empty()) throw InputError("build_vocab: empty example set");
  std::set<std::string> toks, ans;
  for (const Example& ex : examples) {
    for (const Words& sent : ex.context)
      for (const std::string& w : sent) toks.insert(w);
    for (const std::string& w : ex.question) toks.insert(w);
    ans.insert(ex.answer);
  }
  VocabPair out;
  for (const std::string& t : toks) out.input.add(t);
  out.answers.assign(ans.begin(), ans.end());
  return out;
}

// Visual dataset: one example per line, "grid-path<TAB>question<TAB>answer".
// Grid paths are resolved relative to the dataset file; each distinct grid
// loads once and is shared.
inline Dataset load_visual_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset " + path);
  std::string dir;
  const std::size_t cut = path.find_last_of('/');
  if (cut != std::string::npos) dir = path.substr(0, cut + 1);

  Dataset out;
  std::unordered_map<std::string, std::shared_ptr<FeatureGrid>> cache;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trimmed(line).empty()) continue;
    auto fields = detail::split(line, '\t');
    if (fields.size() < 3) throw ParseError("expected grid<TAB>question<TAB>answer", line_no);
    Example ex;
    ex.grid_path = detail::trimmed(fields[0]);
    if (ex.grid_path.empty()) throw ParseError("empty grid path", line_no);
    ex.question = tokenize(fields[1]);
    if (ex.question.empty()) throw ParseError("empty question", line_no);
    detail::parse_answer_field(detail::trimmed(fields[2]), line_no, ex);

    const std::string full =
        ex.grid_path.front() == '/' ? ex.grid_path : dir + ex.grid_path;
    auto it = cache.find(full);
    if (it == cache.end())
      it = cache.emplace(full, std::make_shared<FeatureGrid>(load_feature_grid(full))).first;
    ex.grid = it->second;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace dmn
