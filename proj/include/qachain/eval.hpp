#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qachain/backends.hpp"
#include "qachain/chain.hpp"
#include "qachain/common.hpp"
#include "qachain/grammar.hpp"
#include "qachain/oracle.hpp"
#include "qachain/scene_gen.hpp"
#include "qachain/transcript.hpp"

namespace qachain {

struct QAItem {
  std::string scene_id;
  std::string question;
  std::string gold;
  enum class Form { closed, open } form = Form::closed;
};

// Surface -> canonical answer substitutions. Multiword entries fire before
// single tokens; canonical values must be fixed points.
class SynonymTable {
 public:
  Family family = Family::scene;

  static SynonymTable from_json(const nlohmann::json& j) {
    SynonymTable t;
    if (j.contains("family")) t.family = family_from_string(j.at("family").get<std::string>());
    const nlohmann::json& entries = j.contains("entries") ? j.at("entries") : j;
    for (auto it = entries.begin(); it != entries.end(); ++it) {
      t.entries_.emplace_back(to_lower(it.key()), to_lower(it.value().get<std::string>()));
    }
    // Longest (most tokens, then longest text) first.
    std::sort(t.entries_.begin(), t.entries_.end(), [](const auto& a, const auto& b) {
      size_t at = tokenize(a.first).size(), bt = tokenize(b.first).size();
      if (at != bt) return at > bt;
      if (a.first.size() != b.first.size()) return a.first.size() > b.first.size();
      return a.first < b.first;
    });
    t.validate();
    return t;
  }

  static SynonymTable load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open synonym table: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("synonym table parse failure in " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void validate() const;  // canonical values must normalize to themselves

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

namespace detail {

inline std::string normalize_pass(const std::string& text, const SynonymTable& table) {
  std::string s = collapse_ws(trim(to_lower(text)));
  while (!s.empty() && (s.back() == '.' || s.back() == '?' || s.back() == '!')) {
    s = trim(s.substr(0, s.size() - 1));
  }
  // Whole-answer match first.
  for (const auto& [from, to] : table.entries()) {
    if (s == from) return to;
  }
  // Then longest-match substitution over the token stream.
  std::vector<std::string> toks;
  {
    std::string cur;
    for (char c : s + " ") {
      if (c == ' ') {
        if (!cur.empty()) toks.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
  }
  std::vector<std::string> out;
  size_t i = 0;
  while (i < toks.size()) {
    bool replaced = false;
    for (const auto& [from, to] : table.entries()) {
      std::vector<std::string> ft = tokenize(from);
      if (ft.empty() || i + ft.size() > toks.size()) continue;
      bool match = true;
      for (size_t k = 0; k < ft.size(); ++k) {
        if (toks[i + k] != ft[k]) {
          match = false;
          break;
        }
      }
      // Hyphenated single-token entries ("x-ray") match the raw token too.
      if (!match && ft.size() == 1 && toks[i] == from) match = true;
      if (match) {
        out.push_back(to);
        i += std::max<size_t>(ft.size(), 1);
        replaced = true;
        break;
      }
    }
    if (!replaced) {
      out.push_back(toks[i]);
      ++i;
    }
  }
  return join(out);
}

}  // namespace detail

// Substitution can uncover a new match ("pa view view" -> "pa view"), so the
// pass repeats until the string stops changing. Idempotent by construction.
inline std::string normalize_answer(const std::string& text, const SynonymTable& table) {
  std::string s = detail::normalize_pass(text, table);
  for (int i = 0; i < 8; ++i) {
    std::string next = detail::normalize_pass(s, table);
    if (next == s) break;
    s = std::move(next);
  }
  return s;
}

inline void SynonymTable::validate() const {
  for (const auto& [from, to] : entries_) {
    if (from.empty()) throw ValidationError("empty synonym key");
    std::string fixed = normalize_answer(to, *this);
    if (fixed != to)
      throw ValidationError("synonym chain: '" + from + "' -> '" + to + "' -> '" + fixed + "'");
  }
}

struct EvalRecord {
  QAItem item;
  std::string prediction;
  std::string normalized_pred;
  std::string normalized_gold;
  bool correct = false;
  std::string dialogue_ref;
  std::optional<std::string> error_tag;  // llm_reasoning | vqa_wrong | template_insufficient | other
};

inline EvalRecord make_record(const QAItem& item, const std::string& prediction,
                              const SynonymTable& table, const std::string& dialogue_ref = "") {
  EvalRecord r;
  r.item = item;
  r.prediction = prediction;
  r.normalized_pred = normalize_answer(prediction, table);
  r.normalized_gold = normalize_answer(item.gold, table);
  r.correct = r.normalized_pred == r.normalized_gold;
  r.dialogue_ref = dialogue_ref;
  return r;
}

struct EvalReport {
  size_t n = 0;
  double accuracy = 0.0;
  std::map<std::string, size_t> tag_counts;
  nlohmann::ordered_json fingerprint;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["n"] = n;
    j["accuracy"] = accuracy;
    j["tag_counts"] = tag_counts;
    j["fingerprint"] = fingerprint;
    return j;
  }
};

inline EvalReport exact_match(const std::vector<EvalRecord>& records,
                              nlohmann::ordered_json fingerprint = {}) {
  if (records.empty()) throw UsageError("exact_match requires at least one record");
  EvalReport report;
  report.n = records.size();
  size_t correct = 0;
  for (const auto& r : records) {
    if (r.correct) ++correct;
    if (r.error_tag) ++report.tag_counts[*r.error_tag];
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  report.fingerprint = std::move(fingerprint);
  return report;
}

// ---------------------------------------------------------------------------
// Dataset ingestion

struct Dataset {
  std::map<std::string, SceneGraph> scenes;
  std::vector<QAItem> items;           // items whose scene_id resolved
  std::vector<std::string> rejected;   // human-readable rejection report
};

inline std::vector<QAItem> load_qa_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open QA file: " + path.string());
  std::vector<QAItem> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("QA file line " + std::to_string(lineno) + ": " + e.what());
    }
    QAItem item;
    item.scene_id = j.at("scene_id").get<std::string>();
    item.question = j.at("question").get<std::string>();
    item.gold = j.at("answer").get<std::string>();
    if (item.gold.empty())
      throw IngestError("QA file line " + std::to_string(lineno) + ": empty gold answer");
    item.form = j.value("form", std::string("closed")) == "open" ? QAItem::Form::open
                                                                 : QAItem::Form::closed;
    out.push_back(std::move(item));
  }
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& scenes_path,
                            const std::filesystem::path& qa_path,
                            const GrammarSpec* spec = nullptr) {
  Dataset ds;
  for (auto& [id, scene] : load_scene_set(scenes_path, spec)) {
    ds.scenes.insert_or_assign(id, std::move(scene));
  }
  for (auto& item : load_qa_file(qa_path)) {
    if (ds.scenes.count(item.scene_id) == 0) {
      ds.rejected.push_back("question '" + item.question + "' references unknown scene_id '" +
                            item.scene_id + "'");
      continue;
    }
    ds.items.push_back(std::move(item));
  }
  return ds;
}

// Seeded subset sampler for evaluating on a fraction of a large QA set.
inline std::vector<QAItem> sample_fraction(const std::vector<QAItem>& items, double fraction,
                                           std::uint64_t seed) {
  if (fraction >= 1.0) return items;
  size_t want = static_cast<size_t>(static_cast<double>(items.size()) * fraction + 0.5);
  if (want == 0 && !items.empty()) want = 1;
  std::vector<size_t> idx(items.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<size_t>(rng.below(i))]);
  }
  idx.resize(want);
  std::sort(idx.begin(), idx.end());
  std::vector<QAItem> out;
  for (size_t i : idx) out.push_back(items[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  int budget = 0;
  AblationFlags flags;
  size_t exemplar_count = 0;
  bool complete = false;
  std::string error;
  EvalReport report;
  std::vector<EvalRecord> records;
  std::vector<Dialogue> dialogues;
};

struct SweepConfig {
  std::vector<int> budgets{20};
  std::vector<AblationFlags> flags_list{AblationFlags{}};
  std::vector<size_t> exemplar_counts{0};
  std::vector<std::string> exemplar_pool;
  size_t jobs = 1;
  std::optional<std::filesystem::path> out_dir;
};

inline nlohmann::ordered_json cell_fingerprint(const SweepCell& cell, const std::string& llm_kind,
                                               const std::string& vqa_kind) {
  nlohmann::ordered_json j;
  j["budget"] = cell.budget;
  j["euh_enabled"] = cell.flags.euh_enabled;
  j["stepwise"] = cell.flags.stepwise;
  j["format_constrained"] = cell.flags.format_constrained;
  j["exemplars"] = cell.exemplar_count;
  j["llm_backend"] = llm_kind;
  j["vqa_backend"] = vqa_kind;
  j["normalize_gold"] = true;  // both sides are normalized before comparison
  return j;
}

inline std::vector<SweepCell> run_sweep(const Dataset& dataset, const GrammarSpec& spec,
                                        const SynonymTable& table, LlmClient& llm, VqaClient& vqa,
                                        const SweepConfig& cfg,
                                        const std::string& llm_kind = "scripted",
                                        const std::string& vqa_kind = "oracle") {
  if (dataset.items.empty()) throw UsageError("run_sweep requires a non-empty dataset");
  std::vector<SweepCell> cells;
  for (int budget : cfg.budgets) {
    for (const auto& flags : cfg.flags_list) {
      for (size_t nex : cfg.exemplar_counts) {
        SweepCell cell;
        cell.budget = budget;
        cell.flags = flags;
        cell.exemplar_count = nex;
        cells.push_back(std::move(cell));
      }
    }
  }

  for (auto& cell : cells) {
    std::vector<std::string> exemplars(cfg.exemplar_pool.begin(),
                                       cfg.exemplar_pool.begin() +
                                           static_cast<long>(std::min(cell.exemplar_count,
                                                                      cfg.exemplar_pool.size())));
    size_t n = dataset.items.size();
    cell.dialogues.resize(n);
    cell.records.resize(n);
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mu;
    auto worker = [&] {
      while (true) {
        size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) break;
        const QAItem& item = dataset.items[i];
        try {
          TaskInstruction ins =
              build_instruction(item.question, spec, cell.budget, exemplars, cell.flags);
          Dialogue d = run_chain(ins, item.scene_id, llm, vqa, spec);
          std::string prediction = d.final_answer.value_or("");
          cell.dialogues[i] = d;
          cell.records[i] = make_record(item, prediction, table,
                                        item.scene_id + "#" + std::to_string(i));
        } catch (const Error& e) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!failed.exchange(true)) first_error = e.what();
        }
      }
    };
    size_t jobs = std::max<size_t>(1, cfg.jobs);
    std::vector<std::thread> pool;
    for (size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    if (failed.load()) {
      cell.complete = false;
      cell.error = first_error;
      continue;
    }
    cell.complete = true;
    cell.report = exact_match(cell.records, cell_fingerprint(cell, llm_kind, vqa_kind));

    if (cfg.out_dir) {
      std::filesystem::create_directories(*cfg.out_dir);
      std::string tag = "b" + std::to_string(cell.budget) +
                        (cell.flags.euh_enabled ? "" : "_noeuh") +
                        (cell.flags.stepwise ? "" : "_allatonce") +
                        (cell.flags.format_constrained ? "" : "_noformat") + "_ex" +
                        std::to_string(cell.exemplar_count);
      std::ofstream tf(*cfg.out_dir / ("transcripts_" + tag + ".jsonl"));
      for (const auto& d : cell.dialogues) tf << transcript_line(d, spec) << "\n";
      std::ofstream rf(*cfg.out_dir / ("report_" + tag + ".json"));
      rf << cell.report.to_json().dump(2) << "\n";
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// LLM-as-judge interface for open-form answers

struct JudgeError : Error {
  using Error::Error;
};

inline constexpr const char* kDefaultJudgePrompt =
    "Rate whether the candidate answer matches the reference answer for the question.\n"
    "Question: {question}\nReference answer: {gold}\nCandidate answer: {prediction}\n"
    "Reply with a score between 0 and 1 in braces, e.g. {0.5}.";

inline double judge_open_form(const QAItem& item, const std::string& prediction, LlmClient& judge,
                              const std::string& prompt_template = kDefaultJudgePrompt) {
  if (item.form != QAItem::Form::open)
    throw UsageError("judge_open_form requires an open-form item");
  std::string prompt = prompt_template;
  auto sub = [&](const std::string& ph, const std::string& val) {
    size_t pos;
    while ((pos = prompt.find(ph)) != std::string::npos) prompt.replace(pos, ph.size(), val);
  };
  sub("{question}", item.question);
  sub("{gold}", item.gold);
  sub("{prediction}", prediction);
  std::string reply = judge.complete({{"system", prompt}});
  auto fa = detect_final_answer(reply);
  std::string span = fa ? fa->value : trim(reply);
  try {
    size_t consumed = 0;
    double score = std::stod(span, &consumed);
    if (consumed != span.size()) throw JudgeError("trailing text in judge score: " + span);
    if (score < 0.0 || score > 1.0)
      throw JudgeError("judge score out of range: " + span);
    return score;
  } catch (const std::invalid_argument&) {
    throw JudgeError("unparseable judge output: " + reply);
  } catch (const std::out_of_range&) {
    throw JudgeError("unparseable judge output: " + reply);
  }
}

}  // namespace qachain
