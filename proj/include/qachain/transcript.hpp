#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qachain/chain.hpp"
#include "qachain/common.hpp"
#include "qachain/grammar.hpp"

namespace qachain {

// One JSONL record per dialogue, with a stable field order so transcripts can
// be golden-file tested byte for byte.
inline nlohmann::ordered_json dialogue_to_json(const Dialogue& d, const GrammarSpec& spec) {
  nlohmann::ordered_json j;
  j["scene_id"] = d.scene_id;
  j["user_question"] = d.instruction.user_question;
  j["instruction_hash"] = hex64(fnv1a64(d.instruction.text));
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : d.turns) {
    nlohmann::ordered_json jt;
    jt["index"] = t.index;
    jt["asked"] = t.asked;
    if (t.parsed) jt["parsed"] = render_question(*t.parsed, spec);
    if (t.euh_trace) {
      jt["euh_trace"] = {{"existence_q", t.euh_trace->existence_q},
                         {"existence_a", t.euh_trace->existence_a},
                         {"uniqueness_q", t.euh_trace->uniqueness_q},
                         {"uniqueness_a", t.euh_trace->uniqueness_a}};
    }
    jt["reply"] = t.reply;
    if (t.rejected) jt["rejected"] = true;
    j["turns"].push_back(std::move(jt));
  }
  j["status"] = status_to_string(d.status);
  if (d.final_answer) j["final_answer"] = *d.final_answer;
  if (d.format_warning) j["format_warning"] = true;
  if (d.why_explanation) j["why"] = *d.why_explanation;
  return j;
}

inline std::string transcript_line(const Dialogue& d, const GrammarSpec& spec) {
  return dialogue_to_json(d, spec).dump();
}

inline void append_transcript(const std::filesystem::path& path, const Dialogue& d,
                              const GrammarSpec& spec) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IngestError("cannot write transcript: " + path.string());
  out << transcript_line(d, spec) << "\n";
}

inline std::vector<nlohmann::ordered_json> read_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open transcript: " + path.string());
  std::vector<nlohmann::ordered_json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    out.push_back(nlohmann::ordered_json::parse(line));
  }
  return out;
}

}  // namespace qachain
