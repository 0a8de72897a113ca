#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qachain/backends.hpp"
#include "qachain/common.hpp"
#include "qachain/grammar.hpp"

namespace qachain {

struct AblationFlags {
  bool euh_enabled = true;
  bool stepwise = true;          // false = all-at-once questioning
  bool format_constrained = true;

  bool operator==(const AblationFlags&) const = default;
};

struct TaskInstruction {
  std::string user_question;
  std::string format_block;
  int budget = 20;
  std::vector<std::string> exemplars;
  AblationFlags flags;
  std::string text;  // full rendered instruction
};

inline constexpr const char* kRepromptMessage =
    "Your question does not match the required format; re-ask.";
inline constexpr const char* kForcedAnswerMessage =
    "You have reached the maximum number of questions. You must answer now. "
    "Provide your final answer to the user question in {}.";

inline std::string render_format_block(const GrammarSpec& spec) {
  std::string out;
  if (spec.family == Family::scene) {
    out += "A question is composed as <type> + <object> + <relation> + <object>.\n";
    out += "An object is described as <size> <color> <material> <shape>, where each part may "
           "be omitted; an object with no shape is called \"object\".\n";
    for (const char* name : {"size", "color", "material", "shape"}) {
      const SlotDef* s = spec.slot(name);
      out += "<" + std::string(name) + ">: ";
      for (size_t i = 0; i < s->options.size(); ++i) {
        if (i) out += " or ";
        out += s->options[i];
      }
      if (s->allow_empty) out += " or <Empty>";
      out += "\n";
    }
    out += "<relation>: left of or right of or in front of or behind or <Empty>\n";
    out += "Allowed question forms:\n";
  } else {
    const SlotDef* s = spec.slot("abnormality");
    out += "A question is composed as <type> + <abnormality>.\n<abnormality>: ";
    for (size_t i = 0; i < s->options.size(); ++i) {
      if (i) out += " or ";
      out += s->options[i];
    }
    out += "\nAllowed question forms:\n";
  }
  for (const auto& qt : spec.question_types) {
    out += "  " + qt.surface_template + "\n";
  }
  return out;
}

inline TaskInstruction build_instruction(const std::string& user_question,
                                         const GrammarSpec& spec, int budget,
                                         const std::vector<std::string>& exemplars,
                                         const AblationFlags& flags) {
  if (budget < 0) throw UsageError("budget must be >= 0");
  if (exemplars.size() > 2) throw ValidationError("at most 2 exemplar dialogues are allowed");
  TaskInstruction ins;
  ins.user_question = user_question;
  ins.budget = budget;
  ins.exemplars = exemplars;
  ins.flags = flags;
  std::string t;
  t += "Your task is to answer the following user question based on an image: " + user_question +
       "\n";
  t += "However, you cannot view the image, while I can.\n";
  if (flags.format_constrained) {
    ins.format_block = render_format_block(spec);
    t += "You may ask me questions using the following format:\n" + ins.format_block;
  }
  if (budget == 0) {
    t += "You may not ask any questions. Provide your answer to the user question immediately.\n";
  } else if (flags.stepwise) {
    t += "You may ask up to " + std::to_string(budget) + " questions. ";
    t += "Ask me the next question after I have responded to you.\n";
  } else {
    t += "Ask me up to " + std::to_string(budget) + " questions all at once.\n";
  }
  t += "Once you are able to answer the user question, stop asking further questions and provide "
       "me with the answer. The answer should be in {}.\n";
  for (size_t i = 0; i < exemplars.size(); ++i) {
    t += "\nExample dialogue " + std::to_string(i + 1) + ":\n" + exemplars[i] + "\n";
  }
  ins.text = t;
  return ins;
}

struct EuhTrace {
  std::string existence_q;
  std::string existence_a;
  std::string uniqueness_q;
  std::string uniqueness_a;
};

struct Turn {
  int index = 0;  // 1-based
  std::string asked;
  std::optional<TemplateQuestion> parsed;
  std::optional<EuhTrace> euh_trace;
  std::string reply;
  bool rejected = false;  // parse/oracle rejection was fed back on this turn
};

enum class DialogueStatus { answered, budget_exhausted, backend_error };

inline std::string status_to_string(DialogueStatus s) {
  switch (s) {
    case DialogueStatus::answered: return "answered";
    case DialogueStatus::budget_exhausted: return "budget_exhausted";
    case DialogueStatus::backend_error: return "backend_error";
  }
  return "backend_error";
}

struct Dialogue {
  TaskInstruction instruction;
  std::string scene_id;
  std::vector<Turn> turns;
  DialogueStatus status = DialogueStatus::backend_error;
  std::optional<std::string> final_answer;
  std::string final_text;  // raw LLM message the answer was detected in
  bool format_warning = false;
  std::optional<std::string> why_explanation;
};

struct FinalAnswer {
  std::string value;
  bool warning = false;  // more than one brace group
};

// Innermost brace-delimited span; multiple groups take the last with a warning.
inline std::optional<FinalAnswer> detect_final_answer(const std::string& text) {
  std::vector<std::string> groups;
  size_t open = std::string::npos;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '{') {
      open = i;
    } else if (text[i] == '}' && open != std::string::npos) {
      groups.push_back(text.substr(open + 1, i - open - 1));
      open = std::string::npos;
    }
  }
  if (groups.empty()) return std::nullopt;
  return FinalAnswer{trim(groups.back()), groups.size() > 1};
}

// Algorithm: check existence of the question's entity, then its uniqueness,
// and only then forward the original question to the answerer. is_there and
// how_many questions are the checks themselves and pass straight through.
inline std::string euh_answer(const TemplateQuestion& q, const GrammarSpec& spec,
                              const std::function<std::string(const std::string&)>& ask_vqa,
                              EuhTrace* trace = nullptr) {
  if (spec.family != Family::scene)
    throw UnsupportedFamilyError("existence/uniqueness handling requires a scene-family question");
  if (q.qtype == "is_there" || q.qtype == "how_many") {
    return ask_vqa(render_question(q, spec));
  }
  ObjectEntity entity = extract_entity(q, spec);
  std::string entity_text = render_entity(entity, false);
  std::string entity_plural = render_entity(entity, true);

  std::string existence_q = "Is there a " + entity_text + "?";
  std::string existence_a = ask_vqa(existence_q);
  if (trace) {
    trace->existence_q = existence_q;
    trace->existence_a = existence_a;
  }
  if (to_lower(trim(existence_a)) == "no") {
    return "There is no " + entity_text;
  }
  std::string uniqueness_q = "How many " + entity_plural + " are there?";
  std::string uniqueness_a = ask_vqa(uniqueness_q);
  if (trace) {
    trace->uniqueness_q = uniqueness_q;
    trace->uniqueness_a = uniqueness_a;
  }
  if (trim(uniqueness_a) != "1") {
    return "There are " + trim(uniqueness_a) + " " + entity_plural;
  }
  return ask_vqa(render_question(q, spec));
}

namespace detail {

// Answer one accepted question turn, honoring the EUH ablation flag.
inline void reply_to_question(Turn& turn, const GrammarSpec& spec, VqaClient& vqa,
                              const std::string& scene_id, bool euh_enabled) {
  auto ask = [&](const std::string& text) { return vqa.answer(text, scene_id); };
  try {
    if (turn.parsed) {
      if (euh_enabled) {
        EuhTrace trace;
        turn.reply = euh_answer(*turn.parsed, spec, ask, &trace);
        if (!trace.existence_q.empty()) turn.euh_trace = trace;
      } else {
        turn.reply = ask(render_question(*turn.parsed, spec));
      }
    } else if (trim(turn.asked).empty()) {
      turn.rejected = true;
      turn.reply = "You sent an empty message. " + std::string(kRepromptMessage);
    } else {
      // Unconstrained mode: raw text goes straight to the answerer.
      turn.reply = ask(turn.asked);
    }
  } catch (const VqaRejection& e) {
    turn.rejected = true;
    turn.reply = std::string("I cannot answer that question: ") + e.what();
  }
}

}  // namespace detail

// The budgeted LLM <-> answerer loop. The transcript sent to the LLM grows
// monotonically: every call's input extends the previous call's input.
inline Dialogue run_chain(const TaskInstruction& instruction, const std::string& scene_id,
                          LlmClient& llm, VqaClient& vqa, const GrammarSpec& spec) {
  Dialogue d;
  d.instruction = instruction;
  d.scene_id = scene_id;
  std::vector<ChatMessage> messages{{"system", instruction.text}};
  int question_turns = 0;
  bool forced = false;
  const AblationFlags& flags = instruction.flags;

  auto finish_answered = [&](const std::string& raw, const FinalAnswer& fa) {
    d.status = DialogueStatus::answered;
    d.final_answer = fa.value;
    d.final_text = raw;
    d.format_warning = d.format_warning || fa.warning;
  };

  try {
    while (true) {
      std::string reply = llm.complete(messages);
      messages.push_back({"assistant", reply});
      if (auto fa = detect_final_answer(reply)) {
        finish_answered(reply, *fa);
        return d;
      }
      if (forced) {
        // The forced-answer call still refused to answer; score as empty.
        d.status = DialogueStatus::budget_exhausted;
        d.final_text = reply;
        return d;
      }
      if (question_turns >= instruction.budget) {
        messages.push_back({"user", kForcedAnswerMessage});
        forced = true;
        continue;
      }

      // Split into candidate questions: one per turn when stepwise, one per
      // non-empty line in all-at-once mode.
      std::vector<std::string> candidates;
      if (flags.stepwise) {
        candidates.push_back(trim(reply));
      } else {
        std::string cur;
        for (char c : reply + "\n") {
          if (c == '\n') {
            if (!trim(cur).empty()) candidates.push_back(trim(cur));
            cur.clear();
          } else {
            cur.push_back(c);
          }
        }
        if (candidates.empty()) candidates.push_back("");
      }

      std::vector<std::string> replies;
      for (const std::string& asked : candidates) {
        if (question_turns >= instruction.budget) break;
        Turn turn;
        turn.index = static_cast<int>(d.turns.size()) + 1;
        turn.asked = asked;
        if (flags.format_constrained) {
          ParseResult pr = parse_question(asked, spec);
          if (!pr.ok() && flags.stepwise) {
            // One structured re-prompt, then the turn is spent either way.
            messages.push_back({"user", kRepromptMessage});
            std::string retry = llm.complete(messages);
            messages.push_back({"assistant", retry});
            if (auto fa = detect_final_answer(retry)) {
              finish_answered(retry, *fa);
              return d;
            }
            turn.asked = trim(retry);
            pr = parse_question(turn.asked, spec);
          }
          if (pr.ok()) {
            turn.parsed = *pr.question;
          } else {
            turn.rejected = true;
            turn.reply = "I cannot parse that question (unexpected token '" + pr.failure.token +
                         "' at position " + std::to_string(pr.failure.token_pos) + "). " +
                         kRepromptMessage;
          }
        }
        if (turn.reply.empty()) {
          detail::reply_to_question(turn, spec, vqa, scene_id, flags.euh_enabled);
        }
        ++question_turns;
        replies.push_back(turn.reply);
        d.turns.push_back(std::move(turn));
      }
      messages.push_back({"user", join(replies, "\n")});
    }
  } catch (const BackendError&) {
    d.status = DialogueStatus::backend_error;  // partial transcript preserved
    return d;
  }
}

// Post-hoc interpretation turn; the dialogue is otherwise unchanged.
inline std::string ask_why(Dialogue& d, LlmClient& llm) {
  if (d.status != DialogueStatus::answered)
    throw UsageError("ask_why requires an answered dialogue");
  std::vector<ChatMessage> messages{{"system", d.instruction.text}};
  for (const auto& t : d.turns) {
    messages.push_back({"assistant", t.asked});
    messages.push_back({"user", t.reply});
  }
  messages.push_back({"assistant", d.final_text});
  messages.push_back({"user", "why?"});
  std::string explanation = llm.complete(messages);
  d.why_explanation = explanation;
  return explanation;
}

}  // namespace qachain
