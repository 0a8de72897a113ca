#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qachain/backends.hpp"
#include "qachain/chain.hpp"
#include "qachain/common.hpp"
#include "qachain/grammar.hpp"

namespace qachain {

// Deterministic rule-based question planner standing in for a live LLM. It
// recognizes a few compositional user-question families, asks the template
// questions needed to resolve them, and concludes from the replies. Stateless
// across calls: the plan and its progress are re-derived from the message
// transcript on every call, so one instance serves concurrent dialogues.
class RulePlanner final : public LlmClient {
 public:
  explicit RulePlanner(GrammarSpec spec) : spec_(std::move(spec)) {}

  std::string complete(const std::vector<ChatMessage>& messages) override {
    if (messages.empty() || messages.front().role != "system")
      throw UsageError("planner expects a system instruction first");
    std::string user_q = extract_user_question(messages.front().content);
    Plan plan = make_plan(user_q);
    if (!plan.ok) return "{unknown}";

    std::vector<std::string> replies;
    for (const auto& m : messages) {
      if (m.role == "user") replies.push_back(m.content);
    }
    if (replies.size() < plan.queries.size()) {
      return plan.queries[replies.size()];
    }
    return "{" + conclude(plan, replies) + "}";
  }

 private:
  struct Plan {
    bool ok = false;
    enum class Kind { same_attribute, echo_count, echo_boolean, echo_attribute } kind =
        Kind::echo_count;
    std::vector<std::string> queries;
  };

  static std::string extract_user_question(const std::string& instruction) {
    const std::string marker = "based on an image: ";
    size_t pos = instruction.find(marker);
    if (pos == std::string::npos) throw UsageError("instruction has no user question");
    size_t begin = pos + marker.size();
    size_t end = instruction.find('\n', begin);
    return instruction.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
  }

  Plan make_plan(const std::string& user_q) const {
    Plan plan;
    std::vector<std::string> toks = tokenize(user_q);
    if (toks.empty()) return plan;

    // "Are the <desc plural> the same <attr>?"
    if (toks.size() >= 5 && toks[0] == "are" && toks[1] == "the") {
      size_t tail = toks.size() - 2;
      if (toks[tail] == "same" && tail >= 1 && toks[tail - 1] == "the") {
        std::string attr = toks.back();
        if (spec_.slot(attr) != nullptr && attr != "abnormality") {
          auto ep = detail::parse_entity_tokens(toks, 2, tail - 1, true, spec_);
          if (ep.ok) {
            plan.ok = true;
            plan.kind = Plan::Kind::same_attribute;
            std::string fixed;
            if (attr == "size") fixed = ep.e.subject.size;
            else if (attr == "color") fixed = ep.e.subject.color;
            else if (attr == "material") fixed = ep.e.subject.material;
            else fixed = ep.e.subject.shape;
            // The descriptor already pins the attribute: trivially the same,
            // no questions needed.
            if (!fixed.empty()) return plan;
            for (const auto& option : spec_.slot(attr)->options) {
              TemplateQuestion q;
              q.qtype = "how_many";
              q.entity = ep.e;
              if (attr == "size") q.entity.subject.size = option;
              else if (attr == "color") q.entity.subject.color = option;
              else if (attr == "material") q.entity.subject.material = option;
              else q.entity.subject.shape = option;
              plan.queries.push_back(render_question(q, spec_));
            }
            return plan;
          }
        }
      }
    }

    // Template-conforming questions pass through and their reply is echoed.
    ParseResult pr = parse_question(user_q, spec_);
    if (pr.ok()) {
      plan.ok = true;
      if (pr.question->qtype == "how_many") plan.kind = Plan::Kind::echo_count;
      else if (pr.question->qtype == "is_there") plan.kind = Plan::Kind::echo_boolean;
      else plan.kind = Plan::Kind::echo_attribute;
      plan.queries.push_back(render_question(*pr.question, spec_));
      return plan;
    }
    return plan;
  }

  static std::string conclude(const Plan& plan, const std::vector<std::string>& replies) {
    if (plan.kind == Plan::Kind::same_attribute) {
      int nonzero = 0;
      for (size_t i = 0; i < plan.queries.size() && i < replies.size(); ++i) {
        std::string r = trim(replies[i]);
        if (!r.empty() && r != "0") ++nonzero;
      }
      return nonzero <= 1 ? "Yes" : "No";
    }
    std::string last = replies.empty() ? "" : trim(replies.back());
    if (plan.kind == Plan::Kind::echo_boolean) {
      return to_lower(last) == "yes" ? "Yes" : "No";
    }
    return last;
  }

  GrammarSpec spec_;
};

}  // namespace qachain
