#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qachain/common.hpp"

namespace qachain {

enum class Family { scene, radiograph };

enum class AnswerDomain { color, size, material, shape, count, boolean_answer, open };

inline Family family_from_string(const std::string& s) {
  if (s == "scene") return Family::scene;
  if (s == "radiograph") return Family::radiograph;
  throw ConfigError("unknown grammar family: " + s);
}

inline std::string family_to_string(Family f) {
  return f == Family::scene ? "scene" : "radiograph";
}

inline AnswerDomain domain_from_string(const std::string& s) {
  if (s == "color") return AnswerDomain::color;
  if (s == "size") return AnswerDomain::size;
  if (s == "material") return AnswerDomain::material;
  if (s == "shape") return AnswerDomain::shape;
  if (s == "count") return AnswerDomain::count;
  if (s == "boolean") return AnswerDomain::boolean_answer;
  if (s == "open") return AnswerDomain::open;
  throw ConfigError("unknown answer domain: " + s);
}

inline std::string domain_to_string(AnswerDomain d) {
  switch (d) {
    case AnswerDomain::color: return "color";
    case AnswerDomain::size: return "size";
    case AnswerDomain::material: return "material";
    case AnswerDomain::shape: return "shape";
    case AnswerDomain::count: return "count";
    case AnswerDomain::boolean_answer: return "boolean";
    case AnswerDomain::open: return "open";
  }
  return "open";
}

enum class Relation { left_of, right_of, in_front_of, behind };

inline constexpr Relation kAllRelations[] = {Relation::left_of, Relation::right_of,
                                             Relation::in_front_of, Relation::behind};

inline std::string relation_surface(Relation r) {
  switch (r) {
    case Relation::left_of: return "left of";
    case Relation::right_of: return "right of";
    case Relation::in_front_of: return "in front of";
    case Relation::behind: return "behind";
  }
  return "";
}

inline Relation relation_mirror(Relation r) {
  switch (r) {
    case Relation::left_of: return Relation::right_of;
    case Relation::right_of: return Relation::left_of;
    case Relation::in_front_of: return Relation::behind;
    case Relation::behind: return Relation::in_front_of;
  }
  return r;
}

struct SlotDef {
  std::string name;
  std::vector<std::string> options;
  bool allow_empty = true;
};

struct QuestionTypeDef {
  std::string name;
  std::string surface_template;  // contains {entity}, {entity_plural} or {abnormality}
  AnswerDomain domain = AnswerDomain::open;
};

// Empty string means the <Empty> option.
struct ObjectDescriptor {
  std::string size;
  std::string color;
  std::string material;
  std::string shape;

  bool operator==(const ObjectDescriptor&) const = default;
  auto operator<=>(const ObjectDescriptor&) const = default;

  bool fully_empty() const {
    return size.empty() && color.empty() && material.empty() && shape.empty();
  }
};

struct ObjectEntity {
  ObjectDescriptor subject;
  std::optional<Relation> relation;
  std::optional<ObjectDescriptor> anchor;  // present iff relation present

  bool operator==(const ObjectEntity&) const = default;
};

struct TemplateQuestion {
  std::string qtype;
  ObjectEntity entity;       // scene family
  std::string abnormality;   // radiograph family

  bool operator==(const TemplateQuestion&) const = default;
};

class GrammarSpec {
 public:
  Family family = Family::scene;
  std::vector<SlotDef> slots;
  std::vector<QuestionTypeDef> question_types;
  // Surface synonym -> canonical option, applied per token before slot matching.
  std::map<std::string, std::string> synonyms;

  static GrammarSpec from_json(const nlohmann::json& j) {
    GrammarSpec spec;
    if (!j.is_object()) throw ConfigError("grammar config must be a JSON object");
    if (!j.contains("family")) throw ConfigError("grammar config missing 'family'");
    spec.family = family_from_string(j.at("family").get<std::string>());
    if (!j.contains("slots") || !j.at("slots").is_array())
      throw ConfigError("grammar config missing 'slots' array");
    for (const auto& js : j.at("slots")) {
      SlotDef s;
      if (!js.contains("name") || !js.contains("options"))
        throw ConfigError("slot entry requires 'name' and 'options'");
      s.name = js.at("name").get<std::string>();
      for (const auto& o : js.at("options")) s.options.push_back(to_lower(o.get<std::string>()));
      s.allow_empty = js.value("allow_empty", true);
      spec.slots.push_back(std::move(s));
    }
    if (!j.contains("question_types") || !j.at("question_types").is_array())
      throw ConfigError("grammar config missing 'question_types' array");
    for (const auto& jq : j.at("question_types")) {
      QuestionTypeDef q;
      q.name = jq.at("name").get<std::string>();
      q.surface_template = jq.at("surface_template").get<std::string>();
      q.domain = domain_from_string(jq.at("answer_domain").get<std::string>());
      spec.question_types.push_back(std::move(q));
    }
    if (j.contains("parse_synonyms")) {
      for (auto it = j.at("parse_synonyms").begin(); it != j.at("parse_synonyms").end(); ++it) {
        spec.synonyms[to_lower(it.key())] = to_lower(it.value().get<std::string>());
      }
    }
    spec.validate();
    return spec;
  }

  static GrammarSpec load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open grammar config: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("grammar config parse failure in " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void validate() const {
    if (slots.empty()) throw ConfigError("grammar has no slots");
    if (question_types.empty()) throw ConfigError("grammar has no question types");
    for (const auto& s : slots) {
      if (s.options.empty()) throw ConfigError("slot '" + s.name + "' has no options");
      std::vector<std::string> seen;
      for (const auto& o : s.options) {
        std::string lo = to_lower(o);
        if (std::find(seen.begin(), seen.end(), lo) != seen.end())
          throw ValidationError("duplicate option '" + o + "' in slot '" + s.name + "'");
        seen.push_back(lo);
      }
    }
    for (const auto& q : question_types) {
      bool has_placeholder = q.surface_template.find("{entity}") != std::string::npos ||
                             q.surface_template.find("{entity_plural}") != std::string::npos ||
                             q.surface_template.find("{abnormality}") != std::string::npos;
      if (!has_placeholder)
        throw ConfigError("question type '" + q.name + "' template has no placeholder");
    }
    if (family == Family::scene) {
      for (const char* name : {"size", "color", "material", "shape"}) {
        if (!slot(name)) throw ConfigError(std::string("scene grammar requires slot '") + name + "'");
      }
    } else {
      if (!slot("abnormality")) throw ConfigError("radiograph grammar requires slot 'abnormality'");
    }
  }

  const SlotDef* slot(const std::string& name) const {
    for (const auto& s : slots) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  const QuestionTypeDef* question_type(const std::string& name) const {
    for (const auto& q : question_types) {
      if (q.name == name) return &q;
    }
    return nullptr;
  }

  bool slot_has(const std::string& slot_name, const std::string& value) const {
    const SlotDef* s = slot(slot_name);
    if (!s) return false;
    return std::find(s->options.begin(), s->options.end(), to_lower(value)) != s->options.end();
  }

  // Synonym mapping; unknown tokens pass through unchanged.
  std::string canonical_token(const std::string& tok) const {
    auto it = synonyms.find(tok);
    return it == synonyms.end() ? tok : it->second;
  }
};

// ---------------------------------------------------------------------------
// Rendering

inline std::string pluralize_noun(const std::string& noun) { return noun + "s"; }

inline std::string render_descriptor(const ObjectDescriptor& d, bool plural = false) {
  std::vector<std::string> words;
  if (!d.size.empty()) words.push_back(d.size);
  if (!d.color.empty()) words.push_back(d.color);
  if (!d.material.empty()) words.push_back(d.material);
  std::string head = d.shape.empty() ? std::string("object") : d.shape;
  words.push_back(plural ? pluralize_noun(head) : head);
  return join(words);
}

inline std::string render_entity(const ObjectEntity& e, bool plural_subject = false) {
  std::string out = render_descriptor(e.subject, plural_subject);
  if (e.relation) {
    out += " " + relation_surface(*e.relation) + " the " + render_descriptor(*e.anchor, false);
  }
  return out;
}

namespace detail {

inline std::string apply_template(const std::string& tmpl, const std::string& placeholder,
                                  const std::string& value) {
  std::string out = tmpl;
  size_t pos = out.find(placeholder);
  if (pos == std::string::npos) return out;
  out.replace(pos, placeholder.size(), value);
  return out;
}

inline void check_option(const GrammarSpec& spec, const std::string& slot_name,
                         const std::string& value) {
  if (value.empty()) return;
  if (!spec.slot_has(slot_name, value))
    throw ValidationError("option '" + value + "' not in slot '" + slot_name + "'");
}

inline void check_descriptor(const GrammarSpec& spec, const ObjectDescriptor& d) {
  check_option(spec, "size", d.size);
  check_option(spec, "color", d.color);
  check_option(spec, "material", d.material);
  check_option(spec, "shape", d.shape);
}

}  // namespace detail

inline std::string render_question(const TemplateQuestion& q, const GrammarSpec& spec) {
  const QuestionTypeDef* qt = spec.question_type(q.qtype);
  if (!qt) throw ValidationError("unknown question type: " + q.qtype);
  if (spec.family == Family::radiograph) {
    if (!spec.slot_has("abnormality", q.abnormality))
      throw ValidationError("abnormality '" + q.abnormality + "' not in grammar");
    return detail::apply_template(qt->surface_template, "{abnormality}", q.abnormality);
  }
  detail::check_descriptor(spec, q.entity.subject);
  if (q.entity.relation.has_value() != q.entity.anchor.has_value())
    throw ValidationError("relation and anchor must be jointly present");
  if (q.entity.anchor) detail::check_descriptor(spec, *q.entity.anchor);
  if (qt->surface_template.find("{entity_plural}") != std::string::npos)
    return detail::apply_template(qt->surface_template, "{entity_plural}",
                                  render_entity(q.entity, true));
  return detail::apply_template(qt->surface_template, "{entity}", render_entity(q.entity, false));
}

// ---------------------------------------------------------------------------
// Parsing

struct ParseFailure {
  size_t token_pos = 0;
  std::string token;
  std::string message;
};

struct ParseResult {
  std::optional<TemplateQuestion> question;
  ParseFailure failure;

  bool ok() const { return question.has_value(); }
};

namespace detail {

struct DescriptorParse {
  bool ok = false;
  ObjectDescriptor d;
  size_t next = 0;
  ParseFailure failure;
};

// Adjective run followed by a head noun (a shape option or "object"/"objects").
inline DescriptorParse parse_descriptor(const std::vector<std::string>& toks, size_t begin,
                                        size_t end, bool plural_head, const GrammarSpec& spec) {
  DescriptorParse r;
  ObjectDescriptor d;
  size_t i = begin;
  for (; i < end; ++i) {
    std::string tok = spec.canonical_token(toks[i]);
    std::string head = tok;
    if (plural_head) {
      if (head.size() > 1 && head.back() == 's') {
        head = spec.canonical_token(head.substr(0, head.size() - 1));
      } else {
        head.clear();
      }
    }
    if (!head.empty() && (head == "object" || spec.slot_has("shape", head))) {
      d.shape = head == "object" ? "" : head;
      r.ok = true;
      r.d = d;
      r.next = i + 1;
      return r;
    }
    auto assign = [&](std::string& field, const std::string& value) {
      if (!field.empty()) {
        r.failure = {i, toks[i], "duplicate " + std::string() + "attribute '" + toks[i] + "'"};
        return false;
      }
      field = value;
      return true;
    };
    if (spec.slot_has("size", tok)) {
      if (!assign(d.size, tok)) return r;
    } else if (spec.slot_has("color", tok)) {
      if (!assign(d.color, tok)) return r;
    } else if (spec.slot_has("material", tok)) {
      if (!assign(d.material, tok)) return r;
    } else {
      r.failure = {i, toks[i], "token '" + toks[i] + "' is not a grammar option"};
      return r;
    }
  }
  r.failure = {end, end < toks.size() ? toks[end] : std::string(),
               "entity missing its head noun"};
  return r;
}

struct EntityParse {
  bool ok = false;
  ObjectEntity e;
  ParseFailure failure;
};

// The whole [begin,end) span must be consumed.
inline EntityParse parse_entity_tokens(const std::vector<std::string>& toks, size_t begin,
                                       size_t end, bool plural_subject, const GrammarSpec& spec) {
  EntityParse r;
  DescriptorParse sub = parse_descriptor(toks, begin, end, plural_subject, spec);
  if (!sub.ok) {
    r.failure = sub.failure;
    return r;
  }
  ObjectEntity e;
  e.subject = sub.d;
  size_t i = sub.next;
  if (i < end) {
    // Optional "to the" before left/right ("to the left of").
    size_t j = i;
    if (j + 1 < end && toks[j] == "to" && toks[j + 1] == "the") j += 2;
    std::optional<Relation> rel;
    if (j + 1 < end && toks[j] == "left" && toks[j + 1] == "of") {
      rel = Relation::left_of;
      j += 2;
    } else if (j + 1 < end && toks[j] == "right" && toks[j + 1] == "of") {
      rel = Relation::right_of;
      j += 2;
    } else if (i + 2 < end && toks[i] == "in" && toks[i + 1] == "front" && toks[i + 2] == "of") {
      rel = Relation::in_front_of;
      j = i + 3;
    } else if (toks[i] == "behind") {
      rel = Relation::behind;
      j = i + 1;
    }
    if (!rel) {
      r.failure = {i, toks[i], "expected a relation or end of question at '" + toks[i] + "'"};
      return r;
    }
    if (j >= end || toks[j] != "the") {
      r.failure = {j, j < end ? toks[j] : std::string(), "expected 'the' after relation"};
      return r;
    }
    ++j;
    DescriptorParse anc = parse_descriptor(toks, j, end, false, spec);
    if (!anc.ok) {
      r.failure = anc.failure;
      return r;
    }
    if (anc.next != end) {
      r.failure = {anc.next, toks[anc.next], "trailing tokens after anchor"};
      return r;
    }
    e.relation = rel;
    e.anchor = anc.d;
  }
  r.ok = true;
  r.e = e;
  return r;
}

struct TemplateShape {
  std::vector<std::string> prefix;
  std::vector<std::string> suffix;
  std::string placeholder;  // "entity", "entity_plural" or "abnormality"
};

inline TemplateShape template_shape(const QuestionTypeDef& qt) {
  TemplateShape shape;
  for (const char* ph : {"{entity_plural}", "{entity}", "{abnormality}"}) {
    size_t pos = qt.surface_template.find(ph);
    if (pos != std::string::npos) {
      shape.prefix = tokenize(qt.surface_template.substr(0, pos));
      shape.suffix = tokenize(qt.surface_template.substr(pos + std::string(ph).size()));
      shape.placeholder = std::string(ph).substr(1, std::string(ph).size() - 2);
      break;
    }
  }
  return shape;
}

}  // namespace detail

inline ParseResult parse_question(const std::string& text, const GrammarSpec& spec) {
  ParseResult result;
  std::vector<std::string> toks = tokenize(text);
  ParseFailure best{0, toks.empty() ? std::string() : toks[0], "empty input"};
  if (toks.empty()) {
    best.message = "empty question";
    result.failure = best;
    return result;
  }
  auto consider = [&](const ParseFailure& f) {
    if (f.token_pos >= best.token_pos) best = f;
  };
  for (const auto& qt : spec.question_types) {
    detail::TemplateShape shape = detail::template_shape(qt);
    size_t pre = shape.prefix.size(), suf = shape.suffix.size();
    if (toks.size() < pre + suf + 1) {
      consider({0, toks[0], "too short for template '" + qt.name + "'"});
      continue;
    }
    bool matched = true;
    for (size_t i = 0; i < pre; ++i) {
      if (toks[i] != shape.prefix[i]) {
        consider({i, toks[i], "expected '" + shape.prefix[i] + "', got '" + toks[i] + "'"});
        matched = false;
        break;
      }
    }
    if (!matched) continue;
    size_t mid_end = toks.size() - suf;
    for (size_t i = 0; i < suf; ++i) {
      if (toks[mid_end + i] != shape.suffix[i]) {
        consider({mid_end + i, toks[mid_end + i],
                  "expected '" + shape.suffix[i] + "', got '" + toks[mid_end + i] + "'"});
        matched = false;
        break;
      }
    }
    if (!matched) continue;
    if (shape.placeholder == "abnormality") {
      std::vector<std::string> mid(toks.begin() + static_cast<long>(pre),
                                   toks.begin() + static_cast<long>(mid_end));
      // Tolerate a leading article.
      if (!mid.empty() && (mid[0] == "a" || mid[0] == "an")) mid.erase(mid.begin());
      for (auto& t : mid) t = spec.canonical_token(t);
      std::string candidate = join(mid);
      if (spec.slot_has("abnormality", candidate)) {
        TemplateQuestion q;
        q.qtype = qt.name;
        q.abnormality = to_lower(candidate);
        result.question = q;
        return result;
      }
      consider({pre, pre < toks.size() ? toks[pre] : std::string(),
                "'" + candidate + "' is not a known abnormality"});
      continue;
    }
    bool plural = shape.placeholder == "entity_plural";
    size_t begin = pre;
    if (!plural && begin < mid_end && (toks[begin] == "a" || toks[begin] == "an")) {
      // "Is there a <entity>?" — article already part of some templates; tolerate both.
      if (shape.prefix.empty() || shape.prefix.back() != "a") ++begin;
    }
    detail::EntityParse ep = detail::parse_entity_tokens(toks, begin, mid_end, plural, spec);
    if (ep.ok) {
      TemplateQuestion q;
      q.qtype = qt.name;
      q.entity = ep.e;
      result.question = q;
      return result;
    }
    consider(ep.failure);
  }
  result.failure = best;
  return result;
}

inline ObjectEntity extract_entity(const TemplateQuestion& q, const GrammarSpec& spec) {
  if (spec.family != Family::scene)
    throw UnsupportedFamilyError("extract_entity requires a scene-family question");
  return q.entity;
}

// ---------------------------------------------------------------------------
// Enumeration

namespace detail {

inline std::vector<std::string> options_with_empty(const GrammarSpec& spec,
                                                   const std::string& slot_name) {
  std::vector<std::string> out;
  const SlotDef* s = spec.slot(slot_name);
  if (!s) return {""};
  if (s->allow_empty) out.push_back("");
  for (const auto& o : s->options) out.push_back(o);
  return out;
}

template <typename Fn>
inline bool for_each_descriptor(const GrammarSpec& spec, Fn&& fn) {
  auto sizes = options_with_empty(spec, "size");
  auto colors = options_with_empty(spec, "color");
  auto materials = options_with_empty(spec, "material");
  auto shapes = options_with_empty(spec, "shape");
  for (const auto& sz : sizes)
    for (const auto& c : colors)
      for (const auto& m : materials)
        for (const auto& sh : shapes) {
          if (!fn(ObjectDescriptor{sz, c, m, sh})) return false;
        }
  return true;
}

}  // namespace detail

// Streaming walk over the grammar's finite language in enumeration order.
// fn returns false to stop; visit_questions returns false if it stopped early.
template <typename Fn>
inline bool visit_questions(const GrammarSpec& spec, Fn&& fn) {
  if (spec.family == Family::radiograph) {
    for (const auto& qt : spec.question_types) {
      for (const auto& ab : spec.slot("abnormality")->options) {
        TemplateQuestion q;
        q.qtype = qt.name;
        q.abnormality = ab;
        if (!fn(q)) return false;
      }
    }
    return true;
  }
  for (const auto& qt : spec.question_types) {
    bool more = detail::for_each_descriptor(spec, [&](const ObjectDescriptor& subject) {
      TemplateQuestion q;
      q.qtype = qt.name;
      q.entity.subject = subject;
      if (!fn(q)) return false;
      for (Relation rel : kAllRelations) {
        bool ok = detail::for_each_descriptor(spec, [&](const ObjectDescriptor& anchor) {
          TemplateQuestion qr;
          qr.qtype = qt.name;
          qr.entity.subject = subject;
          qr.entity.relation = rel;
          qr.entity.anchor = anchor;
          return fn(qr);
        });
        if (!ok) return false;
      }
      return true;
    });
    if (!more) return false;
  }
  return true;
}

// Deterministic, duplicate-free prefix of the grammar's finite language.
inline std::vector<TemplateQuestion> enumerate_questions(const GrammarSpec& spec, size_t max) {
  if (max < 1) throw UsageError("enumerate_questions requires max >= 1");
  std::vector<TemplateQuestion> out;
  visit_questions(spec, [&](const TemplateQuestion& q) {
    out.push_back(q);
    return out.size() < max;
  });
  return out;
}

// Closed-form size of the grammar's language.
inline unsigned long long count_questions(const GrammarSpec& spec) {
  if (spec.family == Family::radiograph) {
    return static_cast<unsigned long long>(spec.question_types.size()) *
           spec.slot("abnormality")->options.size();
  }
  unsigned long long d = 1;
  for (const char* name : {"size", "color", "material", "shape"}) {
    const SlotDef* s = spec.slot(name);
    d *= s->options.size() + (s->allow_empty ? 1 : 0);
  }
  unsigned long long entities = d * (1 + 4ULL * d);
  return entities * spec.question_types.size();
}

}  // namespace qachain
