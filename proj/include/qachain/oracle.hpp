#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qachain/common.hpp"
#include "qachain/grammar.hpp"

namespace qachain {

struct SceneObject {
  int id = 0;
  std::string size;
  std::string color;
  std::string material;
  std::string shape;
  double x = 0.0;
  double y = 0.0;
};

// Attributed objects on a plane; spatial relations derive from coordinate order.
// left_of(a,b) <=> a.x < b.x; in_front_of(a,b) <=> a.y < b.y.
class SceneGraph {
 public:
  SceneGraph() = default;

  explicit SceneGraph(std::vector<SceneObject> objects, const GrammarSpec* spec = nullptr) {
    objects_ = std::move(objects);
    std::sort(objects_.begin(), objects_.end(),
              [](const SceneObject& a, const SceneObject& b) { return a.id < b.id; });
    check(spec);
  }

  static SceneGraph from_json(const nlohmann::json& j, const GrammarSpec* spec = nullptr) {
    if (!j.is_object() || !j.contains("objects") || !j.at("objects").is_array())
      throw IngestError("scene document requires an 'objects' array");
    std::vector<SceneObject> objs;
    for (const auto& jo : j.at("objects")) {
      SceneObject o;
      o.id = jo.at("id").get<int>();
      o.size = to_lower(jo.at("size").get<std::string>());
      o.color = to_lower(jo.at("color").get<std::string>());
      o.material = to_lower(jo.at("material").get<std::string>());
      o.shape = to_lower(jo.at("shape").get<std::string>());
      o.x = jo.at("x").get<double>();
      o.y = jo.at("y").get<double>();
      objs.push_back(std::move(o));
    }
    return SceneGraph(std::move(objs), spec);
  }

  static SceneGraph load_file(const std::filesystem::path& path,
                              const GrammarSpec* spec = nullptr) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open scene file: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("scene parse failure in " + path.string() + ": " + e.what());
    }
    return from_json(j, spec);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["objects"] = nlohmann::ordered_json::array();
    for (const auto& o : objects_) {
      nlohmann::ordered_json jo;
      jo["id"] = o.id;
      jo["size"] = o.size;
      jo["color"] = o.color;
      jo["material"] = o.material;
      jo["shape"] = o.shape;
      jo["x"] = o.x;
      jo["y"] = o.y;
      j["objects"].push_back(std::move(jo));
    }
    return j;
  }

  const std::vector<SceneObject>& objects() const { return objects_; }

  static bool related(Relation r, const SceneObject& a, const SceneObject& b) {
    switch (r) {
      case Relation::left_of: return a.x < b.x;
      case Relation::right_of: return a.x > b.x;
      case Relation::in_front_of: return a.y < b.y;
      case Relation::behind: return a.y > b.y;
    }
    return false;
  }

 private:
  void check(const GrammarSpec* spec) const {
    for (size_t i = 0; i < objects_.size(); ++i) {
      const auto& a = objects_[i];
      if (spec) {
        for (auto [slot, value] : {std::pair<const char*, const std::string*>{"size", &a.size},
                                   {"color", &a.color},
                                   {"material", &a.material},
                                   {"shape", &a.shape}}) {
          if (!spec->slot_has(slot, *value))
            throw IngestError("object " + std::to_string(a.id) + " has unknown " + slot + " '" +
                              *value + "'");
        }
      }
      for (size_t k = i + 1; k < objects_.size(); ++k) {
        const auto& b = objects_[k];
        if (a.id == b.id) throw IngestError("duplicate object id " + std::to_string(a.id));
        // Coordinate ties would leave left/right or front/behind undefined.
        if (a.x == b.x || a.y == b.y)
          throw IngestError("objects " + std::to_string(a.id) + " and " + std::to_string(b.id) +
                            " share a coordinate");
      }
    }
  }

  std::vector<SceneObject> objects_;
};

inline SceneGraph load_scene(const nlohmann::json& j, const GrammarSpec& spec) {
  return SceneGraph::from_json(j, &spec);
}

// Scene-set file: JSON array of {scene_id, objects:[...]}.
inline std::vector<std::pair<std::string, SceneGraph>> load_scene_set(
    const std::filesystem::path& path, const GrammarSpec* spec = nullptr) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open scene-set file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("scene-set parse failure in " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw IngestError("scene-set file must be a JSON array");
  std::vector<std::pair<std::string, SceneGraph>> out;
  for (const auto& js : j) {
    if (!js.contains("scene_id")) throw IngestError("scene-set entry missing scene_id");
    out.emplace_back(js.at("scene_id").get<std::string>(), SceneGraph::from_json(js, spec));
  }
  return out;
}

struct Answer {
  std::string value;
  AnswerDomain domain = AnswerDomain::open;

  bool operator==(const Answer&) const = default;
};

// What a trained template VQA model does on a what_* question whose entity is
// absent or not unique: silently answer from the lowest-id match, or refuse.
enum class AmbiguityStrategy { lowest_id, refuse };

struct AmbiguousEntityError : Error {
  using Error::Error;
};

inline bool matches_descriptor(const SceneObject& o, const ObjectDescriptor& d) {
  if (!d.size.empty() && o.size != d.size) return false;
  if (!d.color.empty() && o.color != d.color) return false;
  if (!d.material.empty() && o.material != d.material) return false;
  if (!d.shape.empty() && o.shape != d.shape) return false;
  return true;
}

// Objects matching the subject descriptor and, when a relation is present,
// standing in that relation to at least one anchor match. Ordered by id.
inline std::vector<const SceneObject*> match_entity(const ObjectEntity& e, const SceneGraph& s) {
  std::vector<const SceneObject*> out;
  for (const auto& o : s.objects()) {
    if (!matches_descriptor(o, e.subject)) continue;
    if (e.relation) {
      bool anchored = false;
      for (const auto& a : s.objects()) {
        if (a.id == o.id) continue;  // irreflexive
        if (!matches_descriptor(a, *e.anchor)) continue;
        if (SceneGraph::related(*e.relation, o, a)) {
          anchored = true;
          break;
        }
      }
      if (!anchored) continue;
    }
    out.push_back(&o);
  }
  return out;
}

inline Answer answer(const TemplateQuestion& q, const SceneGraph& s, const GrammarSpec& spec,
                     AmbiguityStrategy strategy = AmbiguityStrategy::lowest_id) {
  if (spec.family != Family::scene)
    throw UnsupportedFamilyError("oracle answers scene-family questions only");
  const QuestionTypeDef* qt = spec.question_type(q.qtype);
  if (!qt) throw ValidationError("unknown question type: " + q.qtype);
  auto matches = match_entity(q.entity, s);
  if (q.qtype == "is_there")
    return Answer{matches.empty() ? "no" : "yes", AnswerDomain::boolean_answer};
  if (q.qtype == "how_many")
    return Answer{std::to_string(matches.size()), AnswerDomain::count};
  std::string attr;
  if (q.qtype == "what_color")
    attr = "color";
  else if (q.qtype == "what_size")
    attr = "size";
  else if (q.qtype == "what_material")
    attr = "material";
  else if (q.qtype == "what_shape")
    attr = "shape";
  else
    throw ValidationError("oracle cannot answer question type '" + q.qtype + "'");
  if (matches.size() != 1 && strategy == AmbiguityStrategy::refuse) {
    throw AmbiguousEntityError(matches.empty()
                                   ? std::string("no object matches the entity")
                                   : std::to_string(matches.size()) + " objects match the entity");
  }
  // lowest_id strategy answers no matter what: the unique match if there is
  // one, else the lowest-id subject-only match, else the lowest-id object in
  // the scene. This is the silent-wrong-answer mode EUH exists to guard.
  const SceneObject* o = nullptr;
  if (!matches.empty()) {
    o = matches.front();
  } else {
    ObjectEntity subject_only{q.entity.subject, std::nullopt, std::nullopt};
    auto fallback = match_entity(subject_only, s);
    if (!fallback.empty())
      o = fallback.front();
    else if (!s.objects().empty())
      o = &s.objects().front();
  }
  std::string value;
  if (o == nullptr) {
    // Empty scene: fabricate the first option of the attribute's slot.
    value = spec.slot(attr)->options.front();
  } else if (attr == "color") {
    value = o->color;
  } else if (attr == "size") {
    value = o->size;
  } else if (attr == "material") {
    value = o->material;
  } else {
    value = o->shape;
  }
  return Answer{value, qt->domain};
}

}  // namespace qachain
