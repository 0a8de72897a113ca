#include <doctest.h>

#include "qachain/grammar.hpp"
#include "qachain/oracle.hpp"
#include "qachain/scene_gen.hpp"

using namespace qachain;

namespace {

GrammarSpec scene_spec() { return GrammarSpec::load_file("configs/grammar.scene.json"); }

nlohmann::json obj(int id, const char* sz, const char* c, const char* m, const char* sh, double x,
                   double y) {
  return {{"id", id},     {"size", sz}, {"color", c}, {"material", m},
          {"shape", sh},  {"x", x},     {"y", y}};
}

// Independent brute-force evaluation used as the oracle's oracle.
std::vector<int> brute_match(const ObjectEntity& e, const SceneGraph& s) {
  std::vector<int> ids;
  for (const auto& o : s.objects()) {
    bool subject_ok = (e.subject.size.empty() || o.size == e.subject.size) &&
                      (e.subject.color.empty() || o.color == e.subject.color) &&
                      (e.subject.material.empty() || o.material == e.subject.material) &&
                      (e.subject.shape.empty() || o.shape == e.subject.shape);
    if (!subject_ok) continue;
    if (e.relation) {
      bool found = false;
      for (const auto& a : s.objects()) {
        if (a.id == o.id) continue;
        bool anchor_ok = (e.anchor->size.empty() || a.size == e.anchor->size) &&
                         (e.anchor->color.empty() || a.color == e.anchor->color) &&
                         (e.anchor->material.empty() || a.material == e.anchor->material) &&
                         (e.anchor->shape.empty() || a.shape == e.anchor->shape);
        if (!anchor_ok) continue;
        bool rel_ok = false;
        switch (*e.relation) {
          case Relation::left_of: rel_ok = o.x < a.x; break;
          case Relation::right_of: rel_ok = o.x > a.x; break;
          case Relation::in_front_of: rel_ok = o.y < a.y; break;
          case Relation::behind: rel_ok = o.y > a.y; break;
        }
        if (rel_ok) {
          found = true;
          break;
        }
      }
      if (!found) continue;
    }
    ids.push_back(o.id);
  }
  return ids;
}

}  // namespace

TEST_CASE("load_scene: relation facts derive from coordinates") {
  GrammarSpec spec = scene_spec();
  nlohmann::json j = {{"objects",
                       {obj(0, "small", "red", "metal", "cube", 0, 1),
                        obj(1, "large", "blue", "rubber", "sphere", 1, 0)}}};
  SceneGraph s = load_scene(j, spec);
  REQUIRE(s.objects().size() == 2);
  const auto& a = s.objects()[0];
  const auto& b = s.objects()[1];
  // 2 left/right facts and 2 front/behind facts.
  CHECK(SceneGraph::related(Relation::left_of, a, b));
  CHECK(SceneGraph::related(Relation::right_of, b, a));
  CHECK(SceneGraph::related(Relation::in_front_of, b, a));
  CHECK(SceneGraph::related(Relation::behind, a, b));
  CHECK_FALSE(SceneGraph::related(Relation::left_of, b, a));
}

TEST_CASE("load_scene: empty scene is valid; ingestion errors are caught") {
  GrammarSpec spec = scene_spec();
  CHECK(load_scene({{"objects", nlohmann::json::array()}}, spec).objects().empty());

  nlohmann::json pink = {{"objects", {obj(0, "small", "pink", "metal", "cube", 0, 0)}}};
  CHECK_THROWS_AS(load_scene(pink, spec), IngestError);

  nlohmann::json dup = {{"objects",
                         {obj(0, "small", "red", "metal", "cube", 0, 0),
                          obj(0, "large", "blue", "rubber", "sphere", 1, 1)}}};
  CHECK_THROWS_AS(load_scene(dup, spec), IngestError);

  nlohmann::json tie = {{"objects",
                         {obj(0, "small", "red", "metal", "cube", 0, 0),
                          obj(1, "large", "blue", "rubber", "sphere", 0, 1)}}};
  CHECK_THROWS_AS(load_scene(tie, spec), IngestError);
}

TEST_CASE("match_entity: absent relation target gives empty match") {
  GrammarSpec spec = scene_spec();
  // Small object is LEFT of the red metal object, so "right of" finds nothing.
  nlohmann::json j = {{"objects",
                       {obj(0, "small", "blue", "rubber", "sphere", 0, 0),
                        obj(1, "large", "red", "metal", "cube", 1, 1)}}};
  SceneGraph s = load_scene(j, spec);
  ParseResult pr =
      parse_question("Is there a small object right of the shiny red object?", spec);
  REQUIRE(pr.ok());
  CHECK(match_entity(pr.question->entity, s).empty());
}

TEST_CASE("match_entity: all-empty subject matches every object") {
  GrammarSpec spec = scene_spec();
  nlohmann::json j = {{"objects",
                       {obj(0, "small", "red", "metal", "cube", 0, 0),
                        obj(1, "large", "blue", "rubber", "sphere", 1, 1),
                        obj(2, "small", "cyan", "rubber", "cylinder", 2, 2)}}};
  SceneGraph s = load_scene(j, spec);
  CHECK(match_entity(ObjectEntity{}, s).size() == 3);
}

TEST_CASE("match_entity equals an independent brute-force double loop") {
  GrammarSpec spec = scene_spec();
  Rng rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    SceneGraph s = generate_scene(spec, 6, rng);
    for (const auto& q : enumerate_questions(spec, 400)) {
      auto got = match_entity(q.entity, s);
      auto want = brute_match(q.entity, s);
      REQUIRE(got.size() == want.size());
      for (size_t i = 0; i < got.size(); ++i) CHECK(got[i]->id == want[i]);
    }
  }
}

TEST_CASE("answer: basic question types") {
  GrammarSpec spec = scene_spec();
  nlohmann::json j = {{"objects",
                       {obj(0, "small", "cyan", "rubber", "sphere", 0, 0),
                        obj(1, "large", "yellow", "metal", "cylinder", 1, 1)}}};
  SceneGraph s = load_scene(j, spec);

  auto q1 = parse_question("Is there a small cyan ball?", spec);
  CHECK(answer(*q1.question, s, spec) == Answer{"yes", AnswerDomain::boolean_answer});

  auto q2 = parse_question("How many objects are there?", spec);
  CHECK(answer(*q2.question, s, spec).value == "2");

  SceneGraph empty(std::vector<SceneObject>{});
  CHECK(answer(*q2.question, empty, spec).value == "0");

  auto q3 = parse_question("What shape is the large yellow object?", spec);
  CHECK(answer(*q3.question, s, spec).value == "cylinder");
}

TEST_CASE("answer: ambiguity strategies") {
  GrammarSpec spec = scene_spec();
  nlohmann::json j = {{"objects",
                       {obj(0, "small", "red", "metal", "cube", 0, 0),
                        obj(1, "small", "blue", "metal", "cube", 1, 1)}}};
  SceneGraph s = load_scene(j, spec);
  auto q = parse_question("What color is the cube?", spec);
  // Two cubes: lowest-id strategy silently answers from object 0.
  CHECK(answer(*q.question, s, spec, AmbiguityStrategy::lowest_id).value == "red");
  CHECK_THROWS_AS(answer(*q.question, s, spec, AmbiguityStrategy::refuse),
                  AmbiguousEntityError);
  // Absent entity: lowest-id still fabricates an answer.
  auto absent = parse_question("What color is the sphere?", spec);
  CHECK(answer(*absent.question, s, spec, AmbiguityStrategy::lowest_id).value == "red");
  CHECK_THROWS_AS(answer(*absent.question, s, spec, AmbiguityStrategy::refuse),
                  AmbiguousEntityError);
}

TEST_CASE("consistency triple: is_there <=> how_many >= 1 <=> match nonempty") {
  GrammarSpec spec = scene_spec();
  Rng rng(55);
  for (int trial = 0; trial < 25; ++trial) {
    SceneGraph s = generate_scene(spec, 1 + static_cast<size_t>(rng.below(6)), rng);
    for (const auto& q : enumerate_questions(spec, 300)) {
      TemplateQuestion is_q{"is_there", q.entity, ""};
      TemplateQuestion hm_q{"how_many", q.entity, ""};
      bool exists = answer(is_q, s, spec).value == "yes";
      bool counted = answer(hm_q, s, spec).value != "0";
      bool matched = !match_entity(q.entity, s).empty();
      CHECK(exists == counted);
      CHECK(counted == matched);
    }
  }
}

TEST_CASE("relation antisymmetry on 2-object scenes") {
  GrammarSpec spec = scene_spec();
  nlohmann::json j = {{"objects",
                       {obj(0, "small", "red", "metal", "cube", 0, 1),
                        obj(1, "large", "blue", "rubber", "sphere", 1, 0)}}};
  SceneGraph s = load_scene(j, spec);
  ObjectEntity left{{"", "red", "", ""}, Relation::left_of, ObjectDescriptor{"", "blue", "", ""}};
  ObjectEntity right{{"", "blue", "", ""}, Relation::right_of, ObjectDescriptor{"", "red", "", ""}};
  auto lm = match_entity(left, s);
  auto rm = match_entity(right, s);
  REQUIRE(lm.size() == 1);
  REQUIRE(rm.size() == 1);
  CHECK(lm[0]->id == 0);
  CHECK(rm[0]->id == 1);
}

TEST_CASE("answer rejects radiograph questions") {
  GrammarSpec cxr = GrammarSpec::load_file("configs/grammar.cxr.json");
  TemplateQuestion q{"is_there", {}, "edema"};
  SceneGraph s(std::vector<SceneObject>{});
  CHECK_THROWS_AS(answer(q, s, cxr), UnsupportedFamilyError);
}
