#include <doctest.h>

#include <filesystem>
#include <thread>

#include "qachain/backends.hpp"
#include "qachain/chain.hpp"
#include "qachain/transcript.hpp"

#include <httplib.h>

using namespace qachain;

namespace {

GrammarSpec scene_spec() { return GrammarSpec::load_file("configs/grammar.scene.json"); }

SceneGraph small_scene(const GrammarSpec& spec) {
  nlohmann::json j = {{"objects",
                       {{{"id", 0}, {"size", "small"}, {"color", "red"}, {"material", "metal"},
                         {"shape", "cube"}, {"x", 0}, {"y", 0}},
                        {{"id", 1}, {"size", "large"}, {"color", "blue"}, {"material", "rubber"},
                         {"shape", "sphere"}, {"x", 1}, {"y", 1}},
                        {{"id", 2}, {"size", "small"}, {"color", "cyan"}, {"material", "rubber"},
                         {"shape", "cylinder"}, {"x", 2}, {"y", 2}}}}};
  return load_scene(j, spec);
}

std::filesystem::path tmp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "qachain_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("scripted llm returns queue items in order, then goes silent") {
  ScriptedLlm llm({"Is there a red cube?", "{yes}"});
  std::vector<ChatMessage> msgs{{"system", "x"}};
  CHECK(llm.complete(msgs) == "Is there a red cube?");
  CHECK(llm.complete(msgs) == "{yes}");
  CHECK(llm.complete(msgs) == "");
}

TEST_CASE("oracle vqa: answers, rejection, preconditions") {
  GrammarSpec spec = scene_spec();
  OracleVqa vqa(spec);
  vqa.add_scene("s", small_scene(spec));
  CHECK(vqa.answer("How many objects are there?", "s") == "3");
  CHECK(vqa.answer("Is there a cyan cylinder?", "s") == "yes");
  CHECK_THROWS_AS(vqa.answer("what shape do the most objects have in common?", "s"),
                  VqaRejection);
  CHECK_THROWS_AS(vqa.answer("", "s"), UsageError);
  CHECK_THROWS_AS(vqa.answer("Is there a cube?", "missing"), IngestError);
}

TEST_CASE("no hidden state: sequential dialogues do not influence each other") {
  GrammarSpec spec = scene_spec();
  OracleVqa vqa(spec);
  vqa.add_scene("s", small_scene(spec));
  TaskInstruction ins = build_instruction("Is there a red cube?", spec, 5, {}, {});
  ScriptedLlm llm1({"Is there a red cube?", "{yes}"});
  ScriptedLlm llm2({"Is there a red cube?", "{yes}"});
  Dialogue d1 = run_chain(ins, "s", llm1, vqa, spec);
  Dialogue d2 = run_chain(ins, "s", llm2, vqa, spec);
  CHECK(transcript_line(d1, spec) == transcript_line(d2, spec));
}

TEST_CASE("record then replay round-trips; divergence fails loudly") {
  GrammarSpec spec = scene_spec();
  ScriptedLlm inner({"hello", "world"});
  RecordingLlm recorder(inner);
  std::vector<ChatMessage> m1{{"system", "a"}};
  std::vector<ChatMessage> m2{{"system", "a"}, {"assistant", "hello"}, {"user", "reply"}};
  CHECK(recorder.complete(m1) == "hello");
  CHECK(recorder.complete(m2) == "world");
  auto path = tmp_file("rec.jsonl");
  recorder.save(path);

  ReplayLlm replay = ReplayLlm::from_file(path);
  CHECK(replay.complete(m1) == "hello");
  CHECK(replay.complete(m2) == "world");
  CHECK_THROWS_AS(replay.complete(m1), ReplayMismatch);  // exhausted

  ReplayLlm replay2 = ReplayLlm::from_file(path);
  std::vector<ChatMessage> divergent{{"system", "b"}};
  try {
    replay2.complete(divergent);
    FAIL("expected mismatch");
  } catch (const ReplayMismatch& e) {
    CHECK(e.index == 0);
  }
}

TEST_CASE("vqa record/replay") {
  GrammarSpec spec = scene_spec();
  OracleVqa oracle(spec);
  oracle.add_scene("s", small_scene(spec));
  RecordingVqa recorder(oracle);
  CHECK(recorder.answer("How many objects are there?", "s") == "3");
  auto path = tmp_file("vqa_rec.jsonl");
  recorder.save(path);
  ReplayVqa replay = ReplayVqa::from_file(path);
  CHECK(replay.answer("How many objects are there?", "s") == "3");
  ReplayVqa replay2 = ReplayVqa::from_file(path);
  CHECK_THROWS_AS(replay2.answer("Is there a cube?", "s"), ReplayMismatch);
}

TEST_CASE("http llm and vqa clients speak the chat-completion wire shape") {
  GrammarSpec spec = scene_spec();
  OracleVqa oracle(spec);
  oracle.add_scene("s", small_scene(spec));

  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body);
    CHECK(j.at("messages").at(0).at("role") == "system");
    nlohmann::json out = {
        {"choices", {{{"message", {{"content", "  \"Is there a red cube?\"  "}}}}}}};
    res.set_content(out.dump(), "application/json");
  });
  server.Post("/vqa", [&](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body);
    std::string ans = oracle.answer(j.at("question").get<std::string>(),
                                    j.at("image_id").get<std::string>());
    res.set_content(nlohmann::json{{"answer", ans}}.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendConfig cfg;
  cfg.kind = BackendConfig::Kind::http;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  HttpLlm llm(cfg);
  // Leading/trailing whitespace and quotes are stripped.
  CHECK(llm.complete({{"system", "hi"}}) == "Is there a red cube?");

  BackendConfig vcfg;
  vcfg.kind = BackendConfig::Kind::http;
  vcfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/vqa";
  HttpVqa http_vqa(vcfg);
  CHECK(http_vqa.answer("How many objects are there?", "s") == "3");

  // Substitutability: identical transcripts from the in-process oracle and an
  // http double serving the same oracle.
  TaskInstruction ins = build_instruction("Is there a cyan cylinder?", spec, 5, {}, {});
  ScriptedLlm s1({"Is there a cyan cylinder?", "{yes}"});
  ScriptedLlm s2({"Is there a cyan cylinder?", "{yes}"});
  Dialogue direct = run_chain(ins, "s", s1, oracle, spec);
  Dialogue via_http = run_chain(ins, "s", s2, http_vqa, spec);
  CHECK(transcript_line(direct, spec) == transcript_line(via_http, spec));

  server.stop();
  th.join();
}

TEST_CASE("http llm retries then surfaces a backend error") {
  BackendConfig cfg;
  cfg.kind = BackendConfig::Kind::http;
  cfg.endpoint = "http://127.0.0.1:9/nothing";  // discard port, nothing listens
  cfg.retries = 2;
  cfg.timeout_s = 1;
  HttpLlm llm(cfg);
  CHECK_THROWS_AS(llm.complete({{"system", "x"}}), BackendError);
}

TEST_CASE("messages hash is order and content sensitive") {
  std::vector<ChatMessage> a{{"system", "x"}, {"user", "y"}};
  std::vector<ChatMessage> b{{"system", "x"}, {"user", "z"}};
  std::vector<ChatMessage> c{{"user", "y"}, {"system", "x"}};
  CHECK(messages_hash(a) != messages_hash(b));
  CHECK(messages_hash(a) != messages_hash(c));
  CHECK(messages_hash(a) == messages_hash(a));
}
