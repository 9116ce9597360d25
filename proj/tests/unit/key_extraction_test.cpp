#include <gtest/gtest.h>

#include <httplib.h>

#include <fstream>
#include <thread>

#include "../support/synthetic.hpp"
#include "keyscore/errors.hpp"
#include "keyscore/io.hpp"
#include "keyscore/key_extraction.hpp"

namespace keyscore {
namespace {

using nlohmann::json;

QuestionSetup replication_question() {
    QuestionSetup s;
    s.question.question_id = "1";
    s.question.full_text =
        "After reading the group's procedure, describe what additional information you would need in order to "
        "replicate the experiment. Make sure to include at least three pieces of additional information.";
    s.question.sub_questions = {{"a", "What additional information is needed about the vinegar?"},
                                {"b", "What additional information is needed about the containers?"},
                                {"c", "What additional information is needed about the samples?"}};
    s.question.rubric_correct_answers = {"how much vinegar was used", "what type of vinegar was used",
                                         "what size container to use", "what size the samples should be"};
    s.prompt.instruction =
        "Describe what additional information you would need in order to replicate the experiment:\n"
        "(a) about the vinegar (b) about the containers (c) about the samples";
    s.prompt.demo.input_answer =
        "You would need to know how much vinegar to pour in, what kind of container and how big the samples are.";
    s.prompt.demo.output_keys = {{"a", {"how much vinegar to pour in"}},
                                 {"b", {"what kind of container"}},
                                 {"c", {"how big the samples are"}}};
    return s;
}

TEST(BuildPrompt, LayoutHoldsInstructionDemoAndOpenCue) {
    const auto s = replication_question();
    const std::string p = build_prompt(s.question, s.prompt, "I need the amount of vinegar.");
    EXPECT_TRUE(p.starts_with(s.prompt.instruction + "\n\nInput: {\"student's answer\":"));
    EXPECT_NE(p.find("Output: {\"a\":[\"how much vinegar to pour in\"],\"b\":[\"what kind of container\"],"
                     "\"c\":[\"how big the samples are\"]}"),
              std::string::npos);
    EXPECT_TRUE(p.ends_with("Input: {\"student's answer\":\"I need the amount of vinegar.\"}\nOutput:"));
    // one worked example, then the test input
    std::size_t inputs = 0;
    for (auto at = p.find("Input: "); at != std::string::npos; at = p.find("Input: ", at + 1)) ++inputs;
    EXPECT_EQ(inputs, 2u);
}

TEST(BuildPrompt, DeterministicAndInjective) {
    const auto s = replication_question();
    EXPECT_EQ(build_prompt(s.question, s.prompt, "abc"), build_prompt(s.question, s.prompt, "abc"));
    EXPECT_NE(build_prompt(s.question, s.prompt, "abc"), build_prompt(s.question, s.prompt, "abd"));
    EXPECT_NE(build_prompt(s.question, s.prompt, "a\"b"), build_prompt(s.question, s.prompt, "a'b"));
}

TEST(BuildPrompt, DerivesInstructionFromSubQuestions) {
    auto s = replication_question();
    s.prompt.instruction.clear();
    const std::string p = build_prompt(s.question, s.prompt, "x");
    EXPECT_TRUE(p.starts_with("(a) What additional information is needed about the vinegar?\n(b) "));
}

TEST(BuildPrompt, UnknownDemoLabelIsAnError) {
    auto s = replication_question();
    s.prompt.demo.output_keys["d"] = {"something"};
    EXPECT_THROW(build_prompt(s.question, s.prompt, "x"), ValidationError);
}

TEST(BuildPrompt, DemoWithoutSpansIsAnError) {
    auto s = replication_question();
    s.prompt.demo.output_keys = {{"a", {}}};
    EXPECT_THROW(build_prompt(s.question, s.prompt, "x"), ValidationError);
}

TEST(PromptTemplate, ParsesFileFormat) {
    const auto t = prompt_template_from_json(json::parse(
        R"({"instruction": "i", "demo_input": "d", "demo_output": {"a": ["k1", "k2"], "b": "k3"}})"));
    EXPECT_EQ(t.demo.output_keys.at("a").size(), 2u);
    EXPECT_EQ(t.demo.output_keys.at("b"), std::vector<std::string>{"k3"});
}

TEST(ParseExtraction, OneKeyPerLabel) {
    const auto q = replication_question().question;
    const auto r = parse_extraction(R"({"a": "the vinegar amount", "b": "container size", "c": "sample size"})", q, "7");
    ASSERT_EQ(r.keys.size(), 3u);
    for (const auto& k : r.keys) EXPECT_EQ(k.spans.size(), 1u);
    EXPECT_EQ(r.answer_id, "7");
    EXPECT_EQ(r.key_count(), 3u);
}

TEST(ParseExtraction, ShapeNormalization) {
    const auto q = replication_question().question;
    const auto r = parse_extraction(R"({"a": ["k1","k2"], "b": [], "c": "k3"})", q);
    EXPECT_EQ(r.keys[0].spans, (std::vector<std::string>{"k1", "k2"}));
    EXPECT_TRUE(r.keys[1].spans.empty());
    EXPECT_EQ(r.keys[2].spans, std::vector<std::string>{"k3"});
}

TEST(ParseExtraction, SurroundingProseAndMissingLabels) {
    const auto q = replication_question().question;
    const auto r = parse_extraction("Sure! Here you go:\n{\"a\": \"x {y}\", \"z\": \"ignored\"}\nThanks.", q);
    ASSERT_EQ(r.keys.size(), 3u);
    EXPECT_EQ(r.keys[0].spans, std::vector<std::string>{"x {y}"});
    EXPECT_TRUE(r.keys[1].spans.empty());
    EXPECT_TRUE(r.keys[2].spans.empty());
}

TEST(ParseExtraction, Failures) {
    const auto q = replication_question().question;
    EXPECT_THROW(parse_extraction("garbage", q), ExtractionError);
    EXPECT_THROW(parse_extraction(R"({"a": 3})", q), ExtractionError);
    EXPECT_THROW(parse_extraction(R"({"a": {"nested": "x"}})", q), ExtractionError);
    EXPECT_THROW(parse_extraction(R"({"a": ["ok", 1]})", q), ExtractionError);
    try {
        parse_extraction("no json {here", q);
    } catch (const ExtractionError& e) {
        EXPECT_EQ(e.raw(), "no json {here");
    }
}

TEST(ParseExtraction, NeverInventsLabels) {
    const auto q = replication_question().question;
    for (const char* raw : {R"({})", R"({"q": "1", "a": null})", R"({"c": ["x", " "], "extra": []})"}) {
        const auto r = parse_extraction(raw, q);
        ASSERT_EQ(r.keys.size(), 3u);
        EXPECT_EQ(r.keys[0].label, "a");
        EXPECT_EQ(r.keys[1].label, "b");
        EXPECT_EQ(r.keys[2].label, "c");
        for (const auto& k : r.keys)
            for (const auto& s : k.spans) EXPECT_FALSE(s.empty());
    }
}

class FixedClient : public CompletionClient {
public:
    explicit FixedClient(std::string reply) : reply_(std::move(reply)) {}
    std::string complete(std::string_view, const CompletionParams& p) override {
        ++calls;
        temperature = p.temperature;
        return reply_;
    }
    int calls = 0;
    double temperature = -1;

private:
    std::string reply_;
};

TEST(ReplayClient, HitMissAndRecord) {
    testing::TempDir dir("replay");
    const auto path = dir / "fixtures.jsonl";
    auto live = std::make_shared<FixedClient>("{\"a\": \"k\"}");
    CompletionParams params;
    params.temperature = 0.7;
    {
        ReplayCompletionClient recorder(path, live);
        EXPECT_EQ(recorder.complete("prompt one", params), "{\"a\": \"k\"}");
        EXPECT_EQ(recorder.complete("prompt one", params), "{\"a\": \"k\"}");
        EXPECT_EQ(live->calls, 1);
        EXPECT_EQ(live->temperature, 0.0);
        EXPECT_EQ(recorder.live_calls(), 1u);
    }
    ReplayCompletionClient replay(path);
    EXPECT_EQ(replay.size(), 1u);
    EXPECT_EQ(replay.complete("prompt one", params), "{\"a\": \"k\"}");
    try {
        replay.complete("prompt two", params);
        FAIL() << "expected a fixture miss";
    } catch (const FixtureMiss& e) {
        EXPECT_EQ(e.digest(), io::sha256_hex("prompt two"));
        EXPECT_NE(std::string(e.what()).find("fixture miss"), std::string::npos);
    }
    const auto row = json::parse(io::read_file(path));
    EXPECT_EQ(row["prompt_sha256"], io::sha256_hex("prompt one"));
    EXPECT_EQ(row["model_id"], params.model_id);
}

TEST(ReplayClient, MissingFixtureFileWithoutBackend) {
    testing::TempDir dir("replay-missing");
    EXPECT_THROW(ReplayCompletionClient(dir / "none.jsonl"), Error);
}

TEST(Sha256, KnownDigest) {
    EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ExtractKeys, ParseFailureDegradesToEmpty) {
    const auto s = replication_question();
    FixedClient client("I cannot comply.");
    const StudentAnswer a{"5", "1", "some answer", 1, Split::test, false};
    const auto r = extract_keys(s, a, client, {});
    EXPECT_TRUE(r.failed);
    EXPECT_EQ(r.key_count(), 0u);
    EXPECT_EQ(r.keys.size(), 3u);
    EXPECT_EQ(r.raw_completion, "I cannot comply.");
}

TEST(ExtractKeys, EmptyAnswerSkipsBackend) {
    const auto s = replication_question();
    FixedClient client("{}");
    const auto r = extract_keys(s, {"5", "1", "   ", 0, Split::test, false}, client, {});
    EXPECT_FALSE(r.failed);
    EXPECT_EQ(r.key_count(), 0u);
    EXPECT_EQ(client.calls, 0);
}

TEST(ExtractKeys, TransportErrorsPropagate) {
    struct Failing : CompletionClient {
        std::string complete(std::string_view, const CompletionParams&) override {
            throw TransportError("down", 503, true);
        }
    } client;
    const auto s = replication_question();
    EXPECT_THROW(extract_keys(s, {"5", "1", "text", 0, Split::test, false}, client, {}), TransportError);
}

TEST(ExtractBatch, OrderFailuresAndForcedTemperature) {
    testing::SyntheticCorpus corpus(2, 30, 3);
    testing::ScriptedCompletionClient scripted(corpus);
    const auto answers = corpus.student_answers();
    CompletionParams params;
    params.temperature = 1.0;
    const auto batch = extract_batch(corpus.setup_map(), answers, scripted, params, 1);
    ASSERT_EQ(batch.results.size(), answers.size());
    for (std::size_t i = 0; i < answers.size(); ++i) EXPECT_EQ(batch.results[i].answer_id, answers[i].answer_id);
    EXPECT_EQ(batch.failures, 1u);  // one scripted garbage completion
    EXPECT_EQ(scripted.last_temperature(), 0.0);
    std::size_t total = 0;
    for (const auto& a : corpus.answers())
        if (!a.garbage_completion) total += a.keys.size();
    std::size_t extracted = 0;
    for (const auto& r : batch.results) extracted += r.key_count();
    EXPECT_EQ(extracted, total);
}

TEST(ExtractBatch, ConcurrentReplayMatchesSequential) {
    testing::SyntheticCorpus corpus(2, 30, 3);
    testing::TempDir dir("batch");
    const auto path = dir / "fx.jsonl";
    auto scripted = std::make_shared<testing::ScriptedCompletionClient>(corpus);
    const auto answers = corpus.student_answers();
    {
        ReplayCompletionClient recorder(path, scripted);
        extract_batch(corpus.setup_map(), answers, recorder, {}, 4);
    }
    ReplayCompletionClient replay(path);
    const auto seq = extract_batch(corpus.setup_map(), answers, replay, {}, 1);
    const auto par = extract_batch(corpus.setup_map(), answers, replay, {}, 8);
    ASSERT_EQ(seq.results.size(), par.results.size());
    for (std::size_t i = 0; i < seq.results.size(); ++i)
        EXPECT_EQ(to_json(seq.results[i]).dump(), to_json(par.results[i]).dump());
}

TEST(ExtractBatch, MissingSetupIsAnError) {
    testing::SyntheticCorpus corpus(1, 12, 3);
    FixedClient client("{}");
    auto answers = corpus.student_answers();
    answers[0].question_id = "nope";
    EXPECT_THROW(extract_batch(corpus.setup_map(), answers, client, {}), ValidationError);
}

TEST(HttpCompletion, SpeaksTheWireFormat) {
    httplib::Server server;
    json seen;
    std::string auth;
    server.Post("/complete", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(R"({"text": "{\"a\": \"k\"}"})", "application/json");
    });
    server.Post("/fail", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
    server.Post("/bad", [](const httplib::Request&, httplib::Response& res) { res.set_content("{}", "application/json"); });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpEndpoint ep;
    ep.base_url = "http://127.0.0.1:" + std::to_string(port);
    ep.bearer_token = "secret";
    HttpCompletionClient client(ep);
    CompletionParams p;
    p.temperature = 0.9;
    p.max_tokens = 64;
    EXPECT_EQ(client.complete("hello", p), "{\"a\": \"k\"}");
    EXPECT_EQ(seen["model"], p.model_id);
    EXPECT_EQ(seen["prompt"], "hello");
    EXPECT_EQ(seen["temperature"], 0);
    EXPECT_EQ(seen["max_tokens"], 64);
    EXPECT_EQ(auth, "Bearer secret");

    try {
        HttpCompletionClient(ep, "/fail").complete("x", p);
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_EQ(e.status(), 503);
        EXPECT_TRUE(e.retryable());
    }
    EXPECT_THROW(HttpCompletionClient(ep, "/bad").complete("x", p), TransportError);
    server.stop();
    t.join();

    HttpEndpoint dead;
    dead.base_url = "http://127.0.0.1:" + std::to_string(port);
    dead.timeout_seconds = 0.5;
    try {
        HttpCompletionClient(dead).complete("x", p);
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_EQ(e.status(), 0);
    }
}

}  // namespace
}  // namespace keyscore
