#include <gtest/gtest.h>

#include <httplib.h>

#include <cmath>
#include <random>
#include <thread>

#include "../support/synthetic.hpp"
#include "keyscore/errors.hpp"
#include "keyscore/similarity.hpp"

namespace keyscore {
namespace {

using nlohmann::json;

/// Returns fixed vectors for known texts.
class TableEmbedder : public EmbeddingProvider {
public:
    explicit TableEmbedder(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}
    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override {
        std::vector<EmbeddingVector> out;
        for (const auto& t : texts) out.push_back({table_.at(t)});
        return out;
    }
    std::string id() const override { return "table"; }

private:
    std::map<std::string, std::vector<double>> table_;
};

ReferenceBank bank_with(std::vector<std::pair<std::string, Polarity>> refs) {
    ReferenceBank bank;
    bank.question_id = "1";
    for (std::size_t i = 0; i < refs.size(); ++i) {
        ReferenceAnswer r;
        r.ref_id = make_ref_id(i + 1);
        r.question_id = "1";
        r.text = refs[i].first;
        r.polarity = refs[i].second;
        r.origin = r.polarity == Polarity::correct && i == 0 ? Origin::rubric : Origin::augmented;
        if (r.polarity == Polarity::correct) r.anchor_ref = "R0001";
        bank.references.push_back(r);
    }
    return bank;
}

TEST(Cosine, Examples) {
    EXPECT_DOUBLE_EQ(cosine({{1, 0}}, {{1, 0}}), 1.0);
    EXPECT_DOUBLE_EQ(cosine({{1, 0}}, {{0, 1}}), 0.0);
    EXPECT_NEAR(cosine({{1, 0}}, {{1, 1}}), 0.7071067811865476, 1e-12);
    EXPECT_DOUBLE_EQ(cosine({{1, 0}}, {{-1, 0}}), -1.0);
    EXPECT_THROW(cosine({{1, 0}}, {{1, 0, 0}}), ValidationError);
    EXPECT_THROW(cosine({{0, 0}}, {{1, 0}}), ValidationError);
}

TEST(Cosine, ScaleInvariantAndBounded) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 200; ++trial) {
        EmbeddingVector a{{n(rng), n(rng), n(rng)}}, b{{n(rng), n(rng), n(rng)}};
        const double c = cosine(a, b);
        EXPECT_LE(std::abs(c), 1.0);
        EmbeddingVector scaled = a;
        for (auto& v : scaled.values) v *= 37.5;
        EXPECT_NEAR(cosine(scaled, b), c, 1e-12);
    }
}

TEST(HashingEmbedder, DeterministicUnitNorm) {
    HashingEmbedder e;
    const auto v = e.embed_one("the amount of vinegar");
    EXPECT_EQ(v.dim(), 512u);
    double norm = 0;
    for (double x : v.values) norm += x * x;
    EXPECT_NEAR(norm, 1.0, 1e-12);
    EXPECT_EQ(v.values, HashingEmbedder().embed_one("the amount of vinegar").values);
    EXPECT_EQ(v.values, e.embed_one("The amount of   vinegar.").values);
    EXPECT_NEAR(cosine(e.embed_one("..."), e.embed_one("?")), 1.0, 1e-12);  // shared sentinel
    EXPECT_LT(cosine(v, e.embed_one("size of the cups")), 0.5);
}

TEST(BestMatch, TiesGoToLowestRefId) {
    const auto bank = bank_with({{"r1", Polarity::correct}, {"r2", Polarity::incorrect}, {"r3", Polarity::correct}});
    const std::vector<EmbeddingVector> refs{{{1, 0}}, {{1, 0}}, {{0, 1}}};
    const auto best = best_match({"1", "a", "k"}, {{2, 0}}, bank, refs);
    EXPECT_EQ(best.ref_id, "R0001");
    EXPECT_DOUBLE_EQ(best.similarity, 1.0);
}

TEST(BestMatch, KeyEqualToReferenceScoresOne) {
    HashingEmbedder e;
    BankEmbeddingCache cache;
    const auto bank = bank_with({{"how much vinegar", Polarity::correct}, {"cup color", Polarity::incorrect}});
    const auto best = best_match({"1", "a", "how much vinegar"}, bank, e, cache);
    EXPECT_EQ(best.ref_id, "R0001");
    EXPECT_NEAR(best.similarity, 1.0, 1e-12);
    best_match({"1", "a", "cup"}, bank, e, cache);
    EXPECT_EQ(cache.size(), 1u);
}

TEST(AnalyticScore, ThresholdTruthTable) {
    const auto bank = bank_with({{"c", Polarity::correct}, {"i", Polarity::incorrect}});
    struct Case {
        const char* ref;
        double sim;
        int expected;
    };
    for (const Case c : {Case{"R0001", 0.49, 0}, Case{"R0001", 0.50, 0}, Case{"R0001", 0.51, 1},
                         Case{"R0002", 0.49, 0}, Case{"R0002", 0.50, 0}, Case{"R0002", 0.51, 0}}) {
        const ScoredPair p{{"1", "a", "k"}, c.ref, c.sim};
        EXPECT_EQ(analytic_score(p, bank).score, c.expected) << c.ref << " " << c.sim;
    }
    EXPECT_THROW(analytic_score({{"1", "a", "k"}, "R0009", 0.9}, bank), ValidationError);
}

TEST(HolisticScore, SumCappedAtMax) {
    const std::vector<int> three{1, 1, 1}, four{1, 1, 1, 1}, mixed{0, 1, 0}, none{};
    EXPECT_EQ(holistic_score(three, 3), 3);
    EXPECT_EQ(holistic_score(four, 3), 3);
    EXPECT_EQ(holistic_score(mixed, 3), 1);
    EXPECT_EQ(holistic_score(none, 3), 0);
    const std::vector<int> bad{2};
    EXPECT_THROW(holistic_score(bad, 3), ValidationError);
}

struct ControlledSetup {
    // correct reference along x, incorrect along y
    ReferenceBank bank = bank_with({{"C", Polarity::correct}, {"I", Polarity::incorrect}});
    TableEmbedder embedder{{{"C", {1, 0, 0}},
                            {"I", {0, 1, 0}},
                            {"k08", {0.8, 0.6, 0}},
                            {"k03", {0.3, 0.1, std::sqrt(0.9)}},
                            {"k09", {0.1, 0.9, std::sqrt(0.18)}},
                            {"k07", {0.7, 0.1, std::sqrt(0.5)}}}};
    Question question = [] {
        Question q;
        q.question_id = "1";
        q.full_text = "q";
        q.sub_questions = {{"a", "a"}, {"b", "b"}, {"c", "c"}};
        q.rubric_correct_answers = {"C"};
        return q;
    }();
};

TEST(ScoreExtraction, MixedKeys) {
    ControlledSetup s;
    BankEmbeddingCache cache;
    ExtractionResult ex;
    ex.answer_id = "42";
    ex.keys = {{"a", {"k08"}}, {"b", {"k03"}}, {"c", {"k09"}}};
    const auto r = score_extraction(ex, s.question, s.bank, s.embedder, cache);
    ASSERT_EQ(r.analytic.size(), 3u);
    EXPECT_EQ(r.analytic[0].score, 1);
    EXPECT_EQ(r.analytic[1].score, 0);
    EXPECT_EQ(r.analytic[2].score, 0);
    EXPECT_EQ(r.analytic[2].best.ref_id, "R0002");
    EXPECT_EQ(r.holistic, 1);
}

TEST(ScoreExtraction, DedupByReference) {
    ControlledSetup s;
    BankEmbeddingCache cache;
    ExtractionResult ex;
    ex.answer_id = "42";
    ex.keys = {{"a", {"k08"}}, {"b", {"k07"}}, {"c", {}}};
    EXPECT_EQ(score_extraction(ex, s.question, s.bank, s.embedder, cache).holistic, 2);
    GradingOptions o;
    o.dedup_by_reference = true;
    EXPECT_EQ(score_extraction(ex, s.question, s.bank, s.embedder, cache, o).holistic, 1);
}

TEST(ScoreExtraction, FailedExtractionScoresZeroWithWarning) {
    ControlledSetup s;
    BankEmbeddingCache cache;
    ExtractionResult ex;
    ex.answer_id = "5";
    ex.failed = true;
    ex.failure = "no JSON object";
    const auto r = score_extraction(ex, s.question, s.bank, s.embedder, cache);
    EXPECT_EQ(r.holistic, 0);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_EQ(holistic_from_json(to_json(r)).warnings, r.warnings);
}

TEST(GradeAnswer, EndToEndWithScriptedBackend) {
    testing::SyntheticCorpus corpus(1, 20, 5);
    testing::ScriptedCompletionClient client(corpus);
    HashingEmbedder embedder;
    BankEmbeddingCache cache;
    const auto& setup = corpus.setups()[0];
    const auto bank = init_from_rubric(setup.question);
    for (const auto& a : corpus.answers()) {
        const auto r = grade_answer(a.answer, setup, bank, client, {}, embedder, cache);
        EXPECT_GE(r.holistic, 0);
        EXPECT_LE(r.holistic, setup.question.max_score);
        EXPECT_EQ(to_json(holistic_from_json(to_json(r))), to_json(r));
    }
    EXPECT_EQ(cache.size(), 1u);
}

TEST(Monotonicity, AddingCorrectReferencesNeverLowersScore) {
    testing::SyntheticCorpus corpus(1, 40, 9);
    const auto& q = corpus.setups()[0].question;
    HashingEmbedder embedder;
    auto bank = init_from_rubric(q);
    std::vector<AnnotationRecord> wrong, right;
    for (const auto& a : corpus.answers())
        for (const auto& k : a.keys)
            (k.correct ? right : wrong).push_back({a.answer.answer_id, {{k.label, k.span, k.correct ? 1 : 0,
                                                    k.correct ? std::optional(k.matched) : std::nullopt}}});
    const auto base = augment(bank, wrong);
    const auto richer = augment(base, right);
    BankEmbeddingCache cache;
    for (const auto& a : corpus.answers()) {
        ExtractionResult ex;
        ex.answer_id = a.answer.answer_id;
        for (const auto& sub : q.sub_questions) ex.keys.push_back({sub.label, {}});
        for (const auto& k : a.keys)
            for (auto& sk : ex.keys)
                if (sk.label == k.label) sk.spans.push_back(k.span);
        EXPECT_LE(score_extraction(ex, q, base, embedder, cache).holistic,
                  score_extraction(ex, q, richer, embedder, cache).holistic);
    }
}

class LocalServer {
public:
    LocalServer() {
        port_ = server.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() {
        server.stop();
        thread_.join();
    }
    HttpEndpoint endpoint() const {
        HttpEndpoint e;
        e.base_url = "http://127.0.0.1:" + std::to_string(port_);
        return e;
    }
    httplib::Server server;

private:
    int port_ = 0;
    std::thread thread_;
};

TEST(HttpEmbedding, VectorsAndDimensionDrift) {
    int dim = 3;
    LocalServer local;
    local.server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        json vectors = json::array();
        for (std::size_t i = 0; i < body["texts"].size(); ++i) vectors.push_back(std::vector<double>(dim, 1.0));
        res.set_content(json{{"vectors", vectors}, {"dim", dim}}.dump(), "application/json");
    });
    HttpEmbeddingProvider provider(local.endpoint());
    const std::vector<std::string> texts{"a", "b"};
    const auto v = provider.embed(texts);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_EQ(v[0].dim(), 3u);
    dim = 4;
    EXPECT_THROW(provider.embed(texts), Error);
}

TEST(HttpEmbedding, ServerErrorIsRetryableTransportError) {
    LocalServer local;
    local.server.Post("/embed", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    HttpEmbeddingProvider provider(local.endpoint());
    const std::vector<std::string> texts{"a"};
    try {
        provider.embed(texts);
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_EQ(e.status(), 500);
        EXPECT_TRUE(e.retryable());
    }
}

TEST(HttpPairScorer, ScoresPairs) {
    LocalServer local;
    local.server.Post("/score", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        json scores = json::array();
        for (const auto& p : body["pairs"]) scores.push_back(p[0] == p[1] ? 1.0 : 0.25);
        res.set_content(json{{"scores", scores}}.dump(), "application/json");
    });
    HttpPairScorer scorer(local.endpoint());
    const std::vector<TextPair> pairs{{"a", "a"}, {"a", "b"}};
    EXPECT_EQ(scorer.score(pairs), (std::vector<double>{1.0, 0.25}));
}

TEST(EmbeddingPairScorer, ClampsNegativeCosine) {
    auto table = std::make_shared<TableEmbedder>(
        std::map<std::string, std::vector<double>>{{"a", {1, 0}}, {"b", {-1, 0}}, {"c", {1, 1}}});
    EmbeddingPairScorer scorer(table);
    const std::vector<TextPair> pairs{{"a", "b"}, {"a", "c"}};
    const auto s = scorer.score(pairs);
    EXPECT_EQ(s[0], 0.0);
    EXPECT_NEAR(s[1], 0.7071067811865476, 1e-12);
}

}  // namespace
}  // namespace keyscore
