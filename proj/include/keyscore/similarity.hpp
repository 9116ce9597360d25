#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyscore/http.hpp"
#include "keyscore/key_extraction.hpp"
#include "keyscore/reference_bank.hpp"

namespace keyscore {

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const noexcept { return values.size(); }
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    /// One vector per text, identical output for identical input.
    virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
    /// Identifies the provider for embedding caches.
    virtual std::string id() const = 0;
};

/// Hashed unigram + bigram term frequencies over normalized text, L2-normalized.
/// Texts with no word characters map to a shared sentinel feature.
class HashingEmbedder : public EmbeddingProvider {
public:
    explicit HashingEmbedder(std::size_t dim = 512);

    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
    std::string id() const override;

    EmbeddingVector embed_one(std::string_view text) const;

private:
    std::size_t dim_;
};

/// POST `/embed {"texts": [...]}` -> `{"vectors": [[...]], "dim": n}`.
class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(HttpEndpoint endpoint);

    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
    std::string id() const override;

private:
    HttpEndpoint endpoint_;
    std::mutex mutex_;
    std::optional<std::size_t> dim_;
};

using TextPair = std::pair<std::string, std::string>;

/// Scores text pairs jointly; scores lie in [0, 1].
class PairScorer {
public:
    virtual ~PairScorer() = default;
    virtual std::vector<double> score(std::span<const TextPair> pairs) = 0;
};

/// POST `/score {"pairs": [[a, b], ...]}` -> `{"scores": [...]}`.
class HttpPairScorer : public PairScorer {
public:
    explicit HttpPairScorer(HttpEndpoint endpoint);
    std::vector<double> score(std::span<const TextPair> pairs) override;

private:
    HttpEndpoint endpoint_;
};

/// Cosine of the provider's embeddings, clamped at zero from below.
class EmbeddingPairScorer : public PairScorer {
public:
    explicit EmbeddingPairScorer(std::shared_ptr<EmbeddingProvider> provider);
    std::vector<double> score(std::span<const TextPair> pairs) override;

private:
    std::shared_ptr<EmbeddingProvider> provider_;
};

/// dot(a, b) / (|a| |b|), clamped to [-1, 1]. Throws on dimension mismatch or a zero vector.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

PairSimilarity cosine_similarity(EmbeddingProvider& provider);

/// Bank embeddings keyed by (provider id, bank content hash). Concurrent reads,
/// serialized fills.
class BankEmbeddingCache {
public:
    std::shared_ptr<const std::vector<EmbeddingVector>> get(const ReferenceBank& bank, EmbeddingProvider& provider);
    std::size_t size() const;

private:
    mutable std::shared_mutex mutex_;
    std::mutex fill_mutex_;
    std::map<std::string, std::shared_ptr<const std::vector<EmbeddingVector>>> entries_;
};

struct ScoredPair {
    JustificationKey key;
    std::string ref_id;
    double similarity = 0.0;
};

/// Argmax of cosine(key, reference); ties go to the lowest ref_id.
ScoredPair best_match(const JustificationKey& key, const EmbeddingVector& key_vector, const ReferenceBank& bank,
                      std::span<const EmbeddingVector> bank_vectors);
ScoredPair best_match(const JustificationKey& key, const ReferenceBank& bank, EmbeddingProvider& provider,
                      BankEmbeddingCache& cache);

struct AnalyticScore {
    ScoredPair best;
    int score = 0;
};

/// 1 iff the best reference is correct and its similarity is strictly above `threshold`.
AnalyticScore analytic_score(const ScoredPair& pair, const ReferenceBank& bank, double threshold = 0.5);

/// min(sum, max_score); scores outside {0, 1} are rejected.
int holistic_score(std::span<const int> analytic, int max_score);

struct GradingOptions {
    double threshold = 0.5;
    /// Count at most one point per distinct best reference.
    bool dedup_by_reference = false;
};

struct HolisticResult {
    std::string answer_id;
    std::vector<AnalyticScore> analytic;
    int holistic = 0;
    std::vector<std::string> warnings;
};

nlohmann::json to_json(const HolisticResult& r);
HolisticResult holistic_from_json(const nlohmann::json& j);

/// Scores an existing extraction: one AnalyticScore per key across sub-questions.
HolisticResult score_extraction(const ExtractionResult& extraction, const Question& question,
                                const ReferenceBank& bank, EmbeddingProvider& provider, BankEmbeddingCache& cache,
                                const GradingOptions& options = {});

HolisticResult grade_answer(const StudentAnswer& answer, const QuestionSetup& setup, const ReferenceBank& bank,
                            CompletionClient& client, const CompletionParams& params, EmbeddingProvider& provider,
                            BankEmbeddingCache& cache, const GradingOptions& options = {});

}  // namespace keyscore
