#include "keyscore/similarity.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "keyscore/errors.hpp"
#include "keyscore/text.hpp"

namespace keyscore {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80 || c == '\''; }

std::vector<std::string> word_tokens(std::string_view raw) {
    const std::string norm = text::normalize_text(raw);
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : norm) {
        if (is_word_char(c)) {
            cur += static_cast<char>(c);
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

}  // namespace

HashingEmbedder::HashingEmbedder(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
}

std::string HashingEmbedder::id() const { return "hashing-" + std::to_string(dim_); }

EmbeddingVector HashingEmbedder::embed_one(std::string_view raw) const {
    EmbeddingVector v;
    v.values.assign(dim_, 0.0);
    const auto tokens = word_tokens(raw);
    auto add = [&](const std::string& feature) { v.values[fnv1a(feature) % dim_] += 1.0; };
    if (tokens.empty()) add("<empty>");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        add("u:" + tokens[i]);
        if (i + 1 < tokens.size()) add("b:" + tokens[i] + " " + tokens[i + 1]);
    }
    double norm = 0;
    for (double x : v.values) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v.values) x /= norm;
    return v;
}

std::vector<EmbeddingVector> HashingEmbedder::embed(std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::string HttpEmbeddingProvider::id() const { return "http:" + endpoint_.base_url; }

std::vector<EmbeddingVector> HttpEmbeddingProvider::embed(std::span<const std::string> texts) {
    if (texts.empty()) return {};
    for (const auto& t : texts)
        if (t.empty()) throw ValidationError("cannot embed an empty text");
    const json res = post_json(endpoint_, "/embed", {{"texts", std::vector<std::string>(texts.begin(), texts.end())}});
    if (!res.contains("vectors") || !res["vectors"].is_array())
        throw TransportError("embed response lacks \"vectors\"", 200, false);
    const auto& vectors = res["vectors"];
    if (vectors.size() != texts.size())
        throw TransportError("embed response holds " + std::to_string(vectors.size()) + " vectors for " +
                                 std::to_string(texts.size()) + " texts",
                             200, false);
    std::vector<EmbeddingVector> out;
    out.reserve(vectors.size());
    for (const auto& v : vectors) {
        EmbeddingVector e;
        e.values = v.get<std::vector<double>>();
        for (double x : e.values)
            if (!std::isfinite(x)) throw TransportError("embed response holds a non-finite value", 200, false);
        out.push_back(std::move(e));
    }
    const std::size_t dim = res.contains("dim") ? res["dim"].get<std::size_t>() : out.front().dim();
    std::lock_guard lock(mutex_);
    for (const auto& e : out) {
        if (e.dim() != dim) throw ValidationError("embed response vectors disagree with reported dim");
    }
    if (dim_ && *dim_ != dim)
        throw ValidationError("embedding dimension drifted from " + std::to_string(*dim_) + " to " +
                              std::to_string(dim));
    dim_ = dim;
    return out;
}

HttpPairScorer::HttpPairScorer(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::vector<double> HttpPairScorer::score(std::span<const TextPair> pairs) {
    if (pairs.empty()) return {};
    json body_pairs = json::array();
    for (const auto& [a, b] : pairs) body_pairs.push_back({a, b});
    const json res = post_json(endpoint_, "/score", {{"pairs", body_pairs}});
    if (!res.contains("scores") || !res["scores"].is_array())
        throw TransportError("score response lacks \"scores\"", 200, false);
    auto scores = res["scores"].get<std::vector<double>>();
    if (scores.size() != pairs.size())
        throw TransportError("score response length mismatch", 200, false);
    return scores;
}

EmbeddingPairScorer::EmbeddingPairScorer(std::shared_ptr<EmbeddingProvider> provider)
    : provider_(std::move(provider)) {}

std::vector<double> EmbeddingPairScorer::score(std::span<const TextPair> pairs) {
    std::vector<std::string> texts;
    texts.reserve(pairs.size() * 2);
    for (const auto& [a, b] : pairs) {
        texts.push_back(a);
        texts.push_back(b);
    }
    const auto vectors = provider_->embed(texts);
    std::vector<double> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back(std::max(0.0, cosine(vectors[2 * i], vectors[2 * i + 1])));
    return out;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw ValidationError("cosine of vectors with dims " + std::to_string(a.dim()) + " and " +
                              std::to_string(b.dim()));
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0 || nb == 0) throw ValidationError("cosine of a zero-norm vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

PairSimilarity cosine_similarity(EmbeddingProvider& provider) {
    return [&provider](std::string_view a, std::string_view b) {
        const std::vector<std::string> texts{std::string(a), std::string(b)};
        const auto v = provider.embed(texts);
        return cosine(v[0], v[1]);
    };
}

std::shared_ptr<const std::vector<EmbeddingVector>> BankEmbeddingCache::get(const ReferenceBank& bank,
                                                                             EmbeddingProvider& provider) {
    const std::string key = provider.id() + "|" + bank.content_hash();
    {
        std::shared_lock lock(mutex_);
        if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    std::lock_guard fill(fill_mutex_);
    {
        std::shared_lock lock(mutex_);
        if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    std::vector<std::string> texts;
    for (const auto& r : bank.references) texts.push_back(r.text);
    auto vectors = std::make_shared<const std::vector<EmbeddingVector>>(provider.embed(texts));
    if (vectors->size() != texts.size()) throw ValidationError("provider returned a wrong number of vectors");
    std::unique_lock lock(mutex_);
    entries_.emplace(key, vectors);
    return vectors;
}

std::size_t BankEmbeddingCache::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

ScoredPair best_match(const JustificationKey& key, const EmbeddingVector& key_vector, const ReferenceBank& bank,
                      std::span<const EmbeddingVector> bank_vectors) {
    if (bank.references.empty()) throw ValidationError("best_match against an empty bank");
    if (bank_vectors.size() != bank.references.size())
        throw ValidationError("bank embeddings do not match the bank");
    std::optional<std::size_t> best;
    double best_sim = 0;
    for (std::size_t i = 0; i < bank.references.size(); ++i) {
        const double s = cosine(key_vector, bank_vectors[i]);
        if (!best || s > best_sim ||
            (s == best_sim && bank.references[i].ref_id < bank.references[*best].ref_id)) {
            best = i;
            best_sim = s;
        }
    }
    return {key, bank.references[*best].ref_id, best_sim};
}

ScoredPair best_match(const JustificationKey& key, const ReferenceBank& bank, EmbeddingProvider& provider,
                      BankEmbeddingCache& cache) {
    const auto bank_vectors = cache.get(bank, provider);
    const std::vector<std::string> texts{key.span_text};
    const auto key_vector = provider.embed(texts);
    return best_match(key, key_vector.at(0), bank, *bank_vectors);
}

AnalyticScore analytic_score(const ScoredPair& pair, const ReferenceBank& bank, double threshold) {
    const ReferenceAnswer* ref = bank.find(pair.ref_id);
    if (!ref) throw ValidationError("reference " + pair.ref_id + " is not in bank " + bank.question_id);
    const bool hit = ref->polarity == Polarity::correct && pair.similarity > threshold;
    return {pair, hit ? 1 : 0};
}

int holistic_score(std::span<const int> analytic, int max_score) {
    int sum = 0;
    for (int s : analytic) {
        if (s != 0 && s != 1) throw ValidationError("analytic scores must be 0 or 1");
        sum += s;
    }
    return std::min(sum, max_score);
}

json to_json(const HolisticResult& r) {
    json analytic = json::array();
    for (const auto& a : r.analytic)
        analytic.push_back({{"sub", a.best.key.sub_question_label},
                            {"span", a.best.key.span_text},
                            {"ref_id", a.best.ref_id},
                            {"similarity", a.best.similarity},
                            {"score", a.score}});
    json out = {{"answer_id", r.answer_id}, {"holistic", r.holistic}, {"analytic", analytic}};
    if (!r.warnings.empty()) out["warnings"] = r.warnings;
    return out;
}

HolisticResult holistic_from_json(const json& j) {
    HolisticResult r;
    r.answer_id = j.at("answer_id").get<std::string>();
    r.holistic = j.at("holistic").get<int>();
    for (const auto& a : j.value("analytic", json::array())) {
        AnalyticScore s;
        s.best.key = {r.answer_id, a.at("sub").get<std::string>(), a.at("span").get<std::string>()};
        s.best.ref_id = a.at("ref_id").get<std::string>();
        s.best.similarity = a.at("similarity").get<double>();
        s.score = a.at("score").get<int>();
        r.analytic.push_back(std::move(s));
    }
    if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
    return r;
}

HolisticResult score_extraction(const ExtractionResult& extraction, const Question& question,
                                const ReferenceBank& bank, EmbeddingProvider& provider, BankEmbeddingCache& cache,
                                const GradingOptions& options) {
    HolisticResult result;
    result.answer_id = extraction.answer_id;
    if (extraction.failed) {
        result.warnings.push_back("extraction failed: " + extraction.failure);
        return result;
    }
    const auto keys = extraction.flatten();
    if (keys.empty()) return result;

    const auto bank_vectors = cache.get(bank, provider);
    std::vector<std::string> texts;
    for (const auto& k : keys) texts.push_back(k.span_text);
    const auto key_vectors = provider.embed(texts);
    if (key_vectors.size() != keys.size()) throw ValidationError("provider returned a wrong number of vectors");

    std::vector<int> points;
    std::set<std::string> credited;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto a = analytic_score(best_match(keys[i], key_vectors[i], bank, *bank_vectors), bank, options.threshold);
        int point = a.score;
        if (options.dedup_by_reference && point == 1 && !credited.insert(a.best.ref_id).second) point = 0;
        points.push_back(point);
        result.analytic.push_back(std::move(a));
    }
    result.holistic = holistic_score(points, question.max_score);
    return result;
}

HolisticResult grade_answer(const StudentAnswer& answer, const QuestionSetup& setup, const ReferenceBank& bank,
                            CompletionClient& client, const CompletionParams& params, EmbeddingProvider& provider,
                            BankEmbeddingCache& cache, const GradingOptions& options) {
    const auto extraction = extract_keys(setup, answer, client, params);
    return score_extraction(extraction, setup.question, bank, provider, cache, options);
}

}  // namespace keyscore
