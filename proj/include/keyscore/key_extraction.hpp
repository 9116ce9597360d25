#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyscore/corpus.hpp"
#include "keyscore/http.hpp"

namespace keyscore {

/// The single worked example shown in the one-shot prompt.
struct DemonstrationExample {
    std::string input_answer;
    std::map<std::string, std::vector<std::string>> output_keys;
};

/// Per-question prompt configuration. An empty instruction is derived from the
/// question's sub-question texts.
struct PromptTemplate {
    std::string instruction;
    DemonstrationExample demo;
};

PromptTemplate prompt_template_from_json(const nlohmann::json& j);
PromptTemplate load_prompt_template(const std::filesystem::path& path);

struct QuestionSetup {
    Question question;
    PromptTemplate prompt;
};

struct CompletionParams {
    double temperature = 0.0;
    int max_tokens = 256;
    std::string model_id = "text-davinci-003";
};

struct JustificationKey {
    std::string answer_id;
    std::string sub_question_label;
    std::string span_text;
};

struct SubQuestionKeys {
    std::string label;
    std::vector<std::string> spans;
};

struct ExtractionResult {
    std::string answer_id;
    /// One entry per question label, in question order.
    std::vector<SubQuestionKeys> keys;
    std::string raw_completion;
    bool failed = false;
    std::string failure;

    std::vector<JustificationKey> flatten() const;
    std::size_t key_count() const;
};

nlohmann::json to_json(const ExtractionResult& r);
ExtractionResult extraction_from_json(const nlohmann::json& j);

/// Renders the one-shot prompt: instruction, demonstration input and output
/// objects, then the test input and an open `Output:` cue.
std::string build_prompt(const Question& question, const PromptTemplate& prompt, std::string_view answer_text);

class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    virtual std::string complete(std::string_view prompt, const CompletionParams& params) = 0;
};

/// Text-completion backend: POST `{"model","prompt","temperature":0,"max_tokens"}`
/// to `path`, expecting `{"text": str}`.
class HttpCompletionClient : public CompletionClient {
public:
    explicit HttpCompletionClient(HttpEndpoint endpoint, std::string path = "/complete");

    std::string complete(std::string_view prompt, const CompletionParams& params) override;

private:
    HttpEndpoint endpoint_;
    std::string path_;
};

/// Fixture-backed client keyed by SHA-256 of the prompt bytes. Without a live
/// backend every miss is a FixtureMiss; with one, misses are forwarded at
/// temperature 0 and appended to the fixture file.
class ReplayCompletionClient : public CompletionClient {
public:
    explicit ReplayCompletionClient(std::filesystem::path fixture_path,
                                    std::shared_ptr<CompletionClient> live = nullptr);

    std::string complete(std::string_view prompt, const CompletionParams& params) override;

    std::size_t size() const;
    std::size_t live_calls() const noexcept { return live_calls_.load(); }

private:
    std::filesystem::path path_;
    std::shared_ptr<CompletionClient> live_;
    mutable std::shared_mutex mutex_;
    std::mutex write_mutex_;
    std::unordered_map<std::string, std::string> fixtures_;
    std::atomic<std::size_t> live_calls_{0};
};

/// Reads the first JSON object embedded in `raw`. Each question label maps to
/// a string or a list of strings; absent labels yield empty lists and labels
/// the question does not define are ignored. Throws ExtractionError.
ExtractionResult parse_extraction(std::string_view raw, const Question& question,
                                  std::string answer_id = {});

/// Prompt, complete, parse. Parse failures produce an all-empty result with
/// `failed` set; transport errors propagate.
ExtractionResult extract_keys(const QuestionSetup& setup, const StudentAnswer& answer,
                              CompletionClient& client, const CompletionParams& params);

struct BatchExtraction {
    std::vector<ExtractionResult> results;  // input order
    std::size_t failures = 0;
};

/// Extracts for every answer with at most `max_in_flight` concurrent requests.
BatchExtraction extract_batch(const std::map<std::string, QuestionSetup>& setups,
                              std::span<const StudentAnswer> answers, CompletionClient& client,
                              const CompletionParams& params, std::size_t max_in_flight = 4);

}  // namespace keyscore
