#include "keyscore/key_extraction.hpp"

#include <cstdlib>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

#include "keyscore/errors.hpp"
#include "keyscore/io.hpp"
#include "keyscore/text.hpp"

namespace keyscore {

using nlohmann::json;
using nlohmann::ordered_json;

PromptTemplate prompt_template_from_json(const json& j) {
    PromptTemplate t;
    t.instruction = j.value("instruction", "");
    t.demo.input_answer = j.at("demo_input").get<std::string>();
    for (const auto& [label, spans] : j.at("demo_output").items()) {
        if (spans.is_string())
            t.demo.output_keys[label] = {spans.get<std::string>()};
        else
            t.demo.output_keys[label] = spans.get<std::vector<std::string>>();
    }
    return t;
}

PromptTemplate load_prompt_template(const std::filesystem::path& path) {
    try {
        return prompt_template_from_json(json::parse(io::read_file(path)));
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::vector<JustificationKey> ExtractionResult::flatten() const {
    std::vector<JustificationKey> out;
    for (const auto& k : keys)
        for (const auto& s : k.spans) out.push_back({answer_id, k.label, s});
    return out;
}

std::size_t ExtractionResult::key_count() const {
    std::size_t n = 0;
    for (const auto& k : keys) n += k.spans.size();
    return n;
}

json to_json(const ExtractionResult& r) {
    ordered_json keys = ordered_json::object();
    for (const auto& k : r.keys) keys[k.label] = k.spans;
    json out = {{"answer_id", r.answer_id},
                {"keys", json::parse(keys.dump())},
                {"raw_completion", r.raw_completion},
                {"failed", r.failed}};
    if (r.failed) out["failure"] = r.failure;
    return out;
}

ExtractionResult extraction_from_json(const json& j) {
    ExtractionResult r;
    r.answer_id = j.at("answer_id").get<std::string>();
    for (const auto& [label, spans] : j.at("keys").items())
        r.keys.push_back({label, spans.get<std::vector<std::string>>()});
    r.raw_completion = j.value("raw_completion", "");
    r.failed = j.value("failed", false);
    r.failure = j.value("failure", "");
    return r;
}

namespace {

std::string input_object(std::string_view answer) {
    ordered_json in = ordered_json::object();
    in["student's answer"] = std::string(answer);
    return in.dump();
}

}  // namespace

std::string build_prompt(const Question& question, const PromptTemplate& prompt, std::string_view answer_text) {
    const auto labels = question.labels();
    const std::set<std::string> known(labels.begin(), labels.end());
    bool any_span = false;
    for (const auto& [label, spans] : prompt.demo.output_keys) {
        if (!known.contains(label))
            throw ValidationError("demonstration references unknown sub-question label '" + label +
                                  "' for question " + question.question_id);
        for (const auto& s : spans) any_span |= !text::trim(s).empty();
    }
    if (!any_span) throw ValidationError("demonstration for question " + question.question_id + " has no spans");

    std::string instruction = text::trim(prompt.instruction);
    if (instruction.empty()) {
        for (const auto& sq : question.sub_questions) {
            if (!instruction.empty()) instruction += '\n';
            instruction += "(" + sq.label + ") " + text::trim(sq.instruction_text);
        }
    }
    if (instruction.empty()) throw ValidationError("empty instruction for question " + question.question_id);

    ordered_json demo_out = ordered_json::object();
    for (const auto& label : labels) {
        auto it = prompt.demo.output_keys.find(label);
        demo_out[label] = it == prompt.demo.output_keys.end() ? std::vector<std::string>{} : it->second;
    }

    std::string out;
    out += instruction;
    out += "\n\nInput: ";
    out += input_object(prompt.demo.input_answer);
    out += "\nOutput: ";
    out += demo_out.dump();
    out += "\n\nInput: ";
    out += input_object(answer_text);
    out += "\nOutput:";
    return out;
}

HttpCompletionClient::HttpCompletionClient(HttpEndpoint endpoint, std::string path)
    : endpoint_(std::move(endpoint)), path_(std::move(path)) {
    if (!endpoint_.bearer_token) {
        if (const char* key = std::getenv("KEYSCORE_LLM_API_KEY"); key && *key) endpoint_.bearer_token = key;
    }
}

std::string HttpCompletionClient::complete(std::string_view prompt, const CompletionParams& params) {
    if (prompt.empty()) throw ValidationError("empty prompt");
    const json body = {{"model", params.model_id},
                       {"prompt", std::string(prompt)},
                       {"temperature", 0},
                       {"max_tokens", params.max_tokens}};
    const json res = post_json(endpoint_, path_, body);
    if (!res.is_object() || !res.contains("text") || !res["text"].is_string())
        throw TransportError("completion response lacks a \"text\" string", 200, false);
    return res["text"].get<std::string>();
}

ReplayCompletionClient::ReplayCompletionClient(std::filesystem::path fixture_path,
                                               std::shared_ptr<CompletionClient> live)
    : path_(std::move(fixture_path)), live_(std::move(live)) {
    if (!std::filesystem::exists(path_)) {
        if (!live_) throw Error("io", "fixture file " + path_.string() + " does not exist");
        return;
    }
    io::for_each_jsonl(path_, [&](std::size_t lineno, const json& row) {
        if (!row.contains("prompt_sha256") || !row.contains("completion"))
            throw ParseError("fixture row needs prompt_sha256 and completion", lineno);
        fixtures_[row.at("prompt_sha256").get<std::string>()] = row.at("completion").get<std::string>();
    });
}

std::size_t ReplayCompletionClient::size() const {
    std::shared_lock lock(mutex_);
    return fixtures_.size();
}

std::string ReplayCompletionClient::complete(std::string_view prompt, const CompletionParams& params) {
    if (prompt.empty()) throw ValidationError("empty prompt");
    const std::string digest = io::sha256_hex(prompt);
    {
        std::shared_lock lock(mutex_);
        if (auto it = fixtures_.find(digest); it != fixtures_.end()) return it->second;
    }
    if (!live_) throw FixtureMiss(digest);

    CompletionParams forced = params;
    forced.temperature = 0.0;
    std::string completion = live_->complete(prompt, forced);
    ++live_calls_;

    std::lock_guard write_lock(write_mutex_);
    {
        std::unique_lock lock(mutex_);
        if (auto it = fixtures_.find(digest); it != fixtures_.end()) return it->second;
        fixtures_.emplace(digest, completion);
    }
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("io", "cannot append to fixture file " + path_.string());
    out << json{{"prompt_sha256", digest}, {"completion", completion}, {"model_id", params.model_id}}.dump()
        << '\n';
    return completion;
}

namespace {

// Returns the end (exclusive) of the balanced object starting at raw[start], or npos.
std::size_t balanced_object_end(std::string_view raw, std::size_t start) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
        const char c = raw[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return i + 1;
    }
    return std::string_view::npos;
}

std::vector<std::string> spans_of(const json& value, const std::string& label, std::string_view raw) {
    std::vector<std::string> spans;
    auto take = [&](const json& v) {
        if (!v.is_string())
            throw ExtractionError("label '" + label + "' holds a non-string span", std::string(raw));
        std::string s = text::trim(v.get<std::string>());
        if (!s.empty()) spans.push_back(std::move(s));
    };
    if (value.is_null()) return spans;
    if (value.is_string()) {
        take(value);
    } else if (value.is_array()) {
        for (const auto& v : value) take(v);
    } else {
        throw ExtractionError("label '" + label + "' holds a value that is neither a string nor a list",
                              std::string(raw));
    }
    return spans;
}

}  // namespace

ExtractionResult parse_extraction(std::string_view raw, const Question& question, std::string answer_id) {
    json object;
    bool found = false;
    for (std::size_t start = raw.find('{'); start != std::string_view::npos; start = raw.find('{', start + 1)) {
        const std::size_t end = balanced_object_end(raw, start);
        if (end == std::string_view::npos) continue;
        try {
            object = json::parse(raw.substr(start, end - start));
        } catch (const json::exception&) {
            continue;
        }
        found = object.is_object();
        if (found) break;
    }
    if (!found) throw ExtractionError("no JSON object in completion", std::string(raw));

    ExtractionResult result;
    result.answer_id = std::move(answer_id);
    result.raw_completion = std::string(raw);
    for (const auto& label : question.labels()) {
        SubQuestionKeys k{label, {}};
        if (auto it = object.find(label); it != object.end()) k.spans = spans_of(*it, label, raw);
        result.keys.push_back(std::move(k));
    }
    return result;
}

namespace {

ExtractionResult empty_result(const Question& q, const std::string& answer_id) {
    ExtractionResult r;
    r.answer_id = answer_id;
    for (const auto& label : q.labels()) r.keys.push_back({label, {}});
    return r;
}

}  // namespace

ExtractionResult extract_keys(const QuestionSetup& setup, const StudentAnswer& answer,
                              CompletionClient& client, const CompletionParams& params) {
    if (text::trim(answer.text).empty()) return empty_result(setup.question, answer.answer_id);
    const std::string prompt = build_prompt(setup.question, setup.prompt, answer.text);
    CompletionParams p = params;
    p.temperature = 0.0;
    const std::string raw = client.complete(prompt, p);
    try {
        return parse_extraction(raw, setup.question, answer.answer_id);
    } catch (const ExtractionError& e) {
        ExtractionResult r = empty_result(setup.question, answer.answer_id);
        r.raw_completion = raw;
        r.failed = true;
        r.failure = e.what();
        return r;
    }
}

BatchExtraction extract_batch(const std::map<std::string, QuestionSetup>& setups,
                              std::span<const StudentAnswer> answers, CompletionClient& client,
                              const CompletionParams& params, std::size_t max_in_flight) {
    for (const auto& a : answers)
        if (!setups.contains(a.question_id))
            throw ValidationError("no question setup for question " + a.question_id);

    BatchExtraction batch;
    batch.results.resize(answers.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        while (!stop) {
            const std::size_t i = next++;
            if (i >= answers.size()) return;
            try {
                batch.results[i] = extract_keys(setups.at(answers[i].question_id), answers[i], client, params);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                stop = true;
            }
        }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(max_in_flight, answers.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (first_error) std::rethrow_exception(first_error);
    for (const auto& r : batch.results) batch.failures += r.failed ? 1 : 0;
    return batch;
}

}  // namespace keyscore
