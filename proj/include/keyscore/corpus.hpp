#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace keyscore {

struct SubQuestion {
    std::string label;
    std::string instruction_text;
};

struct Question {
    std::string question_id;
    std::string full_text;
    std::vector<SubQuestion> sub_questions;
    int max_score = 3;
    std::vector<std::string> rubric_correct_answers;

    std::vector<std::string> labels() const;

    /// Throws ValidationError on an empty/duplicate label, empty instruction,
    /// max_score < 1, no sub-questions or an empty rubric. Stubs produced by
    /// load_corpus do not pass this check until completed from a question file.
    void validate() const;
};

enum class Split { train, dev, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct StudentAnswer {
    std::string answer_id;
    std::string question_id;
    std::string text;
    std::optional<int> human_score;
    Split split = Split::train;
    bool in_augmentation_set = false;
};

/// One manually marked justification key inside an annotated answer.
struct AnnotatedKey {
    std::string sub;
    std::string span;
    int score = 0;
    std::optional<std::string> matched;
};

struct AnnotationRecord {
    std::string answer_id;
    std::vector<AnnotatedKey> keys;
};

struct Corpus {
    std::vector<StudentAnswer> answers;
    /// Stubs: question_id and max_score = 3 only.
    std::vector<Question> questions;
};

struct SplitRatios {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
};

struct SplitManifest {
    std::uint64_t seed = 0;
    std::map<std::string, Split> assignments;
    std::vector<std::string> augmentation;
};

/// Reads an ASAP-SAS style TSV (`Id EssaySet Score1 Score2 EssayText`) and keeps
/// rows whose EssaySet is in `question_ids`. human_score is Score1.
Corpus load_corpus(const std::filesystem::path& path, const std::set<std::string>& question_ids);
Corpus parse_corpus(std::string_view tsv, const std::set<std::string>& question_ids);

/// Stratified per question: dev = round(ratio_dev * n), test = round(ratio_test * n),
/// the remainder goes to train. Requires >= 10 answers per question.
SplitManifest split_corpus(std::span<const StudentAnswer> answers, const SplitRatios& ratios,
                           std::uint64_t seed);

/// Picks `per_question` train answers per question: top-score answers first,
/// then round-robin over the lower scores (descending), then unscored answers.
std::vector<std::string> select_augmentation_set(std::span<const StudentAnswer> answers,
                                                 std::size_t per_question, std::uint64_t seed,
                                                 int max_score = 3);

/// Copies split assignments and augmentation membership onto `answers`.
/// Every answer must be assigned.
void apply_manifest(std::vector<StudentAnswer>& answers, const SplitManifest& manifest);

/// Parses and validates annotation JSONL. When `corpus` is non-empty every
/// record must name an augmentation-set answer and every span must occur in its
/// text after whitespace collapsing. An empty input appends a warning.
std::vector<AnnotationRecord> parse_annotations(std::string_view jsonl,
                                                std::span<const StudentAnswer> corpus,
                                                std::vector<std::string>* warnings = nullptr);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path,
                                               std::span<const StudentAnswer> corpus,
                                               std::vector<std::string>* warnings = nullptr);

/// Percentage of answers at each score 0..max_score.
std::map<int, double> score_distribution(std::span<const StudentAnswer> answers, int max_score = 3);

nlohmann::json to_json(const SplitManifest& m);
SplitManifest manifest_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Question& q);
Question question_from_json(const nlohmann::json& j);
/// A JSON array of question objects.
std::vector<Question> load_questions(const std::filesystem::path& path);

nlohmann::json to_json(const AnnotationRecord& r);

}  // namespace keyscore
