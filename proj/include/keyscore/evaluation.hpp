#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyscore/corpus.hpp"
#include "keyscore/key_extraction.hpp"
#include "keyscore/reference_bank.hpp"
#include "keyscore/similarity.hpp"

namespace keyscore {

double accuracy(std::span<const int> human, std::span<const int> system);

/// Quadratic weighted kappa over categories 0..num_categories-1 with
/// w_ij = (i-j)^2 / (K-1)^2 and expected counts from the marginal products / n.
double qwk(std::span<const int> human, std::span<const int> system, int num_categories);

double pearson(std::span<const double> x, std::span<const double> y);
double pearson(std::span<const int> x, std::span<const int> y);

/// confusion[h][s] counts.
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const int> human, std::span<const int> system,
                                                       int num_categories);

/// Frequency of the modal human score.
double majority_accuracy(std::span<const int> human);

struct EvalReport {
    std::string variant;
    std::size_t n = 0;
    double accuracy = 0.0;
    /// Empty when undefined (degenerate expected matrix / zero variance).
    std::optional<double> qwk;
    std::optional<double> pearson;
    std::vector<std::vector<std::size_t>> confusion;
    double majority_accuracy = 0.0;
};

EvalReport evaluate(std::span<const int> human, std::span<const int> system, int max_score,
                    std::string variant = {});

nlohmann::json to_json(const EvalReport& r);

struct OverlapReport {
    std::size_t total_keys = 0;
    std::size_t correct_keys = 0;
    double accuracy = 0.0;
    double mean_words_manual = 0.0;
    double mean_words_system = 0.0;
};

/// A system key matches a manual key when its normalized text contains the
/// manual text, or when more than 90% of the manual key's tokens occur in it.
bool key_matches(std::string_view manual, std::string_view system);

/// Fraction of manual-key tokens (multiset) present in `system`.
double token_overlap(std::string_view manual, std::string_view system);

/// Per answer, each manual key in order greedily takes the unused system key
/// with the highest token overlap (lowest index on ties).
OverlapReport key_overlap_eval(const std::map<std::string, std::vector<std::string>>& manual,
                               const std::map<std::string, std::vector<std::string>>& system);

/// One configuration row of an ablation run.
struct AblationVariant {
    std::string name;
    /// Null when the variant's provider endpoint is not configured.
    std::shared_ptr<EmbeddingProvider> provider;
    bool augmented_bank = true;
};

struct AblationRow {
    std::string variant;
    std::optional<EvalReport> report;
    std::string error;
};

struct AblationInputs {
    std::span<const StudentAnswer> answers;  // scored answers, each with a human score
    const std::map<std::string, ExtractionResult>* extractions = nullptr;  // by answer_id
    const std::map<std::string, Question>* questions = nullptr;
    const std::map<std::string, ReferenceBank>* rubric_banks = nullptr;
    const std::map<std::string, ReferenceBank>* augmented_banks = nullptr;
    GradingOptions options;
};

/// Grades `answers` under each variant. A failing variant yields a row with an
/// error; the remaining rows are still produced.
std::vector<AblationRow> run_ablation(std::span<const AblationVariant> variants, const AblationInputs& inputs);

std::string format_table(std::span<const AblationRow> rows);
nlohmann::json to_json(std::span<const AblationRow> rows);

}  // namespace keyscore
