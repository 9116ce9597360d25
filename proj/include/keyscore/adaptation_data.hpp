#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyscore/corpus.hpp"
#include "keyscore/reference_bank.hpp"
#include "keyscore/similarity.hpp"

namespace keyscore {

enum class PairSource { gold, silver };

/// Which labeling rule produced a pair.
enum class LabelRule { anchor_match, anchor_mismatch, cross_group_zero, manual, silver_lower, silver_threshold };

std::string_view to_string(PairSource s);
std::string_view to_string(LabelRule r);
PairSource parse_pair_source(std::string_view s);
LabelRule parse_label_rule(std::string_view s);

struct LabeledPair {
    std::string text_a;
    std::string ref_id;
    int label = 0;
    PairSource source = PairSource::gold;
    LabelRule rule = LabelRule::manual;

    void validate() const;
    bool operator==(const LabeledPair&) const = default;
    auto operator<=>(const LabeledPair&) const = default;
};

struct ReviewItem {
    std::string text_a;
    std::string ref_id;
    std::string ref_text;
    std::optional<std::string> stored_match;
    std::optional<int> decision;
};

struct GoldBuild {
    std::vector<LabeledPair> pairs;
    std::vector<ReviewItem> reviews;
    /// Key x reference combinations after self-pair exclusion; equals pairs + reviews.
    std::size_t combinations = 0;
    std::vector<std::string> warnings;
};

/// Labels every (annotated key, bank reference) combination:
///   correct key   x correct reference   -> 1 if both share a rubric anchor, else 0
///   correct key   x incorrect reference -> 0
///   incorrect key x correct reference   -> 0
///   incorrect key x incorrect reference -> queued for manual review
/// A key is never paired with the reference holding its own normalized text.
GoldBuild build_gold(std::span<const AnnotationRecord> annotations, const ReferenceBank& bank);

/// Append-only manual decisions keyed by (normalized text_a, ref_id).
class DecisionStore {
public:
    /// Loads `path` when it exists; new decisions are appended to it.
    explicit DecisionStore(std::filesystem::path path);

    std::optional<int> lookup(std::string_view text_a, std::string_view ref_id) const;
    void record(std::string_view text_a, std::string_view ref_id, int decision);
    std::size_t size() const noexcept { return decisions_.size(); }

private:
    std::filesystem::path path_;
    std::map<std::pair<std::string, std::string>, int> decisions_;
};

struct ReviewSession {
    std::vector<LabeledPair> pairs;
    std::vector<ReviewItem> undecided;
    bool quit = false;
};

/// Applies stored decisions; prompts on `in`/`out` for the rest when both are
/// given. Input `1`/`0` records a decision, `q` stops and keeps progress.
ReviewSession review(std::span<const ReviewItem> items, DecisionStore& store, std::istream* in = nullptr,
                     std::ostream* out = nullptr);

/// Replays stored decisions; any undecided item is a ValidationError listing them.
std::vector<LabeledPair> resolve_reviews(std::span<const ReviewItem> items, DecisionStore& store);

/// Sentence split on . ! ? followed by whitespace or end of text, keeping
/// common abbreviations intact.
std::vector<std::string> split_sentences(std::string_view text);

struct SilverOptions {
    double threshold = 0.5;
    std::size_t sentences_per_request = 64;
    std::size_t workers = 1;
};

/// Two pairs per training sentence: against its best correct reference C and
/// best incorrect reference I. The lower-scored pair (I on a tie) is labeled 0;
/// the other is 1 iff its score exceeds the threshold. Uses train answers of
/// the bank's question outside the augmentation set.
std::vector<LabeledPair> build_silver(std::span<const StudentAnswer> answers, const ReferenceBank& bank,
                                      PairScorer& scorer, const SilverOptions& options = {});

nlohmann::json to_json(const LabeledPair& p);
LabeledPair pair_from_json(const nlohmann::json& j);
void export_pairs(std::span<const LabeledPair> pairs, const std::filesystem::path& path);
std::vector<LabeledPair> import_pairs(const std::filesystem::path& path);

nlohmann::json to_json(const ReviewItem& r);
ReviewItem review_item_from_json(const nlohmann::json& j);
void export_reviews(std::span<const ReviewItem> items, const std::filesystem::path& path);
std::vector<ReviewItem> import_reviews(const std::filesystem::path& path);

}  // namespace keyscore
