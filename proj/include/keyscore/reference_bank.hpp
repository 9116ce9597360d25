#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyscore/corpus.hpp"

namespace keyscore {

enum class Polarity { correct, incorrect };
enum class Origin { rubric, augmented };

std::string_view to_string(Polarity p);
std::string_view to_string(Origin o);

struct ReferenceAnswer {
    std::string ref_id;
    std::string question_id;
    std::string text;
    Polarity polarity = Polarity::correct;
    Origin origin = Origin::rubric;
    /// Rubric references anchor to themselves; augmented correct references to
    /// the rubric reference they were matched with; incorrect references to nothing.
    std::optional<std::string> anchor_ref;
};

/// Similarity of two texts on any scale where larger means closer.
using PairSimilarity = std::function<double(std::string_view, std::string_view)>;

struct ReferenceBank {
    std::string question_id;
    /// Sorted by ref_id; ref ids are zero-padded so lexical order is insertion order.
    std::vector<ReferenceAnswer> references;

    const ReferenceAnswer* find(std::string_view ref_id) const;
    const ReferenceAnswer* find_normalized(std::string_view normalized_text) const;
    std::size_t augmented_count() const;
    std::size_t count(Polarity p) const;

    /// SHA-256 of the canonical JSON form.
    std::string content_hash() const;

    /// Throws ValidationError when any reference or bank invariant fails.
    void validate() const;
};

std::string make_ref_id(std::size_t index);

ReferenceBank init_from_rubric(const Question& question);

/// Anchor for a correct annotated key: the bank's correct reference equal (after
/// normalization) to the stored match, followed one hop to its rubric anchor;
/// otherwise the rubric reference maximizing `sim` (ties to the lowest ref_id).
/// Throws ValidationError when neither route applies.
std::string resolve_anchor(const ReferenceBank& bank, const AnnotatedKey& key, const PairSimilarity& sim);

/// Returns a new bank with every annotated key added as an augmented reference
/// (polarity from its analytic score), skipping normalized duplicates.
ReferenceBank augment(const ReferenceBank& bank, std::span<const AnnotationRecord> annotations,
                      const PairSimilarity& sim = {});

nlohmann::json to_json(const ReferenceBank& bank);
ReferenceBank bank_from_json(const nlohmann::json& j);
ReferenceBank load_bank(const std::filesystem::path& path);

}  // namespace keyscore
