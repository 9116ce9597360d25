#include "keyscore/reference_bank.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

#include "keyscore/errors.hpp"
#include "keyscore/io.hpp"
#include "keyscore/text.hpp"

namespace keyscore {

using nlohmann::json;

std::string_view to_string(Polarity p) { return p == Polarity::correct ? "correct" : "incorrect"; }
std::string_view to_string(Origin o) { return o == Origin::rubric ? "rubric" : "augmented"; }

namespace {

Polarity parse_polarity(std::string_view s) {
    if (s == "correct") return Polarity::correct;
    if (s == "incorrect") return Polarity::incorrect;
    throw ValidationError("unknown polarity '" + std::string(s) + "'");
}

Origin parse_origin(std::string_view s) {
    if (s == "rubric") return Origin::rubric;
    if (s == "augmented") return Origin::augmented;
    throw ValidationError("unknown origin '" + std::string(s) + "'");
}

std::size_t ref_index(std::string_view ref_id) {
    std::size_t value = 0;
    for (char c : ref_id)
        if (c >= '0' && c <= '9') value = value * 10 + static_cast<std::size_t>(c - '0');
    return value;
}

}  // namespace

const ReferenceAnswer* ReferenceBank::find(std::string_view ref_id) const {
    for (const auto& r : references)
        if (r.ref_id == ref_id) return &r;
    return nullptr;
}

const ReferenceAnswer* ReferenceBank::find_normalized(std::string_view normalized_text) const {
    for (const auto& r : references)
        if (text::normalize_text(r.text) == normalized_text) return &r;
    return nullptr;
}

std::size_t ReferenceBank::augmented_count() const {
    return static_cast<std::size_t>(
        std::count_if(references.begin(), references.end(), [](auto& r) { return r.origin == Origin::augmented; }));
}

std::size_t ReferenceBank::count(Polarity p) const {
    return static_cast<std::size_t>(
        std::count_if(references.begin(), references.end(), [p](auto& r) { return r.polarity == p; }));
}

std::string ReferenceBank::content_hash() const { return io::sha256_hex(to_json(*this).dump()); }

void ReferenceBank::validate() const {
    std::unordered_set<std::string> ids, texts;
    bool any_correct = false;
    for (const auto& r : references) {
        const std::string where = "reference " + r.ref_id + " of question " + question_id;
        if (r.ref_id.empty()) throw ValidationError("reference without id in question " + question_id);
        if (!ids.insert(r.ref_id).second) throw ValidationError("duplicate ref_id " + r.ref_id);
        if (!texts.insert(text::normalize_text(r.text)).second)
            throw ValidationError(where + " duplicates another reference's text");
        if (text::normalize_text(r.text).empty()) throw ValidationError(where + " has empty text");
        if (r.origin == Origin::rubric && (r.polarity != Polarity::correct || r.anchor_ref != r.ref_id))
            throw ValidationError(where + ": rubric references must be correct and anchored to themselves");
        if (r.polarity == Polarity::incorrect && r.origin != Origin::augmented)
            throw ValidationError(where + ": incorrect references must be augmented");
        if (r.origin == Origin::augmented && r.polarity == Polarity::correct) {
            const ReferenceAnswer* anchor = r.anchor_ref ? find(*r.anchor_ref) : nullptr;
            if (!anchor || anchor->origin != Origin::rubric)
                throw ValidationError(where + ": augmented correct reference needs a rubric anchor");
        }
        any_correct |= r.polarity == Polarity::correct;
    }
    if (!any_correct) throw ValidationError("bank for question " + question_id + " has no correct reference");
}

std::string make_ref_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "R%04zu", index);
    return buf;
}

ReferenceBank init_from_rubric(const Question& question) {
    ReferenceBank bank;
    bank.question_id = question.question_id;
    std::unordered_set<std::string> seen;
    for (const auto& answer : question.rubric_correct_answers) {
        const std::string norm = text::normalize_text(answer);
        if (norm.empty() || !seen.insert(norm).second) continue;
        ReferenceAnswer r;
        r.ref_id = make_ref_id(bank.references.size() + 1);
        r.question_id = question.question_id;
        r.text = text::collapse_whitespace(answer);
        r.polarity = Polarity::correct;
        r.origin = Origin::rubric;
        r.anchor_ref = r.ref_id;
        bank.references.push_back(std::move(r));
    }
    if (bank.references.empty())
        throw ValidationError("question " + question.question_id + " has no rubric correct answers");
    return bank;
}

std::string resolve_anchor(const ReferenceBank& bank, const AnnotatedKey& key, const PairSimilarity& sim) {
    if (key.matched) {
        const ReferenceAnswer* m = bank.find_normalized(text::normalize_text(*key.matched));
        if (m && m->polarity == Polarity::correct && m->anchor_ref) {
            const ReferenceAnswer* anchor = bank.find(*m->anchor_ref);
            if (anchor && anchor->origin == Origin::rubric) return anchor->ref_id;
        }
    }
    if (!sim)
        throw ValidationError("key '" + key.span + "': stored match '" + key.matched.value_or("") +
                              "' is not a correct reference of question " + bank.question_id);
    const ReferenceAnswer* best = nullptr;
    double best_score = 0;
    for (const auto& r : bank.references) {
        if (r.origin != Origin::rubric) continue;
        const double s = sim(key.span, r.text);
        if (!best || s > best_score) {
            best = &r;
            best_score = s;
        }
    }
    if (!best) throw ValidationError("bank for question " + bank.question_id + " has no rubric reference");
    return best->ref_id;
}

ReferenceBank augment(const ReferenceBank& bank, std::span<const AnnotationRecord> annotations,
                      const PairSimilarity& sim) {
    ReferenceBank out = bank;
    std::size_t next = 0;
    for (const auto& r : out.references) next = std::max(next, ref_index(r.ref_id));
    std::unordered_set<std::string> seen;
    for (const auto& r : out.references) seen.insert(text::normalize_text(r.text));

    for (const auto& record : annotations) {
        for (const auto& key : record.keys) {
            const std::string norm = text::normalize_text(key.span);
            if (norm.empty() || seen.contains(norm)) continue;
            ReferenceAnswer r;
            r.question_id = out.question_id;
            r.text = text::collapse_whitespace(key.span);
            r.origin = Origin::augmented;
            r.polarity = key.score == 1 ? Polarity::correct : Polarity::incorrect;
            if (r.polarity == Polarity::correct) r.anchor_ref = resolve_anchor(out, key, sim);
            r.ref_id = make_ref_id(++next);
            seen.insert(norm);
            out.references.push_back(std::move(r));
        }
    }
    return out;
}

json to_json(const ReferenceBank& bank) {
    json refs = json::array();
    for (const auto& r : bank.references)
        refs.push_back({{"ref_id", r.ref_id},
                        {"text", r.text},
                        {"polarity", to_string(r.polarity)},
                        {"origin", to_string(r.origin)},
                        {"anchor_ref", r.anchor_ref ? json(*r.anchor_ref) : json(nullptr)}});
    return {{"question_id", bank.question_id}, {"references", refs}};
}

ReferenceBank bank_from_json(const json& j) {
    ReferenceBank bank;
    try {
        bank.question_id = j.at("question_id").get<std::string>();
        for (const auto& r : j.at("references")) {
            ReferenceAnswer ref;
            ref.ref_id = r.at("ref_id").get<std::string>();
            ref.question_id = bank.question_id;
            ref.text = r.at("text").get<std::string>();
            ref.polarity = parse_polarity(r.at("polarity").get<std::string>());
            ref.origin = parse_origin(r.at("origin").get<std::string>());
            if (r.contains("anchor_ref") && !r.at("anchor_ref").is_null())
                ref.anchor_ref = r.at("anchor_ref").get<std::string>();
            bank.references.push_back(std::move(ref));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed bank: ") + e.what());
    }
    std::sort(bank.references.begin(), bank.references.end(),
              [](const auto& a, const auto& b) { return a.ref_id < b.ref_id; });
    bank.validate();
    return bank;
}

ReferenceBank load_bank(const std::filesystem::path& path) {
    try {
        return bank_from_json(json::parse(io::read_file(path)));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace keyscore
