#include "keyscore/adaptation_data.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <istream>
#include <ostream>
#include <thread>

#include "keyscore/errors.hpp"
#include "keyscore/io.hpp"
#include "keyscore/text.hpp"

namespace keyscore {

using nlohmann::json;

std::string_view to_string(PairSource s) { return s == PairSource::gold ? "gold" : "silver"; }

std::string_view to_string(LabelRule r) {
    switch (r) {
        case LabelRule::anchor_match: return "anchor_match";
        case LabelRule::anchor_mismatch: return "anchor_mismatch";
        case LabelRule::cross_group_zero: return "cross_group_zero";
        case LabelRule::manual: return "manual";
        case LabelRule::silver_lower: return "silver_lower";
        case LabelRule::silver_threshold: return "silver_threshold";
    }
    return "manual";
}

PairSource parse_pair_source(std::string_view s) {
    if (s == "gold") return PairSource::gold;
    if (s == "silver") return PairSource::silver;
    throw ValidationError("unknown pair source '" + std::string(s) + "'");
}

LabelRule parse_label_rule(std::string_view s) {
    for (auto r : {LabelRule::anchor_match, LabelRule::anchor_mismatch, LabelRule::cross_group_zero, LabelRule::manual,
                   LabelRule::silver_lower, LabelRule::silver_threshold})
        if (to_string(r) == s) return r;
    throw ValidationError("unknown labeling rule '" + std::string(s) + "'");
}

void LabeledPair::validate() const {
    if (label != 0 && label != 1) throw ValidationError("pair label must be 0 or 1");
    if (text_a.empty() || ref_id.empty()) throw ValidationError("pair needs text_a and ref_id");
    const bool silver_rule = rule == LabelRule::silver_lower || rule == LabelRule::silver_threshold;
    if ((source == PairSource::silver) != silver_rule)
        throw ValidationError("rule " + std::string(to_string(rule)) + " is not valid for a " +
                              std::string(to_string(source)) + " pair");
    if (rule == LabelRule::cross_group_zero && label != 0) throw ValidationError("cross_group_zero pairs are labeled 0");
    if (rule == LabelRule::anchor_match && label != 1) throw ValidationError("anchor_match pairs are labeled 1");
    if (rule == LabelRule::silver_lower && label != 0) throw ValidationError("silver_lower pairs are labeled 0");
}

GoldBuild build_gold(std::span<const AnnotationRecord> annotations, const ReferenceBank& bank) {
    GoldBuild gold;
    if (bank.augmented_count() == 0)
        gold.warnings.push_back("bank " + bank.question_id + " has no augmented references; gold uses the rubric only");

    for (const auto& record : annotations) {
        for (const auto& key : record.keys) {
            const std::string norm = text::normalize_text(key.span);
            const ReferenceAnswer* own = bank.find_normalized(norm);
            const bool key_correct = key.score == 1;
            std::optional<std::string> key_anchor;
            if (key_correct) {
                if (own && own->polarity == Polarity::correct && own->anchor_ref)
                    key_anchor = own->anchor_ref;
                else
                    key_anchor = resolve_anchor(bank, key, {});
            }
            for (const auto& ref : bank.references) {
                if (own && &ref == own) continue;
                ++gold.combinations;
                const bool ref_correct = ref.polarity == Polarity::correct;
                if (key_correct) {
                    const bool same = ref_correct && ref.anchor_ref == key_anchor;
                    gold.pairs.push_back({key.span, ref.ref_id, same ? 1 : 0, PairSource::gold,
                                          same ? LabelRule::anchor_match : LabelRule::anchor_mismatch});
                } else if (ref_correct) {
                    gold.pairs.push_back({key.span, ref.ref_id, 0, PairSource::gold, LabelRule::cross_group_zero});
                } else {
                    gold.reviews.push_back({key.span, ref.ref_id, ref.text, key.matched, std::nullopt});
                }
            }
        }
    }
    return gold;
}

DecisionStore::DecisionStore(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) return;
    io::for_each_jsonl(path_, [&](std::size_t lineno, const json& row) {
        const int d = row.at("decision").get<int>();
        if (d != 0 && d != 1) throw ParseError("decision must be 0 or 1", lineno);
        decisions_[{row.at("text_a_norm").get<std::string>(), row.at("ref_id").get<std::string>()}] = d;
    });
}

std::optional<int> DecisionStore::lookup(std::string_view text_a, std::string_view ref_id) const {
    auto it = decisions_.find({text::normalize_text(text_a), std::string(ref_id)});
    if (it == decisions_.end()) return std::nullopt;
    return it->second;
}

void DecisionStore::record(std::string_view text_a, std::string_view ref_id, int decision) {
    if (decision != 0 && decision != 1) throw ValidationError("decision must be 0 or 1");
    const std::string norm = text::normalize_text(text_a);
    decisions_[{norm, std::string(ref_id)}] = decision;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("io", "cannot append to decisions file " + path_.string());
    out << json{{"text_a_norm", norm}, {"ref_id", std::string(ref_id)}, {"decision", decision}}.dump() << '\n';
}

ReviewSession review(std::span<const ReviewItem> items, DecisionStore& store, std::istream* in, std::ostream* out) {
    ReviewSession session;
    const bool interactive = in && out;
    for (const auto& item : items) {
        std::optional<int> d = item.decision ? item.decision : store.lookup(item.text_a, item.ref_id);
        while (!d && interactive && !session.quit) {
            *out << "\nkey:       " << item.text_a << "\nreference: " << item.ref_text << " [" << item.ref_id << "]\n";
            if (item.stored_match) *out << "stored match: " << *item.stored_match << '\n';
            *out << "equivalent? [1/0/q] " << std::flush;
            std::string line;
            if (!std::getline(*in, line)) {
                session.quit = true;
                break;
            }
            const std::string answer = text::trim(line);
            if (answer == "1" || answer == "0") {
                d = answer == "1" ? 1 : 0;
                store.record(item.text_a, item.ref_id, *d);
            } else if (answer == "q") {
                session.quit = true;
            } else {
                *out << "please enter 1, 0 or q\n";
            }
        }
        if (d)
            session.pairs.push_back({item.text_a, item.ref_id, *d, PairSource::gold, LabelRule::manual});
        else
            session.undecided.push_back(item);
    }
    return session;
}

std::vector<LabeledPair> resolve_reviews(std::span<const ReviewItem> items, DecisionStore& store) {
    auto session = review(items, store);
    if (!session.undecided.empty()) {
        std::string listing;
        for (std::size_t i = 0; i < session.undecided.size() && i < 10; ++i)
            listing += (i ? "; " : "") + session.undecided[i].text_a + " x " + session.undecided[i].ref_id;
        if (session.undecided.size() > 10) listing += "; ...";
        throw ValidationError(std::to_string(session.undecided.size()) + " review items undecided: " + listing);
    }
    return session.pairs;
}

namespace {

bool is_abbreviation(std::string_view token) {
    static const std::vector<std::string_view> kAbbreviations = {
        "e.g.", "i.e.", "vs.", "etc.", "cf.", "approx.", "dr.", "mr.", "mrs.", "ms.", "st.", "fig.", "no.", "ex."};
    std::string lower(token);
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    while (!lower.empty() && (lower.front() == '(' || lower.front() == '"' || lower.front() == '\''))
        lower.erase(lower.begin());
    return std::find(kAbbreviations.begin(), kAbbreviations.end(), lower) != kAbbreviations.end();
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> split_sentences(std::string_view input) {
    std::vector<std::string> sentences;
    std::size_t start = 0;
    auto emit = [&](std::size_t end) {
        std::string s = text::trim(input.substr(start, end - start));
        if (!s.empty() && s.find_first_not_of(".!? \t") != std::string::npos) sentences.push_back(std::move(s));
        start = end;
    };
    std::size_t i = 0;
    while (i < input.size()) {
        const char c = input[i];
        if (c != '.' && c != '!' && c != '?') {
            ++i;
            continue;
        }
        std::size_t end = i;
        while (end < input.size() && (input[end] == '.' || input[end] == '!' || input[end] == '?')) ++end;
        const bool boundary = end == input.size() || is_space(input[end]);
        if (boundary && c == '.' && end == i + 1) {
            std::size_t ws = i;
            while (ws > start && !is_space(input[ws - 1])) --ws;
            if (is_abbreviation(input.substr(ws, end - ws))) {
                i = end;
                continue;
            }
        }
        if (boundary) emit(end);
        i = end;
    }
    if (start < input.size()) emit(input.size());
    return sentences;
}

namespace {

std::vector<LabeledPair> silver_chunk(std::span<const std::string> sentences,
                                      const std::vector<const ReferenceAnswer*>& refs, PairScorer& scorer,
                                      double threshold) {
    std::vector<TextPair> pairs;
    pairs.reserve(sentences.size() * refs.size());
    for (const auto& s : sentences)
        for (const auto* r : refs) pairs.emplace_back(s, r->text);
    const auto scores = scorer.score(pairs);
    if (scores.size() != pairs.size()) throw ValidationError("pair scorer returned a wrong number of scores");

    std::vector<LabeledPair> out;
    out.reserve(sentences.size() * 2);
    for (std::size_t si = 0; si < sentences.size(); ++si) {
        const ReferenceAnswer* best_correct = nullptr;
        const ReferenceAnswer* best_incorrect = nullptr;
        double sc = 0, sn = 0;
        for (std::size_t ri = 0; ri < refs.size(); ++ri) {
            const double s = scores[si * refs.size() + ri];
            if (!std::isfinite(s) || s < 0.0 || s > 1.0)
                throw ValidationError("pair scorer returned " + std::to_string(s) + ", outside [0, 1]");
            if (refs[ri]->polarity == Polarity::correct) {
                if (!best_correct || s > sc) best_correct = refs[ri], sc = s;
            } else {
                if (!best_incorrect || s > sn) best_incorrect = refs[ri], sn = s;
            }
        }
        const bool correct_wins = sc >= sn;
        const auto* lower = correct_wins ? best_incorrect : best_correct;
        const auto* higher = correct_wins ? best_correct : best_incorrect;
        const double higher_score = correct_wins ? sc : sn;
        out.push_back({sentences[si], lower->ref_id, 0, PairSource::silver, LabelRule::silver_lower});
        out.push_back({sentences[si], higher->ref_id, higher_score > threshold ? 1 : 0, PairSource::silver,
                       LabelRule::silver_threshold});
    }
    return out;
}

}  // namespace

std::vector<LabeledPair> build_silver(std::span<const StudentAnswer> answers, const ReferenceBank& bank,
                                      PairScorer& scorer, const SilverOptions& options) {
    if (bank.count(Polarity::incorrect) == 0)
        throw ValidationError("bank " + bank.question_id + " has no incorrect references; silver labels need both groups");
    if (bank.count(Polarity::correct) == 0)
        throw ValidationError("bank " + bank.question_id + " has no correct references");

    std::vector<const ReferenceAnswer*> refs;
    for (const auto& r : bank.references) refs.push_back(&r);  // bank order is ref_id order

    std::vector<std::string> sentences;
    for (const auto& a : answers) {
        if (a.question_id != bank.question_id || a.split != Split::train || a.in_augmentation_set) continue;
        for (auto& s : split_sentences(a.text)) sentences.push_back(std::move(s));
    }

    const std::size_t per = std::max<std::size_t>(1, options.sentences_per_request);
    const std::size_t chunks = (sentences.size() + per - 1) / per;
    std::vector<std::vector<LabeledPair>> results(chunks);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (!stop) {
            const std::size_t c = next++;
            if (c >= chunks) return;
            try {
                const std::size_t begin = c * per;
                const std::size_t n = std::min(per, sentences.size() - begin);
                results[c] = silver_chunk(std::span(sentences).subspan(begin, n), refs, scorer,
                                          options.threshold);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                stop = true;
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, chunks));
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (error) std::rethrow_exception(error);

    std::vector<LabeledPair> out;
    out.reserve(sentences.size() * 2);
    for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
    return out;
}

json to_json(const LabeledPair& p) {
    return {{"text_a", p.text_a},
            {"ref_id", p.ref_id},
            {"label", p.label},
            {"source", to_string(p.source)},
            {"rule", to_string(p.rule)}};
}

LabeledPair pair_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("pair must be a JSON object");
    for (const char* field : {"text_a", "ref_id", "label", "source", "rule"})
        if (!j.contains(field)) throw ValidationError(std::string("missing field \"") + field + "\"");
    LabeledPair p;
    p.text_a = j.at("text_a").get<std::string>();
    p.ref_id = j.at("ref_id").get<std::string>();
    if (!j.at("label").is_number_integer()) throw ValidationError("label must be an integer");
    p.label = j.at("label").get<int>();
    p.source = parse_pair_source(j.at("source").get<std::string>());
    p.rule = parse_label_rule(j.at("rule").get<std::string>());
    p.validate();
    return p;
}

void export_pairs(std::span<const LabeledPair> pairs, const std::filesystem::path& path) {
    std::string body;
    for (const auto& p : pairs) {
        p.validate();
        body += to_json(p).dump();
        body += '\n';
    }
    io::write_file_atomic(path, body);
}

std::vector<LabeledPair> import_pairs(const std::filesystem::path& path) {
    std::vector<LabeledPair> out;
    io::for_each_jsonl(path, [&](std::size_t lineno, const json& row) {
        try {
            out.push_back(pair_from_json(row));
        } catch (const std::exception& e) {
            throw ParseError(e.what(), lineno);
        }
    });
    return out;
}

json to_json(const ReviewItem& r) {
    json j = {{"text_a", r.text_a},
              {"ref_id", r.ref_id},
              {"ref_text", r.ref_text},
              {"matched", r.stored_match ? json(*r.stored_match) : json(nullptr)}};
    if (r.decision) j["decision"] = *r.decision;
    return j;
}

ReviewItem review_item_from_json(const json& j) {
    ReviewItem r;
    r.text_a = j.at("text_a").get<std::string>();
    r.ref_id = j.at("ref_id").get<std::string>();
    r.ref_text = j.value("ref_text", "");
    if (j.contains("matched") && !j["matched"].is_null()) r.stored_match = j["matched"].get<std::string>();
    if (j.contains("decision") && !j["decision"].is_null()) r.decision = j["decision"].get<int>();
    return r;
}

void export_reviews(std::span<const ReviewItem> items, const std::filesystem::path& path) {
    std::string body;
    for (const auto& r : items) {
        body += to_json(r).dump();
        body += '\n';
    }
    io::write_file_atomic(path, body);
}

std::vector<ReviewItem> import_reviews(const std::filesystem::path& path) {
    std::vector<ReviewItem> out;
    io::for_each_jsonl(path, [&](std::size_t, const json& row) { out.push_back(review_item_from_json(row)); });
    return out;
}

}  // namespace keyscore
