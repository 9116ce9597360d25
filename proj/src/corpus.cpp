#include "keyscore/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <unordered_map>

#include "keyscore/errors.hpp"
#include "keyscore/io.hpp"
#include "keyscore/text.hpp"
#include "shuffle.hpp"

namespace keyscore {

using nlohmann::json;

std::vector<std::string> Question::labels() const {
    std::vector<std::string> out;
    out.reserve(sub_questions.size());
    for (const auto& s : sub_questions) out.push_back(s.label);
    return out;
}

void Question::validate() const {
    if (question_id.empty()) throw ValidationError("question without id");
    if (max_score < 1) throw ValidationError("question " + question_id + ": max_score must be >= 1");
    if (sub_questions.empty()) throw ValidationError("question " + question_id + ": no sub-questions");
    std::set<std::string> seen;
    for (const auto& s : sub_questions) {
        if (s.label.empty()) throw ValidationError("question " + question_id + ": empty sub-question label");
        if (!seen.insert(s.label).second)
            throw ValidationError("question " + question_id + ": duplicate sub-question label " + s.label);
        if (text::trim(s.instruction_text).empty())
            throw ValidationError("question " + question_id + ": sub-question " + s.label +
                                  " has no instruction text");
    }
    if (rubric_correct_answers.empty())
        throw ValidationError("question " + question_id + ": rubric has no correct answers");
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split '" + std::string(s) + "'");
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
        auto tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            cols.push_back(line.substr(start));
            break;
        }
        cols.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return cols;
}

int parse_int(std::string_view field, const char* column, std::size_t lineno) {
    std::string t = text::trim(field);
    int value = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw ParseError(std::string("non-integer ") + column + " '" + t + "'", lineno);
    return value;
}

}  // namespace

Corpus parse_corpus(std::string_view tsv, const std::set<std::string>& question_ids) {
    static const std::vector<std::string_view> kHeader = {"Id", "EssaySet", "Score1", "Score2",
                                                          "EssayText"};
    Corpus corpus;
    std::set<std::string> seen_ids;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < tsv.size()) {
        auto nl = tsv.find('\n', pos);
        if (nl == std::string_view::npos) nl = tsv.size();
        std::string_view line = tsv.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
        if (!header_seen) {
            auto cols = split_tabs(line);
            if (cols.size() != kHeader.size() || !std::equal(cols.begin(), cols.end(), kHeader.begin(),
                                                              [](auto a, auto b) { return text::trim(a) == b; }))
                throw ParseError("expected header Id\\tEssaySet\\tScore1\\tScore2\\tEssayText", lineno);
            header_seen = true;
            continue;
        }
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        auto cols = split_tabs(line);
        if (cols.size() != 5)
            throw ParseError("expected 5 columns, found " + std::to_string(cols.size()), lineno);
        std::string set_id = text::trim(cols[1]);
        if (!question_ids.contains(set_id)) continue;
        StudentAnswer a;
        a.answer_id = text::trim(cols[0]);
        if (a.answer_id.empty()) throw ParseError("empty Id", lineno);
        if (!seen_ids.insert(a.answer_id).second) throw ParseError("duplicate Id " + a.answer_id, lineno);
        a.question_id = set_id;
        const int score = parse_int(cols[2], "Score1", lineno);
        parse_int(cols[3], "Score2", lineno);
        if (score < 0 || score > 3) throw ParseError("Score1 out of range [0, 3]", lineno);
        a.human_score = score;
        a.text = std::string(cols[4]);
        corpus.answers.push_back(std::move(a));
    }
    if (!header_seen) throw ParseError("missing header row", 1);
    if (corpus.answers.empty()) throw ValidationError("empty result set");

    std::set<std::string> present;
    for (const auto& a : corpus.answers) present.insert(a.question_id);
    for (const auto& id : present) {
        Question q;
        q.question_id = id;
        q.max_score = 3;
        corpus.questions.push_back(std::move(q));
    }
    return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, const std::set<std::string>& question_ids) {
    return parse_corpus(io::read_file(path), question_ids);
}

namespace {

std::map<std::string, std::vector<const StudentAnswer*>> group_by_question(
    std::span<const StudentAnswer> answers, bool train_only) {
    std::map<std::string, std::vector<const StudentAnswer*>> groups;
    for (const auto& a : answers) {
        if (train_only && a.split != Split::train) continue;
        groups[a.question_id].push_back(&a);
    }
    for (auto& [_, v] : groups)
        std::sort(v.begin(), v.end(), [](auto* x, auto* y) { return x->answer_id < y->answer_id; });
    return groups;
}

}  // namespace

SplitManifest split_corpus(std::span<const StudentAnswer> answers, const SplitRatios& ratios,
                           std::uint64_t seed) {
    if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9)
        throw ValidationError("split ratios must be non-negative and sum to 1");

    SplitManifest manifest;
    manifest.seed = seed;
    std::mt19937_64 rng(seed);
    for (auto& [qid, group] : group_by_question(answers, false)) {
        const std::size_t n = group.size();
        if (n < 10)
            throw ValidationError("question " + qid + " has " + std::to_string(n) +
                                  " answers; at least 10 are needed to split");
        const auto n_dev = static_cast<std::size_t>(std::llround(ratios.dev * static_cast<double>(n)));
        const auto n_test = static_cast<std::size_t>(std::llround(ratios.test * static_cast<double>(n)));
        auto order = group;
        detail::seeded_shuffle(order, rng);
        for (std::size_t i = 0; i < n; ++i) {
            Split s = i < n_test ? Split::test : i < n_test + n_dev ? Split::dev : Split::train;
            manifest.assignments[order[i]->answer_id] = s;
        }
    }
    return manifest;
}

std::vector<std::string> select_augmentation_set(std::span<const StudentAnswer> answers,
                                                 std::size_t per_question, std::uint64_t seed,
                                                 int max_score) {
    std::vector<std::string> selected;
    std::mt19937_64 rng(seed);
    for (auto& [qid, group] : group_by_question(answers, true)) {
        if (group.size() < per_question)
            throw ValidationError("question " + qid + " has " + std::to_string(group.size()) +
                                  " train answers; " + std::to_string(per_question) + " are needed");
        // pools[s] for s in 0..max_score, pools[max_score + 1] for unscored
        std::vector<std::vector<const StudentAnswer*>> pools(static_cast<std::size_t>(max_score) + 2);
        for (const auto* a : group) {
            if (a->human_score && *a->human_score >= 0 && *a->human_score <= max_score)
                pools[static_cast<std::size_t>(*a->human_score)].push_back(a);
            else
                pools.back().push_back(a);
        }
        for (auto& p : pools) detail::seeded_shuffle(p, rng);

        std::vector<const StudentAnswer*> chosen;
        auto& top = pools[static_cast<std::size_t>(max_score)];
        for (std::size_t i = 0; i < top.size() && chosen.size() < per_question; ++i) chosen.push_back(top[i]);

        std::vector<std::size_t> cursor(pools.size(), 0);
        bool progressed = true;
        while (chosen.size() < per_question && progressed) {
            progressed = false;
            for (int s = max_score - 1; s >= 0 && chosen.size() < per_question; --s) {
                auto& pool = pools[static_cast<std::size_t>(s)];
                auto& c = cursor[static_cast<std::size_t>(s)];
                if (c < pool.size()) {
                    chosen.push_back(pool[c++]);
                    progressed = true;
                }
            }
        }
        for (std::size_t i = 0; chosen.size() < per_question; ++i) chosen.push_back(pools.back()[i]);

        std::vector<std::string> ids;
        for (const auto* a : chosen) ids.push_back(a->answer_id);
        std::sort(ids.begin(), ids.end());
        selected.insert(selected.end(), ids.begin(), ids.end());
    }
    return selected;
}

void apply_manifest(std::vector<StudentAnswer>& answers, const SplitManifest& manifest) {
    std::set<std::string> aug(manifest.augmentation.begin(), manifest.augmentation.end());
    for (auto& a : answers) {
        auto it = manifest.assignments.find(a.answer_id);
        if (it == manifest.assignments.end())
            throw ValidationError("answer " + a.answer_id + " has no split assignment");
        a.split = it->second;
        a.in_augmentation_set = aug.contains(a.answer_id);
        if (a.in_augmentation_set && a.split != Split::train)
            throw ValidationError("augmentation answer " + a.answer_id + " is not in the train split");
    }
}

namespace {

AnnotationRecord annotation_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("annotation record must be an object");
    AnnotationRecord r;
    r.answer_id = j.at("answer_id").get<std::string>();
    for (const auto& k : j.at("keys")) {
        AnnotatedKey key;
        key.sub = k.at("sub").get<std::string>();
        key.span = k.at("span").get<std::string>();
        key.score = k.at("score").get<int>();
        if (k.contains("matched") && !k.at("matched").is_null()) key.matched = k.at("matched").get<std::string>();
        if (key.score != 0 && key.score != 1)
            throw ValidationError("key score must be 0 or 1 in answer " + r.answer_id);
        if (text::trim(key.span).empty()) throw ValidationError("empty span in answer " + r.answer_id);
        if (key.score == 1 && (!key.matched || text::trim(*key.matched).empty()))
            throw ValidationError("key '" + key.span + "' in answer " + r.answer_id +
                                  " scored 1 without a matched correct answer");
        r.keys.push_back(std::move(key));
    }
    return r;
}

}  // namespace

std::vector<AnnotationRecord> parse_annotations(std::string_view jsonl,
                                                std::span<const StudentAnswer> corpus,
                                                std::vector<std::string>* warnings) {
    std::unordered_map<std::string, const StudentAnswer*> by_id;
    for (const auto& a : corpus) by_id.emplace(a.answer_id, &a);

    std::vector<AnnotationRecord> records;
    std::set<std::string> seen;
    std::size_t lineno = 0, pos = 0;
    while (pos < jsonl.size()) {
        auto nl = jsonl.find('\n', pos);
        if (nl == std::string_view::npos) nl = jsonl.size();
        std::string_view line = jsonl.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        AnnotationRecord rec;
        try {
            rec = annotation_from_json(json::parse(line));
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid annotation record: ") + e.what(), lineno);
        }
        if (!seen.insert(rec.answer_id).second)
            throw ValidationError("line " + std::to_string(lineno) + ": duplicate answer_id " + rec.answer_id);
        if (!corpus.empty()) {
            auto it = by_id.find(rec.answer_id);
            if (it == by_id.end())
                throw ValidationError("line " + std::to_string(lineno) + ": unknown answer_id " + rec.answer_id);
            if (!it->second->in_augmentation_set)
                throw ValidationError("line " + std::to_string(lineno) + ": answer " + rec.answer_id +
                                      " is not in the augmentation set");
            const std::string haystack = text::collapse_whitespace(it->second->text);
            for (const auto& k : rec.keys) {
                if (haystack.find(text::collapse_whitespace(k.span)) == std::string::npos)
                    throw ValidationError("line " + std::to_string(lineno) + ": span '" + k.span +
                                          "' does not occur in answer " + rec.answer_id);
            }
        }
        records.push_back(std::move(rec));
    }
    if (records.empty() && warnings) warnings->push_back("annotation file holds no records");
    return records;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path,
                                               std::span<const StudentAnswer> corpus,
                                               std::vector<std::string>* warnings) {
    return parse_annotations(io::read_file(path), corpus, warnings);
}

std::map<int, double> score_distribution(std::span<const StudentAnswer> answers, int max_score) {
    std::map<int, double> pct;
    for (int s = 0; s <= max_score; ++s) pct[s] = 0.0;
    if (answers.empty()) return pct;
    std::vector<std::size_t> counts(static_cast<std::size_t>(max_score) + 1, 0);
    for (const auto& a : answers) {
        if (!a.human_score) throw ValidationError("answer " + a.answer_id + " has no human score");
        if (*a.human_score < 0 || *a.human_score > max_score)
            throw ValidationError("answer " + a.answer_id + " score outside [0, max_score]");
        ++counts[static_cast<std::size_t>(*a.human_score)];
    }
    for (int s = 0; s <= max_score; ++s)
        pct[s] = 100.0 * static_cast<double>(counts[static_cast<std::size_t>(s)]) /
                 static_cast<double>(answers.size());
    return pct;
}

json to_json(const SplitManifest& m) {
    json assignments = json::object();
    for (const auto& [id, s] : m.assignments) assignments[id] = std::string(to_string(s));
    return {{"seed", m.seed}, {"assignments", assignments}, {"augmentation", m.augmentation}};
}

SplitManifest manifest_from_json(const json& j) {
    SplitManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [id, s] : j.at("assignments").items()) m.assignments[id] = parse_split(s.get<std::string>());
    if (j.contains("augmentation")) m.augmentation = j.at("augmentation").get<std::vector<std::string>>();
    return m;
}

json to_json(const Question& q) {
    json subs = json::array();
    for (const auto& s : q.sub_questions) subs.push_back({{"label", s.label}, {"instruction", s.instruction_text}});
    return {{"question_id", q.question_id},
            {"full_text", q.full_text},
            {"max_score", q.max_score},
            {"sub_questions", subs},
            {"rubric_correct_answers", q.rubric_correct_answers}};
}

Question question_from_json(const json& j) {
    Question q;
    q.question_id = j.at("question_id").get<std::string>();
    q.full_text = j.value("full_text", "");
    q.max_score = j.value("max_score", 3);
    for (const auto& s : j.at("sub_questions"))
        q.sub_questions.push_back({s.at("label").get<std::string>(), s.at("instruction").get<std::string>()});
    q.rubric_correct_answers = j.at("rubric_correct_answers").get<std::vector<std::string>>();
    q.validate();
    return q;
}

std::vector<Question> load_questions(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ValidationError(path.string() + ": expected a JSON array of questions");
    std::vector<Question> out;
    for (const auto& q : doc) {
        try {
            out.push_back(question_from_json(q));
        } catch (const json::exception& e) {
            throw ValidationError(path.string() + ": " + e.what());
        }
    }
    return out;
}

json to_json(const AnnotationRecord& r) {
    json keys = json::array();
    for (const auto& k : r.keys)
        keys.push_back({{"sub", k.sub},
                        {"span", k.span},
                        {"score", k.score},
                        {"matched", k.matched ? json(*k.matched) : json(nullptr)}});
    return {{"answer_id", r.answer_id}, {"keys", keys}};
}

}  // namespace keyscore
