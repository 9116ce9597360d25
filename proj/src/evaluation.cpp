#include "keyscore/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "keyscore/errors.hpp"
#include "keyscore/text.hpp"

namespace keyscore {

using nlohmann::json;

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t min_n) {
    if (a != b)
        throw ValidationError("score vectors differ in length (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
    if (a < min_n) throw ValidationError("need at least " + std::to_string(min_n) + " scores");
}

void check_range(std::span<const int> v, int k) {
    for (int x : v)
        if (x < 0 || x >= k)
            throw ValidationError("score " + std::to_string(x) + " outside [0, " + std::to_string(k - 1) + "]");
}

}  // namespace

double accuracy(std::span<const int> human, std::span<const int> system) {
    check_lengths(human.size(), system.size(), 1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < human.size(); ++i) hits += human[i] == system[i];
    return static_cast<double>(hits) / static_cast<double>(human.size());
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const int> human, std::span<const int> system,
                                                       int num_categories) {
    check_lengths(human.size(), system.size(), 0);
    check_range(human, num_categories);
    check_range(system, num_categories);
    const auto k = static_cast<std::size_t>(num_categories);
    std::vector<std::vector<std::size_t>> m(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < human.size(); ++i)
        ++m[static_cast<std::size_t>(human[i])][static_cast<std::size_t>(system[i])];
    return m;
}

double qwk(std::span<const int> human, std::span<const int> system, int num_categories) {
    check_lengths(human.size(), system.size(), 2);
    if (num_categories < 2) throw ValidationError("QWK needs at least two categories");
    const auto observed = confusion_matrix(human, system, num_categories);
    const auto k = static_cast<std::size_t>(num_categories);
    std::vector<double> hist_h(k, 0), hist_s(k, 0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            hist_h[i] += static_cast<double>(observed[i][j]);
            hist_s[j] += static_cast<double>(observed[i][j]);
        }
    const double n = static_cast<double>(human.size());
    const double denom_w = static_cast<double>((k - 1) * (k - 1));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double d = static_cast<double>(i) - static_cast<double>(j);
            const double w = d * d / denom_w;
            num += w * static_cast<double>(observed[i][j]);
            den += w * hist_h[i] * hist_s[j] / n;
        }
    if (den == 0.0) throw ValidationError("QWK undefined: both score vectors are constant and equal");
    return std::clamp(1.0 - num / den, -1.0, 1.0);
}

double pearson(std::span<const double> x, std::span<const double> y) {
    check_lengths(x.size(), y.size(), 2);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) throw ValidationError("Pearson correlation undefined for zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pearson(std::span<const int> x, std::span<const int> y) {
    std::vector<double> dx(x.begin(), x.end()), dy(y.begin(), y.end());
    return pearson(std::span<const double>(dx), std::span<const double>(dy));
}

double majority_accuracy(std::span<const int> human) {
    if (human.empty()) throw ValidationError("majority baseline of an empty score list");
    std::map<int, std::size_t> counts;
    for (int h : human) ++counts[h];
    std::size_t best = 0;
    for (const auto& [_, c] : counts) best = std::max(best, c);
    return static_cast<double>(best) / static_cast<double>(human.size());
}

EvalReport evaluate(std::span<const int> human, std::span<const int> system, int max_score, std::string variant) {
    EvalReport r;
    r.variant = std::move(variant);
    r.n = human.size();
    r.confusion = confusion_matrix(human, system, max_score + 1);
    r.accuracy = accuracy(human, system);
    r.majority_accuracy = majority_accuracy(human);
    try {
        r.qwk = qwk(human, system, max_score + 1);
    } catch (const ValidationError&) {
    }
    try {
        r.pearson = pearson(human, system);
    } catch (const ValidationError&) {
    }
    return r;
}

json to_json(const EvalReport& r) {
    return {{"variant", r.variant},
            {"n", r.n},
            {"accuracy", r.accuracy},
            {"qwk", r.qwk ? json(*r.qwk) : json(nullptr)},
            {"pearson", r.pearson ? json(*r.pearson) : json(nullptr)},
            {"confusion", r.confusion},
            {"majority_accuracy", r.majority_accuracy}};
}

double token_overlap(std::string_view manual, std::string_view system) {
    const auto m = text::words(manual);
    if (m.empty()) return 0.0;
    auto s = text::words(system);
    std::size_t shared = 0;
    for (const auto& w : m) {
        auto it = std::find(s.begin(), s.end(), w);
        if (it != s.end()) {
            ++shared;
            s.erase(it);
        }
    }
    return static_cast<double>(shared) / static_cast<double>(m.size());
}

bool key_matches(std::string_view manual, std::string_view system) {
    const std::string m = text::normalize_text(manual);
    if (m.empty()) return false;
    if (text::normalize_text(system).find(m) != std::string::npos) return true;
    return token_overlap(manual, system) > 0.9;
}

OverlapReport key_overlap_eval(const std::map<std::string, std::vector<std::string>>& manual,
                               const std::map<std::string, std::vector<std::string>>& system) {
    OverlapReport report;
    std::size_t manual_words = 0, system_words = 0, system_keys = 0;
    for (const auto& [_, keys] : system) {
        system_keys += keys.size();
        for (const auto& k : keys) system_words += text::words(k).size();
    }
    static const std::vector<std::string> kNone;
    for (const auto& [answer_id, keys] : manual) {
        auto it = system.find(answer_id);
        const auto& candidates = it == system.end() ? kNone : it->second;
        std::vector<bool> used(candidates.size(), false);
        for (const auto& key : keys) {
            ++report.total_keys;
            manual_words += text::words(key).size();
            std::optional<std::size_t> pick;
            double best = -1;
            for (std::size_t j = 0; j < candidates.size(); ++j) {
                if (used[j]) continue;
                const double score = token_overlap(key, candidates[j]);
                if (score > best) best = score, pick = j;
            }
            if (!pick) continue;
            used[*pick] = true;
            report.correct_keys += key_matches(key, candidates[*pick]) ? 1 : 0;
        }
    }
    if (report.total_keys)
        report.accuracy = static_cast<double>(report.correct_keys) / static_cast<double>(report.total_keys);
    if (report.total_keys)
        report.mean_words_manual = static_cast<double>(manual_words) / static_cast<double>(report.total_keys);
    if (system_keys) report.mean_words_system = static_cast<double>(system_words) / static_cast<double>(system_keys);
    return report;
}

std::vector<AblationRow> run_ablation(std::span<const AblationVariant> variants, const AblationInputs& inputs) {
    if (!inputs.extractions || !inputs.questions || !inputs.rubric_banks || !inputs.augmented_banks)
        throw ValidationError("ablation inputs are incomplete");
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        AblationRow row;
        row.variant = v.name;
        try {
            if (!v.provider) throw ValidationError("no embedding provider configured for variant " + v.name);
            const auto& banks = v.augmented_bank ? *inputs.augmented_banks : *inputs.rubric_banks;
            BankEmbeddingCache cache;
            std::vector<int> human, system;
            int max_score = 1;
            for (const auto& a : inputs.answers) {
                if (!a.human_score) throw ValidationError("answer " + a.answer_id + " has no human score");
                const Question& q = inputs.questions->at(a.question_id);
                max_score = std::max(max_score, q.max_score);
                auto ex = inputs.extractions->find(a.answer_id);
                if (ex == inputs.extractions->end())
                    throw ValidationError("no extraction for answer " + a.answer_id);
                const auto bank = banks.find(a.question_id);
                if (bank == banks.end()) throw ValidationError("no bank for question " + a.question_id);
                const auto result = score_extraction(ex->second, q, bank->second, *v.provider, cache, inputs.options);
                human.push_back(*a.human_score);
                system.push_back(result.holistic);
            }
            row.report = evaluate(human, system, max_score, v.name);
        } catch (const std::exception& e) {
            row.report.reset();
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_table(std::span<const AblationRow> rows) {
    std::size_t width = 7;
    for (const auto& r : rows) width = std::max(width, r.variant.size());
    std::ostringstream out;
    auto cell = [&](const std::optional<double>& v) {
        std::ostringstream c;
        if (v) c << std::fixed << std::setprecision(3) << *v;
        else c << "n/a";
        return c.str();
    };
    out << std::left << std::setw(static_cast<int>(width)) << "variant" << "  " << std::right << std::setw(6) << "n"
        << "  " << std::setw(8) << "accuracy" << "  " << std::setw(8) << "wtkappa" << "  " << std::setw(8) << "corr"
        << '\n';
    for (const auto& r : rows) {
        out << std::left << std::setw(static_cast<int>(width)) << r.variant << "  " << std::right;
        if (!r.report) {
            out << "error: " << r.error << '\n';
            continue;
        }
        out << std::setw(6) << r.report->n << "  " << std::setw(8) << cell(r.report->accuracy) << "  "
            << std::setw(8) << cell(r.report->qwk) << "  " << std::setw(8) << cell(r.report->pearson) << '\n';
    }
    return out.str();
}

json to_json(std::span<const AblationRow> rows) {
    json out = json::array();
    for (const auto& r : rows) {
        if (r.report)
            out.push_back(to_json(*r.report));
        else
            out.push_back({{"variant", r.variant}, {"error", r.error}});
    }
    return out;
}

}  // namespace keyscore
