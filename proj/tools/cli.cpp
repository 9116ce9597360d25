#include "keyscore/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <memory>
#include <set>

#include "keyscore/adaptation_data.hpp"
#include "keyscore/corpus.hpp"
#include "keyscore/errors.hpp"
#include "keyscore/evaluation.hpp"
#include "keyscore/io.hpp"
#include "keyscore/key_extraction.hpp"
#include "keyscore/reference_bank.hpp"
#include "keyscore/similarity.hpp"

namespace keyscore::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
    auto in_open_unit = [](double t) { return t > 0.0 && t < 1.0; };
    if (!in_open_unit(analytic_threshold)) throw ValidationError("analytic threshold must lie in (0, 1)");
    if (!in_open_unit(silver_threshold)) throw ValidationError("silver threshold must lie in (0, 1)");
    if (std::abs(ratio_train + ratio_dev + ratio_test - 1.0) > 1e-9)
        throw ValidationError("split ratios must sum to 1");
    if (augmentation_size == 0) throw ValidationError("augmentation size must be positive");
    if (max_in_flight == 0) throw ValidationError("max_in_flight must be positive");
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::optional<std::string> optional_string(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::string>();
}

}  // namespace

RunConfig config_from_json(const json& j, const fs::path& base_dir) {
    RunConfig c;
    try {
        if (auto v = optional_string(j, "corpus")) c.corpus = resolve(base_dir, *v);
        if (j.contains("question_ids")) c.question_ids = j.at("question_ids").get<std::vector<std::string>>();
        if (auto v = optional_string(j, "questions")) c.questions = resolve(base_dir, *v);
        c.seed = j.value("seed", c.seed);
        if (j.contains("split_ratios")) {
            const auto r = j.at("split_ratios").get<std::vector<double>>();
            if (r.size() != 3) throw ValidationError("split_ratios needs three values");
            c.ratio_train = r[0], c.ratio_dev = r[1], c.ratio_test = r[2];
        }
        c.augmentation_size = j.value("augmentation_size", c.augmentation_size);
        if (auto v = optional_string(j, "annotations")) c.annotations = resolve(base_dir, *v);
        if (auto v = optional_string(j, "decisions")) c.decisions = resolve(base_dir, *v);
        if (auto v = optional_string(j, "fixtures")) c.fixtures = resolve(base_dir, *v);
        c.record = j.value("record", c.record);
        if (j.contains("endpoints")) {
            const auto& e = j.at("endpoints");
            c.completion_url = optional_string(e, "completion");
            c.embed_url = optional_string(e, "embed");
            c.adapted_embed_url = optional_string(e, "adapted_embed");
            c.score_url = optional_string(e, "score");
        }
        if (j.contains("completion")) {
            const auto& p = j.at("completion");
            c.model_id = p.value("model_id", c.model_id);
            c.max_tokens = p.value("max_tokens", c.max_tokens);
            c.completion_path = p.value("path", c.completion_path);
        }
        if (j.contains("thresholds")) {
            c.analytic_threshold = j.at("thresholds").value("analytic", c.analytic_threshold);
            c.silver_threshold = j.at("thresholds").value("silver", c.silver_threshold);
        }
        c.dedup_by_reference = j.value("dedup_by_reference", c.dedup_by_reference);
        c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
        if (auto v = optional_string(j, "output_dir")) c.output_dir = resolve(base_dir, *v);
        for (const auto& a : j.value("ablation", json::array())) {
            AblationSpec s;
            s.name = a.at("name").get<std::string>();
            s.provider = a.value("provider", s.provider);
            const std::string bank = a.value("bank", "augmented");
            if (bank != "augmented" && bank != "rubric")
                throw ValidationError("ablation bank must be \"augmented\" or \"rubric\"");
            s.augmented_bank = bank == "augmented";
            c.ablation.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return c;
}

RunConfig load_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

namespace {

/// Stage outputs are written as `<stage>-<sha12>.<ext>`; index.json maps each
/// stage name to its latest file.
class StageStore {
public:
    explicit StageStore(fs::path dir) : dir_(std::move(dir)) {}

    fs::path write(const std::string& stage, const std::string& ext, const std::string& content) {
        const fs::path file = dir_ / (stage + "-" + io::sha256_hex(content).substr(0, 12) + "." + ext);
        io::write_file_atomic(file, content);
        json index = load_index();
        index[stage] = file.filename().string();
        io::write_file_atomic(dir_ / "index.json", index.dump(2) + "\n");
        return file;
    }

    fs::path latest(const std::string& stage) const {
        const json index = load_index();
        if (!index.contains(stage))
            throw Error("missing_input", "no '" + stage + "' output in " + dir_.string() + "; run that stage first");
        const fs::path file = dir_ / index.at(stage).get<std::string>();
        if (!fs::exists(file)) throw Error("missing_input", "stage file " + file.string() + " is missing");
        return file;
    }

private:
    json load_index() const {
        const fs::path p = dir_ / "index.json";
        if (!fs::exists(p)) return json::object();
        return json::parse(io::read_file(p));
    }

    fs::path dir_;
};

void require_file(const fs::path& p, const char* what) {
    if (p.empty()) throw Error("missing_input", std::string("no ") + what + " configured");
    if (!fs::exists(p)) throw Error("missing_input", std::string(what) + " " + p.string() + " does not exist");
}

struct Options {
    std::string config;
    bool dry_run = false;
    std::string corpus, questions, out, fixtures, annotations, decisions;
    std::string completion_url, embed_url, score_url;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    bool record = false;
    std::string split = "test";
    std::string bank = "augmented";
    std::string pred, gold, gold_queue;
};

RunConfig effective_config(const Options& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (!o.corpus.empty()) c.corpus = o.corpus;
    if (!o.questions.empty()) c.questions = o.questions;
    if (!o.out.empty()) c.output_dir = o.out;
    if (!o.fixtures.empty()) c.fixtures = o.fixtures;
    if (!o.annotations.empty()) c.annotations = o.annotations;
    if (!o.decisions.empty()) c.decisions = o.decisions;
    if (!o.completion_url.empty()) c.completion_url = o.completion_url;
    if (!o.embed_url.empty()) c.embed_url = o.embed_url;
    if (!o.score_url.empty()) c.score_url = o.score_url;
    if (o.seed) c.seed = *o.seed;
    if (o.threshold) c.analytic_threshold = *o.threshold;
    if (o.record) c.record = true;
    c.validate();
    return c;
}

// Configured ids, else the questions file's ids, else every ASAP essay set.
std::set<std::string> question_id_set(const RunConfig& c) {
    if (!c.question_ids.empty()) return {c.question_ids.begin(), c.question_ids.end()};
    std::set<std::string> ids;
    if (!c.questions.empty() && fs::exists(c.questions)) {
        const json doc = json::parse(io::read_file(c.questions));
        if (doc.is_array())
            for (const auto& q : doc)
                if (q.contains("question_id")) ids.insert(q.at("question_id").get<std::string>());
    }
    if (ids.empty())
        for (int i = 1; i <= 10; ++i) ids.insert(std::to_string(i));
    return ids;
}

std::vector<StudentAnswer> corpus_with_manifest(const RunConfig& c, const StageStore& store) {
    require_file(c.corpus, "corpus");
    auto corpus = load_corpus(c.corpus, question_id_set(c));
    const auto manifest = manifest_from_json(json::parse(io::read_file(store.latest("split"))));
    apply_manifest(corpus.answers, manifest);
    return std::move(corpus.answers);
}

std::map<std::string, QuestionSetup> load_setups(const RunConfig& c) {
    require_file(c.questions, "questions file");
    const json doc = json::parse(io::read_file(c.questions));
    if (!doc.is_array()) throw ValidationError("questions file must hold a JSON array");
    std::map<std::string, QuestionSetup> setups;
    for (const auto& entry : doc) {
        QuestionSetup s;
        try {
            s.question = question_from_json(entry);
            if (entry.contains("prompt"))
                s.prompt = prompt_template_from_json(entry.at("prompt"));
            else if (entry.contains("prompt_template"))
                s.prompt = load_prompt_template(resolve(c.questions.parent_path(), entry.at("prompt_template")));
            else
                throw ValidationError("question " + s.question.question_id + " has no prompt template");
        } catch (const json::exception& e) {
            throw ValidationError(std::string("questions file: ") + e.what());
        }
        setups.emplace(s.question.question_id, std::move(s));
    }
    return setups;
}

HttpEndpoint endpoint_for(const std::string& url) {
    HttpEndpoint e;
    e.base_url = url;
    return e;
}

std::shared_ptr<EmbeddingProvider> embedder(const std::optional<std::string>& url) {
    if (url) return std::make_shared<HttpEmbeddingProvider>(endpoint_for(*url));
    return std::make_shared<HashingEmbedder>();
}

std::unique_ptr<CompletionClient> completion_client(const RunConfig& c) {
    std::shared_ptr<CompletionClient> live;
    if (c.completion_url) live = std::make_shared<HttpCompletionClient>(endpoint_for(*c.completion_url), c.completion_path);
    if (c.fixtures.empty()) {
        if (!live) throw Error("missing_input", "neither a fixture file nor a completion endpoint is configured");
        struct Forward : CompletionClient {
            std::shared_ptr<CompletionClient> inner;
            std::string complete(std::string_view p, const CompletionParams& params) override {
                return inner->complete(p, params);
            }
        };
        auto f = std::make_unique<Forward>();
        f->inner = live;
        return f;
    }
    return std::make_unique<ReplayCompletionClient>(c.fixtures, c.record ? live : nullptr);
}

CompletionParams completion_params(const RunConfig& c) {
    CompletionParams p;
    p.model_id = c.model_id;
    p.max_tokens = c.max_tokens;
    p.temperature = 0.0;
    return p;
}

std::map<std::string, ReferenceBank> load_banks(const fs::path& file) {
    std::map<std::string, ReferenceBank> banks;
    for (const auto& b : json::parse(io::read_file(file))) {
        auto bank = bank_from_json(b);
        banks.emplace(bank.question_id, std::move(bank));
    }
    return banks;
}

std::string banks_json(const std::map<std::string, ReferenceBank>& banks) {
    json arr = json::array();
    for (const auto& [_, b] : banks) arr.push_back(to_json(b));
    return arr.dump(2) + "\n";
}

std::vector<StudentAnswer> select_split(const std::vector<StudentAnswer>& answers, const std::string& split) {
    std::vector<StudentAnswer> out;
    const bool aug = split == "aug";
    const Split s = aug ? Split::train : parse_split(split);
    for (const auto& a : answers)
        if (aug ? a.in_augmentation_set : a.split == s) out.push_back(a);
    return out;
}

std::map<std::string, std::vector<AnnotationRecord>> annotations_by_question(
    const RunConfig& c, const std::vector<StudentAnswer>& answers) {
    require_file(c.annotations, "annotations file");
    std::vector<std::string> warnings;
    const auto records = load_annotations(c.annotations, answers, &warnings);
    std::map<std::string, std::string> question_of;
    for (const auto& a : answers) question_of[a.answer_id] = a.question_id;
    std::map<std::string, std::vector<AnnotationRecord>> grouped;
    for (const auto& r : records) grouped[question_of.at(r.answer_id)].push_back(r);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    return grouped;
}

int cmd_ingest(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    require_file(c.corpus, "corpus");
    const auto corpus = load_corpus(c.corpus, question_id_set(c));
    json summary = {{"answers", corpus.answers.size()}};
    std::map<std::string, std::size_t> per_q;
    for (const auto& a : corpus.answers) ++per_q[a.question_id];
    summary["per_question"] = per_q;
    json dist = json::object();
    for (const auto& [s, pct] : score_distribution(corpus.answers)) dist[std::to_string(s)] = pct;
    summary["score_distribution_pct"] = dist;
    if (o.dry_run) {
        out << "ok: ingest inputs valid (" << corpus.answers.size() << " answers)\n";
        return 0;
    }
    const auto file = StageStore(c.output_dir).write("ingest", "json", summary.dump(2) + "\n");
    out << summary.dump(2) << "\nwrote " << file.string() << '\n';
    return 0;
}

int cmd_split(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    require_file(c.corpus, "corpus");
    const auto corpus = load_corpus(c.corpus, question_id_set(c));
    const auto manifest = split_corpus(corpus.answers, {c.ratio_train, c.ratio_dev, c.ratio_test}, c.seed);
    std::map<Split, std::size_t> counts;
    for (const auto& [_, s] : manifest.assignments) ++counts[s];
    out << "train " << counts[Split::train] << "  dev " << counts[Split::dev] << "  test " << counts[Split::test]
        << '\n';
    if (o.dry_run) return 0;
    out << "wrote " << StageStore(c.output_dir).write("split", "json", to_json(manifest).dump(2) + "\n").string()
        << '\n';
    return 0;
}

int cmd_select_aug(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    StageStore store(c.output_dir);
    require_file(c.corpus, "corpus");
    auto corpus = load_corpus(c.corpus, question_id_set(c));
    auto manifest = manifest_from_json(json::parse(io::read_file(store.latest("split"))));
    manifest.augmentation.clear();
    apply_manifest(corpus.answers, manifest);
    manifest.augmentation = select_augmentation_set(corpus.answers, c.augmentation_size, c.seed);
    out << "selected " << manifest.augmentation.size() << " answers for augmentation\n";
    if (o.dry_run) return 0;
    out << "wrote " << store.write("split", "json", to_json(manifest).dump(2) + "\n").string() << '\n';
    return 0;
}

int cmd_extract(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    StageStore store(c.output_dir);
    const auto answers = select_split(corpus_with_manifest(c, store), o.split);
    const auto setups = load_setups(c);
    auto client = completion_client(c);
    if (o.dry_run) {
        for (const auto& a : answers) build_prompt(setups.at(a.question_id).question, setups.at(a.question_id).prompt, a.text);
        out << "ok: extract inputs valid (" << answers.size() << " answers)\n";
        return 0;
    }
    const auto batch = extract_batch(setups, answers, *client, completion_params(c), c.max_in_flight);
    std::vector<json> rows;
    std::size_t keys = 0;
    for (const auto& r : batch.results) {
        rows.push_back(to_json(r));
        keys += r.key_count();
    }
    const auto file = store.write("extract-" + o.split, "jsonl", io::to_jsonl(rows));
    out << "extracted " << keys << " keys from " << answers.size() << " answers (" << batch.failures
        << " parse failures)\nwrote " << file.string() << '\n';
    return 0;
}

int cmd_augment_bank(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    StageStore store(c.output_dir);
    const auto answers = corpus_with_manifest(c, store);
    const auto setups = load_setups(c);
    const auto grouped = annotations_by_question(c, answers);
    auto provider = embedder(c.embed_url);
    const auto sim = cosine_similarity(*provider);
    std::map<std::string, ReferenceBank> rubric, augmented;
    for (const auto& [qid, setup] : setups) {
        rubric.emplace(qid, init_from_rubric(setup.question));
        static const std::vector<AnnotationRecord> kNone;
        auto it = grouped.find(qid);
        augmented.emplace(qid, augment(rubric.at(qid), it == grouped.end() ? kNone : it->second, sim));
        augmented.at(qid).validate();
        out << "question " << qid << ": " << rubric.at(qid).references.size() << " rubric -> "
            << augmented.at(qid).references.size() << " references\n";
    }
    if (o.dry_run) return 0;
    out << "wrote " << store.write("bank-rubric", "json", banks_json(rubric)).string() << '\n';
    out << "wrote " << store.write("bank-augmented", "json", banks_json(augmented)).string() << '\n';
    return 0;
}

int cmd_build_gold(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    StageStore store(c.output_dir);
    const auto answers = corpus_with_manifest(c, store);
    const auto grouped = annotations_by_question(c, answers);
    const auto banks = load_banks(store.latest("bank-augmented"));
    std::vector<LabeledPair> pairs;
    std::vector<ReviewItem> queue;
    std::size_t combinations = 0;
    for (const auto& [qid, records] : grouped) {
        auto gold = build_gold(records, banks.at(qid));
        for (const auto& w : gold.warnings) std::cerr << "warning: " << w << '\n';
        combinations += gold.combinations;
        pairs.insert(pairs.end(), gold.pairs.begin(), gold.pairs.end());
        queue.insert(queue.end(), gold.reviews.begin(), gold.reviews.end());
    }
    out << combinations << " combinations: " << pairs.size() << " rule-labeled, " << queue.size()
        << " for manual review\n";
    if (o.dry_run) return 0;
    std::vector<json> queue_rows;
    for (const auto& r : queue) queue_rows.push_back(to_json(r));
    out << "wrote " << store.write("gold-queue", "jsonl", io::to_jsonl(queue_rows)).string() << '\n';

    const fs::path decisions = c.decisions.empty() ? c.output_dir / "decisions.jsonl" : c.decisions;
    DecisionStore ds(decisions);
    const auto manual = resolve_reviews(queue, ds);
    pairs.insert(pairs.end(), manual.begin(), manual.end());
    std::vector<json> rows;
    for (const auto& p : pairs) rows.push_back(to_json(p));
    out << "gold dataset: " << pairs.size() << " pairs\nwrote "
        << store.write("gold-pairs", "jsonl", io::to_jsonl(rows)).string() << '\n';
    return 0;
}

int cmd_review(const Options& o, std::istream& in, std::ostream& out) {
    const RunConfig c = effective_config(o);
    const fs::path queue_path = o.gold_queue.empty() ? StageStore(c.output_dir).latest("gold-queue") : fs::path(o.gold_queue);
    require_file(queue_path, "review queue");
    const auto queue = import_reviews(queue_path);
    const fs::path decisions = c.decisions.empty() ? c.output_dir / "decisions.jsonl" : c.decisions;
    if (o.dry_run) {
        DecisionStore ds(decisions);
        out << "ok: " << queue.size() << " review items, " << ds.size() << " stored decisions\n";
        return 0;
    }
    DecisionStore ds(decisions);
    const auto session = review(queue, ds, &in, &out);
    out << "\n" << session.pairs.size() << " decided, " << session.undecided.size() << " pending; decisions in "
        << decisions.string() << '\n';
    return 0;
}

int cmd_build_silver(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    StageStore store(c.output_dir);
    const auto answers = corpus_with_manifest(c, store);
    const auto banks = load_banks(store.latest("bank-augmented"));
    std::unique_ptr<PairScorer> scorer;
    if (c.score_url)
        scorer = std::make_unique<HttpPairScorer>(endpoint_for(*c.score_url));
    else
        scorer = std::make_unique<EmbeddingPairScorer>(embedder(c.embed_url));
    if (o.dry_run) {
        out << "ok: build-silver inputs valid\n";
        return 0;
    }
    SilverOptions so;
    so.threshold = c.silver_threshold;
    so.workers = c.max_in_flight;
    std::vector<json> rows;
    for (const auto& [qid, bank] : banks)
        for (const auto& p : build_silver(answers, bank, *scorer, so)) rows.push_back(to_json(p));
    out << "silver dataset: " << rows.size() << " pairs\nwrote "
        << store.write("silver-pairs", "jsonl", io::to_jsonl(rows)).string() << '\n';
    return 0;
}

int cmd_score(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    StageStore store(c.output_dir);
    const auto answers = select_split(corpus_with_manifest(c, store), o.split);
    const auto setups = load_setups(c);
    const auto banks = load_banks(store.latest(o.bank == "rubric" ? "bank-rubric" : "bank-augmented"));
    auto client = completion_client(c);
    auto provider = embedder(c.embed_url);
    if (o.dry_run) {
        out << "ok: score inputs valid (" << answers.size() << " answers)\n";
        return 0;
    }
    const auto batch = extract_batch(setups, answers, *client, completion_params(c), c.max_in_flight);
    BankEmbeddingCache cache;
    GradingOptions go{c.analytic_threshold, c.dedup_by_reference};
    std::vector<json> rows;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        const auto& a = answers[i];
        rows.push_back(to_json(score_extraction(batch.results[i], setups.at(a.question_id).question,
                                                banks.at(a.question_id), *provider, cache, go)));
    }
    const auto file = store.write("scores-" + o.split, "jsonl", io::to_jsonl(rows));
    out << "scored " << rows.size() << " answers (" << batch.failures << " extraction failures)\nwrote "
        << file.string() << '\n';
    return 0;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    const fs::path gold = o.gold.empty() ? c.corpus : fs::path(o.gold);
    require_file(gold, "gold corpus");
    const fs::path pred = o.pred.empty() ? StageStore(c.output_dir).latest("scores-" + o.split) : fs::path(o.pred);
    require_file(pred, "predictions file");
    const auto corpus = load_corpus(gold, question_id_set(c));
    std::map<std::string, int> human;
    for (const auto& a : corpus.answers)
        if (a.human_score) human[a.answer_id] = *a.human_score;
    std::vector<int> h, s;
    io::for_each_jsonl(pred, [&](std::size_t lineno, const json& row) {
        const auto r = holistic_from_json(row);
        auto it = human.find(r.answer_id);
        if (it == human.end()) throw ParseError("prediction for unknown answer " + r.answer_id, lineno);
        h.push_back(it->second);
        s.push_back(r.holistic);
    });
    if (o.dry_run) {
        out << "ok: evaluate inputs valid (" << h.size() << " predictions)\n";
        return 0;
    }
    const auto report = evaluate(h, s, 3, "system");
    const std::vector<AblationRow> rows{{"system", report, {}}};
    out << format_table(rows);
    out << "majority baseline accuracy " << report.majority_accuracy << '\n';
    if (!c.output_dir.empty())
        out << "wrote " << StageStore(c.output_dir).write("report", "json", to_json(report).dump(2) + "\n").string()
            << '\n';
    return 0;
}

int cmd_ablate(const Options& o, std::ostream& out) {
    const RunConfig c = effective_config(o);
    if (c.ablation.empty()) throw ValidationError("config defines no ablation variants");
    StageStore store(c.output_dir);
    const auto answers = select_split(corpus_with_manifest(c, store), o.split);
    const auto setups = load_setups(c);
    const auto rubric = load_banks(store.latest("bank-rubric"));
    const auto augmented = load_banks(store.latest("bank-augmented"));
    auto client = completion_client(c);

    std::vector<AblationVariant> variants;
    for (const auto& spec : c.ablation) {
        AblationVariant v{spec.name, nullptr, spec.augmented_bank};
        if (spec.provider == "builtin") v.provider = std::make_shared<HashingEmbedder>();
        else if (spec.provider == "embed") v.provider = c.embed_url ? embedder(c.embed_url) : nullptr;
        else if (spec.provider == "adapted_embed") v.provider = c.adapted_embed_url ? embedder(c.adapted_embed_url) : nullptr;
        else v.provider = embedder(spec.provider);
        variants.push_back(std::move(v));
    }
    if (o.dry_run) {
        out << "ok: ablate inputs valid (" << variants.size() << " variants, " << answers.size() << " answers)\n";
        return 0;
    }
    const auto batch = extract_batch(setups, answers, *client, completion_params(c), c.max_in_flight);
    std::map<std::string, ExtractionResult> extractions;
    for (const auto& r : batch.results) extractions.emplace(r.answer_id, r);
    std::map<std::string, Question> questions;
    for (const auto& [qid, s] : setups) questions.emplace(qid, s.question);
    AblationInputs inputs{answers, &extractions, &questions, &rubric, &augmented,
                          GradingOptions{c.analytic_threshold, c.dedup_by_reference}};
    const auto rows = run_ablation(variants, inputs);
    out << format_table(rows);
    out << "wrote " << store.write("ablation", "json", to_json(rows).dump(2) + "\n").string() << '\n';
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"keyscore: short-answer grading by justification-key extraction and reference similarity"};
    app.name("keyscore");
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "run configuration JSON");
        sub->add_flag("--dry-run", o.dry_run, "validate inputs without writing");
        sub->add_option("--corpus", o.corpus, "corpus TSV");
        sub->add_option("--questions", o.questions, "questions JSON");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--seed", o.seed, "random seed");
        return sub;
    };
    auto* ingest = common(app.add_subcommand("ingest", "load the corpus and report its score distribution"));
    auto* split = common(app.add_subcommand("split", "assign train/dev/test splits"));
    auto* select_aug = common(app.add_subcommand("select-aug", "choose the per-question augmentation answers"));
    auto* extract = common(app.add_subcommand("extract", "extract justification keys with the one-shot prompt"));
    auto* augment_bank = common(app.add_subcommand("augment-bank", "build rubric and augmented reference banks"));
    auto* build_gold_cmd = common(app.add_subcommand("build-gold", "label gold pairs and queue manual reviews"));
    auto* review_cmd = common(app.add_subcommand("review", "decide queued gold pairs interactively"));
    auto* build_silver_cmd = common(app.add_subcommand("build-silver", "label silver pairs from training sentences"));
    auto* score = common(app.add_subcommand("score", "grade answers of a split"));
    auto* evaluate_cmd = common(app.add_subcommand("evaluate", "compare predictions with human scores"));
    auto* ablate = common(app.add_subcommand("ablate", "evaluate provider/bank variants"));

    for (auto* sub : {extract, score, ablate}) {
        sub->add_option("--fixtures", o.fixtures, "completion fixture JSONL");
        sub->add_option("--completion-url", o.completion_url, "text-completion endpoint base URL");
        sub->add_flag("--record", o.record, "forward fixture misses to the live endpoint and record them");
        sub->add_option("--split", o.split, "train, dev, test or aug")->check(CLI::IsMember({"train", "dev", "test", "aug"}));
    }
    for (auto* sub : {augment_bank, build_gold_cmd, select_aug}) sub->add_option("--annotations", o.annotations, "annotation JSONL");
    for (auto* sub : {build_gold_cmd, review_cmd}) sub->add_option("--decisions", o.decisions, "review decisions JSONL");
    for (auto* sub : {augment_bank, build_silver_cmd, score}) sub->add_option("--embed-url", o.embed_url, "embedding endpoint base URL");
    build_silver_cmd->add_option("--score-url", o.score_url, "pair-scoring endpoint base URL");
    score->add_option("--threshold", o.threshold, "analytic similarity threshold");
    score->add_option("--bank", o.bank, "augmented or rubric")->check(CLI::IsMember({"augmented", "rubric"}));
    review_cmd->add_option("--gold-queue", o.gold_queue, "review queue JSONL");
    evaluate_cmd->add_option("--pred", o.pred, "HolisticResult JSONL");
    evaluate_cmd->add_option("--gold", o.gold, "corpus TSV with human scores");
    evaluate_cmd->add_option("--split", o.split, "split whose scores to read from the output directory");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << e.what() << '\n';
        return 2;
    }

    try {
        if (ingest->parsed()) return cmd_ingest(o, out);
        if (split->parsed()) return cmd_split(o, out);
        if (select_aug->parsed()) return cmd_select_aug(o, out);
        if (extract->parsed()) return cmd_extract(o, out);
        if (augment_bank->parsed()) return cmd_augment_bank(o, out);
        if (build_gold_cmd->parsed()) return cmd_build_gold(o, out);
        if (review_cmd->parsed()) return cmd_review(o, in, out);
        if (build_silver_cmd->parsed()) return cmd_build_silver(o, out);
        if (score->parsed()) return cmd_score(o, out);
        if (evaluate_cmd->parsed()) return cmd_evaluate(o, out);
        if (ablate->parsed()) return cmd_ablate(o, out);
    } catch (const Error& e) {
        std::string msg = e.what();
        for (auto& ch : msg)
            if (ch == '\n') ch = ' ';
        err << "error: " << e.kind() << ": " << msg << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (auto& ch : msg)
            if (ch == '\n') ch = ' ';
        err << "error: internal: " << msg << '\n';
        return 1;
    }
    err << "error: usage: no subcommand\n";
    return 2;
}

}  // namespace keyscore::cli
