#include "promptforge/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/promptkit.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

using nlohmann::json;
namespace fs = std::filesystem;
namespace util = promptforge::util;

namespace {

std::string fmt_double(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string sanitize_id(const std::string& id) {
    std::string out = id;
    for (char& c : out)
        if (c == '+' || c == '/' || c == ' ') c = '_';
    return out;
}

fs::path resolve_rel(const fs::path& base, const std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return path;
    return base / path;
}

EndpointSpec endpoint_from_json(const std::string& name, const json& j, const fs::path& base) {
    EndpointSpec spec;
    spec.name = name;
    std::string kind = j.value("kind", "mock");
    if (kind == "mock") {
        spec.kind = EndpointSpec::Kind::mock;
        if (!j.contains("rules")) throw ConfigError("endpoint '" + name + "': mock needs 'rules'");
        spec.rules_path = resolve_rel(base, j["rules"].get<std::string>()).string();
    } else if (kind == "remote") {
        spec.kind = EndpointSpec::Kind::remote;
        spec.base_url = j.value("base_url", "");
        spec.model = j.value("model", "");
        spec.auth_env = j.value("auth_env", "");
        spec.timeout_s = j.value("timeout_s", 30.0);
        spec.max_retries = j.value("max_retries", 2);
        spec.backoff_ms = j.value("backoff_ms", 200);
        spec.reasoning = j.value("reasoning", true);
        if (spec.base_url.empty())
            throw ConfigError("endpoint '" + name + "': remote needs 'base_url'");
    } else {
        throw ConfigError("endpoint '" + name + "': unknown kind '" + kind + "'");
    }
    return spec;
}

json endpoint_to_json(const EndpointSpec& spec) {
    json j;
    if (spec.kind == EndpointSpec::Kind::mock) {
        j["kind"] = "mock";
        j["rules"] = spec.rules_path;
    } else {
        j["kind"] = "remote";
        j["base_url"] = spec.base_url;
        j["model"] = spec.model;
        j["auth_env"] = spec.auth_env;
        j["timeout_s"] = spec.timeout_s;
        j["max_retries"] = spec.max_retries;
        j["backoff_ms"] = spec.backoff_ms;
        j["reasoning"] = spec.reasoning;
    }
    return j;
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(util::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config: not valid JSON (" + std::string(e.what()) + ")");
    }
    fs::path base = fs::absolute(path).parent_path();
    RunConfig c;
    try {
        if (doc.contains("taxonomy"))
            c.taxonomy_path = resolve_rel(base, doc["taxonomy"].get<std::string>());
        if (doc.contains("dataset"))
            c.dataset_path = resolve_rel(base, doc["dataset"].get<std::string>());
        if (doc.contains("library"))
            c.library_manifest = resolve_rel(base, doc["library"].get<std::string>());
        if (doc.contains("out_dir")) c.out_dir = doc["out_dir"].get<std::string>();

        if (doc.contains("split")) {
            const auto& s = doc["split"];
            if (s.contains("ratios")) {
                auto r = s["ratios"];
                c.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
            }
            c.split_seed = s.value("seed", c.split_seed);
        }
        if (doc.contains("embedder")) {
            const auto& e = doc["embedder"];
            std::string kind = e.value("kind", "builtin");
            c.embedder.kind = kind == "remote" ? EmbedderConfig::Kind::remote
                                               : EmbedderConfig::Kind::builtin;
            c.embedder.dim = e.value("dim", 256);
            c.embedder.url = e.value("url", "");
            c.embedder.max_retries = e.value("max_retries", 2);
            c.embedder.backoff_ms = e.value("backoff_ms", 100);
        }
        if (doc.contains("endpoints"))
            for (const auto& [name, j] : doc["endpoints"].items())
                c.endpoints[name] = endpoint_from_json(name, j, base);
        c.target_endpoint = doc.value("target_endpoint", "");
        c.optimizer_endpoint = doc.value("optimizer_endpoint", c.target_endpoint);
        if (doc.contains("decoding")) {
            const auto& d = doc["decoding"];
            c.decoding.top_p = d.value("top_p", c.decoding.top_p);
            c.decoding.top_k = d.value("top_k", c.decoding.top_k);
            c.decoding.temperature = d.value("temperature", c.decoding.temperature);
            c.decoding.max_tokens = d.value("max_tokens", c.decoding.max_tokens);
            c.decoding.repetition_penalty =
                d.value("repetition_penalty", c.decoding.repetition_penalty);
            c.decoding.presence_penalty = d.value("presence_penalty", c.decoding.presence_penalty);
            c.decoding.seed = d.value("seed", c.decoding.seed);
        }
        if (doc.contains("optimizer")) {
            const auto& o = doc["optimizer"];
            c.optimizer.rounds = o.value("rounds", c.optimizer.rounds);
            c.optimizer.candidates_per_round =
                o.value("candidates_per_round", c.optimizer.candidates_per_round);
            if (o.contains("k_options"))
                c.optimizer.k_options = o["k_options"].get<std::vector<int>>();
            c.optimizer.eval_seed = o.value("eval_seed", c.optimizer.eval_seed);
            c.optimizer.mutation_seed = o.value("mutation_seed", c.optimizer.mutation_seed);
            c.optimizer.budget = o.value("budget", c.optimizer.budget);
            c.optimizer.m_samples = o.value("m_samples", c.optimizer.m_samples);
            c.optimizer.max_error_cases = o.value("max_error_cases", c.optimizer.max_error_cases);
        }
    } catch (const json::exception& e) {
        throw ConfigError("config: bad shape (" + std::string(e.what()) + ")");
    }
    return c;
}

json RunConfig::snapshot() const {
    json j;
    j["taxonomy"] = taxonomy_path.string();
    j["dataset"] = dataset_path.string();
    j["library"] = library_manifest.string();
    j["split"] = {{"ratios", {ratios[0], ratios[1], ratios[2]}}, {"seed", split_seed}};
    j["embedder"] = {{"kind", embedder.kind == EmbedderConfig::Kind::remote ? "remote" : "builtin"},
                     {"dim", embedder.dim},
                     {"url", embedder.url}};
    json eps = json::object();
    for (const auto& [name, spec] : endpoints) eps[name] = endpoint_to_json(spec);
    j["endpoints"] = std::move(eps);
    j["target_endpoint"] = target_endpoint;
    j["optimizer_endpoint"] = optimizer_endpoint;
    j["decoding"] = {{"top_p", decoding.top_p},
                     {"top_k", decoding.top_k},
                     {"temperature", decoding.temperature},
                     {"max_tokens", decoding.max_tokens},
                     {"repetition_penalty", decoding.repetition_penalty},
                     {"presence_penalty", decoding.presence_penalty},
                     {"seed", decoding.seed}};
    j["optimizer"] = {{"rounds", optimizer.rounds},
                      {"candidates_per_round", optimizer.candidates_per_round},
                      {"k_options", optimizer.k_options},
                      {"eval_seed", optimizer.eval_seed},
                      {"mutation_seed", optimizer.mutation_seed},
                      {"budget", optimizer.budget},
                      {"m_samples", optimizer.m_samples},
                      {"max_error_cases", optimizer.max_error_cases}};
    return j;
}

std::string format_stats_block(const CorpusStats& st) {
    std::ostringstream out;
    out << "Corpus statistics\n";
    out << "  sentences              " << st.count << "\n";
    out << "  mean length            " << fmt_double(st.mean_len, 2) << " words\n";
    out << "  max length             " << st.max_len << " words\n";
    out << "  min length             " << st.min_len << " words\n";
    out << "  longer than 10 words   " << st.over_10 << "\n";
    return out.str();
}

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_override;
    std::string endpoint_override;
    std::string input_path;
    std::string strategy;
    std::string artifact_path;
    int k = -1;
    uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> report_inputs;
};

bool is_file_override(const std::string& s) {
    return s.size() > 6 && s.substr(s.size() - 6) == ".jsonl";
}

void apply_overrides(RunConfig& cfg, const CliOptions& opt) {
    if (const char* env = std::getenv("PROMPTFORGE_OUT"); env != nullptr && env[0] != '\0')
        cfg.out_dir = env;
    if (const char* env = std::getenv("PROMPTFORGE_SEED"); env != nullptr && env[0] != '\0')
        cfg.split_seed = cfg.decoding.seed = cfg.optimizer.eval_seed =
            std::strtoull(env, nullptr, 10);
    // A file-shaped --out (infer predictions path) leaves the artifact
    // directory alone.
    if (!opt.out_override.empty() && !is_file_override(opt.out_override))
        cfg.out_dir = opt.out_override;
    if (opt.seed_set)
        cfg.split_seed = cfg.decoding.seed = cfg.optimizer.eval_seed = opt.seed;
    if (!opt.endpoint_override.empty()) cfg.target_endpoint = opt.endpoint_override;
}

RunConfig load_config(const CliOptions& opt) {
    if (opt.config_path.empty()) throw ConfigError("--config is required");
    RunConfig cfg = RunConfig::load(opt.config_path);
    apply_overrides(cfg, opt);
    return cfg;
}

void require_path(const fs::path& p, const char* what) {
    if (p.empty()) throw ConfigError(std::string("config: missing ") + what);
    if (!fs::exists(p))
        throw ConfigError(std::string("config: ") + what + " not found: " + p.string());
}

const EndpointSpec& pick_endpoint(const RunConfig& cfg, const std::string& name,
                                  const char* role) {
    if (name.empty())
        throw ConfigError(std::string("config: no ") + role + " endpoint configured");
    auto it = cfg.endpoints.find(name);
    if (it == cfg.endpoints.end())
        throw ConfigError(std::string("config: unknown endpoint '") + name + "'");
    return it->second;
}

std::vector<AnnotatedMessage> select_by_ids(const std::map<std::string, AnnotatedMessage>& by_id,
                                            const std::vector<std::string>& ids) {
    std::vector<AnnotatedMessage> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("split references unknown id '" + id + "'");
        out.push_back(it->second);
    }
    return out;
}

std::string iso_now() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// ingest / stats
// ---------------------------------------------------------------------------

int cmd_stats(const CliOptions& opt, std::ostream& out) {
    RunConfig cfg = load_config(opt);
    require_path(cfg.taxonomy_path, "taxonomy");
    require_path(cfg.dataset_path, "dataset");
    LabelTaxonomy taxonomy = LabelTaxonomy::load(cfg.taxonomy_path);
    IngestReport report;
    auto messages = ingest(cfg.dataset_path, taxonomy, report);
    if (messages.empty()) throw DataError("dataset: no accepted records");
    out << format_stats_block(stats(messages));
    if (!report.rejections.empty())
        out << "rejected lines: " << report.rejections.size() << "\n";
    return kExitOk;
}

int cmd_ingest(const CliOptions& opt, std::ostream& out) {
    RunConfig cfg = load_config(opt);
    require_path(cfg.taxonomy_path, "taxonomy");
    require_path(cfg.dataset_path, "dataset");
    LabelTaxonomy taxonomy = LabelTaxonomy::load(cfg.taxonomy_path);
    IngestReport report;
    auto messages = ingest(cfg.dataset_path, taxonomy, report);
    if (messages.empty()) throw DataError("dataset: no accepted records");

    fs::create_directories(cfg.out_dir);
    DatasetSplit s = split(messages, cfg.ratios, cfg.split_seed);
    save_split(s, cfg.split_artifact());
    save_ingest_report(report, cfg.out_dir / "ingest_report.jsonl");

    out << format_stats_block(stats(messages));
    out << "Split sizes (train/val/test): " << s.train_ids.size() << "/" << s.val_ids.size()
        << "/" << s.test_ids.size() << " (seed " << s.seed << ")\n";
    out << "rejected lines: " << report.rejections.size() << "\n";
    out << "wrote " << cfg.split_artifact().string() << "\n";
    return kExitOk;
}

int cmd_index(const CliOptions& opt, std::ostream& out) {
    RunConfig cfg = load_config(opt);
    require_path(cfg.taxonomy_path, "taxonomy");
    require_path(cfg.dataset_path, "dataset");
    require_path(cfg.split_artifact(), "split artifact (run ingest first)");
    LabelTaxonomy taxonomy = LabelTaxonomy::load(cfg.taxonomy_path);
    IngestReport report;
    auto by_id = message_index(ingest(cfg.dataset_path, taxonomy, report));
    DatasetSplit s = load_split(cfg.split_artifact());

    Embedder embedder(cfg.embedder);
    VectorIndex index = VectorIndex::build(select_by_ids(by_id, s.train_ids), embedder);
    index.save(cfg.index_artifact());
    out << "indexed " << index.size() << " train exemplars (dim " << index.dim()
        << ", fingerprint " << index.fingerprint() << ")\n";
    out << "wrote " << cfg.index_artifact().string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

json rationale_store_to_json(const std::map<std::string, std::optional<Rationale>>& store) {
    json j = json::object();
    for (const auto& [id, r] : store) {
        if (!r) continue;
        j[id] = {{"chain", r->chain},
                 {"final_label",
                  {{"actor", r->final_label.actor},
                   {"reason", r->final_label.reason},
                   {"cause", r->final_label.cause}}},
                 {"samples_drawn", r->samples_drawn},
                 {"agreed", r->agreed}};
    }
    return j;
}

std::map<std::string, Rationale> rationale_store_from_json(const json& j) {
    std::map<std::string, Rationale> out;
    if (!j.is_object()) return out;
    for (const auto& [id, jr] : j.items()) {
        Rationale r;
        r.chain = jr.at("chain").get<std::string>();
        r.final_label = FrameLabel{jr.at("final_label").at("actor").get<std::string>(),
                                   jr.at("final_label").at("reason").get<std::string>(),
                                   jr.at("final_label").at("cause").get<std::string>()};
        r.samples_drawn = jr.at("samples_drawn").get<int>();
        r.agreed = jr.at("agreed").get<bool>();
        out[id] = std::move(r);
    }
    return out;
}

std::string render_candidate_text(const PromptCandidate& c, const LabelTaxonomy& taxonomy,
                                  const PromptLibrary& library) {
    auto messages = compose(c, kSelectionProbeText, {}, taxonomy, library);
    std::string out;
    for (const auto& m : messages) {
        out += "== " + role_name(m.role) + " ==\n";
        out += m.content;
        out += "\n\n";
    }
    return out;
}

std::string ranking_csv(const std::vector<SolutionPair>& pairs,
                        const std::vector<std::size_t>& order) {
    std::string csv = "rank,candidate_id,round,strategy,exact_match,validity_rate,parse_rate,calls_used\n";
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const SolutionPair& p = pairs[order[rank]];
        csv += std::to_string(rank + 1) + "," + p.candidate.id + "," + std::to_string(p.round) +
               "," + strategy_label(p.candidate) + "," + fmt_double(p.report.exact_match) + "," +
               fmt_double(p.report.validity_rate) + "," + fmt_double(p.report.parse_rate) + "," +
               std::to_string(p.report.calls_used) + "\n";
    }
    return csv;
}

int cmd_optimize(const CliOptions& opt, std::ostream& out) {
    RunConfig cfg = load_config(opt);
    require_path(cfg.taxonomy_path, "taxonomy");
    require_path(cfg.dataset_path, "dataset");
    require_path(cfg.library_manifest, "library");
    require_path(cfg.split_artifact(), "split artifact (run ingest first)");
    require_path(cfg.index_artifact(), "index artifact (run index first)");

    LabelTaxonomy taxonomy = LabelTaxonomy::load(cfg.taxonomy_path);
    PromptLibrary library = PromptLibrary::load(cfg.library_manifest);
    IngestReport ingest_report;
    auto by_id = message_index(ingest(cfg.dataset_path, taxonomy, ingest_report));
    DatasetSplit s = load_split(cfg.split_artifact());

    Embedder embedder(cfg.embedder);
    VectorIndex index = VectorIndex::load(cfg.index_artifact());
    if (index.fingerprint() != embedder.fingerprint())
        throw DataError("index fingerprint '" + index.fingerprint() +
                        "' does not match embedder '" + embedder.fingerprint() + "'");

    auto train = select_by_ids(by_id, s.train_ids);
    auto val = select_by_ids(by_id, s.val_ids);
    auto train_by_id = message_index(train);

    auto target = make_client(pick_endpoint(cfg, cfg.target_endpoint, "target"), &taxonomy);
    auto optimizer_client =
        make_client(pick_endpoint(cfg, cfg.optimizer_endpoint, "optimizer"), &taxonomy);
    CallBudget budget(cfg.optimizer.budget);
    BudgetedClient budgeted_target(*target, budget);
    BudgetedClient budgeted_optimizer(*optimizer_client, budget);

    std::map<std::string, std::optional<Rationale>> rationale_cache;
    EvalContext ctx;
    ctx.val_set = &val;
    ctx.index = &index;
    ctx.train_by_id = &train_by_id;
    ctx.embedder = &embedder;
    ctx.target = &budgeted_target;
    ctx.optimizer = &budgeted_optimizer;
    ctx.taxonomy = &taxonomy;
    ctx.library = &library;
    ctx.decoding = cfg.decoding;
    ctx.eval_seed = cfg.optimizer.eval_seed;
    ctx.m_samples = cfg.optimizer.m_samples;
    ctx.rationale_cache = &rationale_cache;

    std::string started = iso_now();
    auto t0 = std::chrono::steady_clock::now();
    RunResult result = run_loop(cfg.optimizer, ctx);
    if (result.pairs.empty())
        throw DataError("optimization produced no completed solution pairs (budget too small?)");
    SolutionPair best = select_final(result.pairs, taxonomy, library);

    // Run artifact directory.
    fs::create_directories(cfg.out_dir / "candidates");
    fs::create_directories(cfg.out_dir / "reports");
    util::write_file_atomic(cfg.out_dir / "config_snapshot.json", cfg.snapshot().dump(2) + "\n");

    json lib_manifest;
    lib_manifest["manifest_hash"] = library.manifest_hash();
    lib_manifest["component_hashes"] = library.component_hashes();
    util::write_file_atomic(cfg.out_dir / "library_manifest.json", lib_manifest.dump(2) + "\n");

    for (const auto& p : result.pairs) {
        std::string stem = sanitize_id(p.candidate.id);
        util::write_file_atomic(cfg.out_dir / "candidates" / (stem + ".txt"),
                                render_candidate_text(p.candidate, taxonomy, library));
        json jr;
        jr["candidate_id"] = p.candidate.id;
        jr["round"] = p.round;
        jr["endpoint"] = budgeted_target.endpoint_name();
        jr["strategy"] = strategy_label(p.candidate);
        jr["taxonomy_hash"] = taxonomy.content_hash();
        jr["candidate"] = candidate_to_json(p.candidate);
        jr["report"] = report_to_json(p.report);
        // Error cases for offline review.
        json cases = json::array();
        for (const auto& ec : p.report.error_cases) {
            json jc;
            jc["id"] = ec.message.id;
            jc["text"] = ec.message.text;
            jc["gold"] = {{"actor", ec.message.label.actor},
                          {"reason", ec.message.label.reason},
                          {"cause", ec.message.label.cause}};
            if (ec.predicted) {
                jc["predicted"] = {{"actor", ec.predicted->actor},
                                   {"reason", ec.predicted->reason},
                                   {"cause", ec.predicted->cause}};
            } else {
                jc["predicted"] = nullptr;
                jc["error"] = ec.error_kind;
            }
            jc["wrong_levels"] = ec.wrong_levels;
            cases.push_back(std::move(jc));
        }
        jr["error_cases"] = std::move(cases);
        util::write_file_atomic(cfg.out_dir / "reports" / (stem + ".json"), jr.dump(2) + "\n");
    }

    std::vector<std::size_t> order(result.pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pair_better(result.pairs[a], result.pairs[b], taxonomy, library);
    });
    util::write_file_atomic(cfg.out_dir / "ranking.csv", ranking_csv(result.pairs, order));

    json final_doc;
    final_doc["format"] = "promptforge-final-prompt-v1";
    final_doc["candidate"] = candidate_to_json(best.candidate);
    final_doc["strategy"] = strategy_label(best.candidate);
    final_doc["round"] = best.round;
    final_doc["exact_match"] = best.report.exact_match;
    final_doc["component_hashes"] = library.component_hashes();
    final_doc["manifest_hash"] = library.manifest_hash();
    final_doc["taxonomy_hash"] = taxonomy.content_hash();
    final_doc["embedder_fingerprint"] = embedder.fingerprint();
    final_doc["index_checksum"] = index.checksum();
    final_doc["rationales"] = rationale_store_to_json(rationale_cache);
    util::write_file_atomic(cfg.out_dir / "final_prompt.json", final_doc.dump(2) + "\n");

    json meta;
    meta["started_at"] = started;
    meta["finished_at"] = iso_now();
    meta["elapsed_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    meta["out_dir"] = cfg.out_dir.string();
    util::write_file_atomic(cfg.out_dir / "run_meta.json", meta.dump(2) + "\n");

    out << "solution pairs: " << result.pairs.size() << " (calls used: " << budget.used()
        << "/" << budget.limit() << ")\n";
    out << "rank  candidate     round  strategy               exact   valid   parse\n";
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const SolutionPair& p = result.pairs[order[rank]];
        char line[160];
        std::snprintf(line, sizeof(line), "%-5zu %-13s %-6d %-22s %.4f  %.4f  %.4f\n", rank + 1,
                      p.candidate.id.c_str(), p.round, strategy_label(p.candidate).c_str(),
                      p.report.exact_match, p.report.validity_rate, p.report.parse_rate);
        out << line;
    }
    out << "selected: " << best.candidate.id << " (" << strategy_label(best.candidate)
        << ", exact_match " << fmt_double(best.report.exact_match, 4) << ")\n";
    if (result.truncated) out << "warning: run truncated by call budget\n";
    out << "wrote " << (cfg.out_dir / "final_prompt.json").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferInputs {
    std::vector<AnnotatedMessage> messages;  // labels unused; text + id only
};

InferInputs read_infer_inputs(const std::string& input_path) {
    InferInputs in;
    if (input_path == "-") {
        std::ostringstream ss;
        ss << std::cin.rdbuf();
        std::string text = util::trim(ss.str());
        if (text.empty()) throw ConfigError("infer: empty stdin input");
        in.messages.push_back({"stdin-0001", text, {}});
        return in;
    }
    std::ifstream f(input_path);
    if (!f) throw ConfigError("infer: cannot open input " + input_path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error&) {
            throw DataError("infer input: malformed JSON at line " + std::to_string(lineno));
        }
        if (!rec.contains("id") || !rec.contains("text"))
            throw DataError("infer input: line " + std::to_string(lineno) + " needs id and text");
        in.messages.push_back({rec["id"].get<std::string>(), rec["text"].get<std::string>(), {}});
    }
    if (in.messages.empty()) throw DataError("infer: no inputs");
    return in;
}

int cmd_infer(const CliOptions& opt, std::ostream& out) {
    RunConfig cfg = load_config(opt);
    require_path(cfg.taxonomy_path, "taxonomy");
    require_path(cfg.library_manifest, "library");
    if (opt.input_path.empty()) throw ConfigError("infer: --input is required");

    LabelTaxonomy taxonomy = LabelTaxonomy::load(cfg.taxonomy_path);
    PromptLibrary library = PromptLibrary::load(cfg.library_manifest);
    Embedder embedder(cfg.embedder);

    PromptCandidate candidate;
    std::map<std::string, Rationale> rationales;
    if (!opt.artifact_path.empty()) {
        json doc;
        try {
            doc = json::parse(util::read_file(opt.artifact_path));
        } catch (const json::parse_error& e) {
            throw FormatError("final prompt artifact: not valid JSON (" + std::string(e.what()) +
                              ")");
        }
        candidate = candidate_from_json(doc.at("candidate"));
        // Fingerprint guard: refuse to run against drifted inputs.
        if (doc.at("taxonomy_hash").get<std::string>() != taxonomy.content_hash())
            throw DataError("fingerprint mismatch: taxonomy drifted since optimization");
        if (doc.at("manifest_hash").get<std::string>() != library.manifest_hash())
            throw DataError("fingerprint mismatch: component library drifted since optimization");
        if (doc.at("embedder_fingerprint").get<std::string>() != embedder.fingerprint())
            throw DataError("fingerprint mismatch: embedder config drifted since optimization");
        if (candidate.uses_retrieval() && candidate.k > 0) {
            require_path(cfg.index_artifact(), "index artifact");
            VectorIndex index = VectorIndex::load(cfg.index_artifact());
            if (index.fingerprint() != embedder.fingerprint())
                throw DataError("fingerprint mismatch: index embedder fingerprint");
            if (doc.contains("index_checksum") &&
                doc["index_checksum"].get<std::string>() != index.checksum())
                throw DataError("fingerprint mismatch: index contents changed since optimization");
        }
        rationales = rationale_store_from_json(doc.value("rationales", json::object()));
    } else {
        if (opt.strategy.empty())
            throw ConfigError("infer: pass a final-prompt artifact or --strategy");
        candidate.id = "adhoc";
        candidate.strategy = strategy_from_string(opt.strategy);
        candidate.instruction = library.get("base_instruction").body;
        candidate.provenance = {1, "", "adhoc"};
        if (candidate.strategy == Strategy::rag_k) candidate.k = opt.k >= 0 ? opt.k : 0;
        if (candidate.strategy == Strategy::cot) candidate.cot_mode = CotMode::cot;
        if (candidate.strategy == Strategy::auto_cot) candidate.cot_mode = CotMode::auto_cot;
        if (candidate.strategy == Strategy::few_shot_manual ||
            candidate.strategy == Strategy::auto_cot)
            candidate.static_exemplars = library.static_exemplars(taxonomy);
    }
    validate_candidate(candidate);

    std::optional<VectorIndex> index;
    std::map<std::string, AnnotatedMessage> train_by_id;
    if (candidate.uses_retrieval() && candidate.k > 0) {
        require_path(cfg.index_artifact(), "index artifact");
        require_path(cfg.dataset_path, "dataset");
        require_path(cfg.split_artifact(), "split artifact");
        index = VectorIndex::load(cfg.index_artifact());
        if (index->fingerprint() != embedder.fingerprint())
            throw DataError("fingerprint mismatch: index embedder fingerprint");
        IngestReport r;
        auto by_id = message_index(ingest(cfg.dataset_path, taxonomy, r));
        DatasetSplit s = load_split(cfg.split_artifact());
        train_by_id = message_index(select_by_ids(by_id, s.train_ids));
    }

    auto client = make_client(pick_endpoint(cfg, cfg.target_endpoint, "target"), &taxonomy);
    InferInputs inputs = read_infer_inputs(opt.input_path);

    fs::create_directories(cfg.out_dir);
    fs::path pred_path = cfg.out_dir / "predictions.jsonl";
    if (is_file_override(opt.out_override)) pred_path = opt.out_override;

    std::string lines;
    int ok_count = 0;
    for (const auto& msg : inputs.messages) {
        json rec;
        rec["id"] = msg.id;
        std::vector<std::string> exemplar_ids;
        try {
            std::vector<ExemplarBlock> retrieved;
            if (candidate.uses_retrieval() && candidate.k > 0) {
                auto q = embedder.embed(msg.text);
                for (const auto& nb : index->knn(q, candidate.k, {msg.id})) {
                    auto tr = train_by_id.find(nb.id);
                    if (tr == train_by_id.end())
                        throw DataError("index id '" + nb.id + "' missing from train corpus");
                    exemplar_ids.push_back(nb.id);
                    std::optional<Rationale> rat;
                    if (candidate.cot_mode == CotMode::auto_cot) {
                        auto hit = rationales.find(nb.id);
                        if (hit != rationales.end()) rat = hit->second;
                    }
                    retrieved.push_back(ExemplarBlock{tr->second, std::move(rat)});
                }
            }
            auto messages = compose(candidate, msg.text, retrieved, taxonomy, library);
            DecodingConfig dec = cfg.decoding;
            dec.seed = util::mix_seed(cfg.decoding.seed, util::fnv1a64(msg.id));
            AnnotationOutcome outcome = annotate(*client, std::move(messages), dec, taxonomy);
            rec["raw"] = outcome.raw;
            switch (outcome.status) {
                case AnnotationOutcome::Status::ok:
                    rec["predicted"] = {{"actor", outcome.label->actor},
                                        {"reason", outcome.label->reason},
                                        {"cause", outcome.label->cause}};
                    rec["error"] = nullptr;
                    ++ok_count;
                    break;
                case AnnotationOutcome::Status::invalid_label:
                    rec["predicted"] = nullptr;
                    rec["error"] = "invalid_label";
                    break;
                case AnnotationOutcome::Status::unparseable:
                    rec["predicted"] = nullptr;
                    rec["error"] = "unparseable";
                    break;
            }
        } catch (const TransportError& e) {
            rec["predicted"] = nullptr;
            rec["error"] = "endpoint_error";
            rec["raw"] = e.what();
        } catch (const EndpointError& e) {
            rec["predicted"] = nullptr;
            rec["error"] = "endpoint_error";
            rec["raw"] = e.what();
        }
        rec["exemplar_ids"] = exemplar_ids;
        lines += rec.dump() + "\n";
    }
    util::write_file_atomic(pred_path, lines);

    json meta;
    meta["endpoint"] = client->endpoint_name();
    meta["strategy"] = strategy_label(candidate);
    meta["taxonomy_hash"] = taxonomy.content_hash();
    meta["n"] = inputs.messages.size();
    util::write_file_atomic(fs::path(pred_path.string() + ".meta.json"), meta.dump(2) + "\n");

    out << "predictions: " << inputs.messages.size() << " (" << ok_count << " labeled)\n";
    out << "wrote " << pred_path.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string endpoint;
    std::string strategy;
    double exact_match = 0, actor = 0, reason = 0, cause = 0, validity = 0;
    std::size_t n = 0;
};

ReportRow recompute_row(const std::string& endpoint, const std::string& strategy,
                        const EvalReport& rep) {
    ReportRow row;
    row.endpoint = endpoint;
    row.strategy = strategy;
    row.n = rep.n();
    std::size_t exact = 0, a = 0, r = 0, c = 0, valid = 0;
    for (const auto& it : rep.items) {
        if (it.exact()) ++exact;
        if (it.actor_ok) ++a;
        if (it.reason_ok) ++r;
        if (it.cause_ok) ++c;
        if (it.error_kind.empty()) ++valid;
    }
    double n = row.n == 0 ? 1.0 : static_cast<double>(row.n);
    row.exact_match = exact / n;
    row.actor = a / n;
    row.reason = r / n;
    row.cause = c / n;
    row.validity = valid / n;

    // The stored aggregates must match the per-item records they shipped with.
    if (std::abs(row.exact_match - rep.exact_match) > 1e-12 ||
        std::abs(row.actor - rep.level_acc[0]) > 1e-12 ||
        std::abs(row.reason - rep.level_acc[1]) > 1e-12 ||
        std::abs(row.cause - rep.level_acc[2]) > 1e-12 ||
        std::abs(row.validity - rep.validity_rate) > 1e-12)
        throw DataError("report: stored aggregates do not match per-item records");
    return row;
}

int cmd_report(const CliOptions& opt, std::ostream& out) {
    if (opt.report_inputs.empty()) throw ConfigError("report: no input files given");

    std::optional<std::map<std::string, AnnotatedMessage>> gold;
    std::optional<LabelTaxonomy> taxonomy;
    if (!opt.config_path.empty()) {
        RunConfig cfg = RunConfig::load(opt.config_path);
        if (!cfg.taxonomy_path.empty() && !cfg.dataset_path.empty()) {
            taxonomy = LabelTaxonomy::load(cfg.taxonomy_path);
            IngestReport r;
            gold = message_index(ingest(cfg.dataset_path, taxonomy.value(), r));
        }
    }

    std::map<std::pair<std::string, std::string>, ReportRow> rows;
    std::string taxonomy_hash;
    auto check_hash = [&](const std::string& h) {
        if (taxonomy_hash.empty()) taxonomy_hash = h;
        else if (taxonomy_hash != h)
            throw DataError("report: inputs carry different taxonomy hashes; refusing to aggregate");
    };
    auto add_row = [&](ReportRow row) {
        auto key = std::make_pair(row.endpoint, row.strategy);
        auto it = rows.find(key);
        // Multiple runs of one (endpoint, strategy) pair keep the best.
        if (it == rows.end() || row.exact_match > it->second.exact_match)
            rows[key] = std::move(row);
    };

    for (const auto& path : opt.report_inputs) {
        if (path.size() > 6 && path.substr(path.size() - 6) == ".jsonl") {
            // Predictions file + sibling meta; gold labels come from --config.
            if (!gold || !taxonomy)
                throw ConfigError("report: predictions input needs --config with dataset");
            json meta = json::parse(util::read_file(path + ".meta.json"));
            check_hash(meta.at("taxonomy_hash").get<std::string>());
            EvalReport rep;
            std::ifstream f(path);
            if (!f) throw ConfigError("report: cannot open " + path);
            std::string line;
            while (std::getline(f, line)) {
                if (util::trim(line).empty()) continue;
                json rec = json::parse(line);
                EvalItem item;
                item.id = rec.at("id").get<std::string>();
                auto g = gold->find(item.id);
                if (g == gold->end())
                    throw DataError("report: prediction id '" + item.id + "' not in dataset");
                if (!rec.at("predicted").is_null()) {
                    FrameLabel p = make_label(rec["predicted"].at("actor").get<std::string>(),
                                              rec["predicted"].at("reason").get<std::string>(),
                                              rec["predicted"].at("cause").get<std::string>());
                    item.predicted = p;
                    item.actor_ok = p.actor == g->second.label.actor;
                    item.reason_ok = p.reason == g->second.label.reason;
                    item.cause_ok = p.cause == g->second.label.cause;
                } else {
                    item.error_kind = rec.at("error").is_null()
                                          ? "unparseable"
                                          : rec["error"].get<std::string>();
                }
                rep.items.push_back(std::move(item));
            }
            ReportRow row;
            row.endpoint = meta.at("endpoint").get<std::string>();
            row.strategy = meta.at("strategy").get<std::string>();
            row.n = rep.n();
            std::size_t exact = 0, a = 0, r = 0, c = 0, valid = 0;
            for (const auto& it : rep.items) {
                if (it.exact()) ++exact;
                if (it.actor_ok) ++a;
                if (it.reason_ok) ++r;
                if (it.cause_ok) ++c;
                if (it.error_kind.empty()) ++valid;
            }
            double n = row.n == 0 ? 1.0 : static_cast<double>(row.n);
            row.exact_match = exact / n;
            row.actor = a / n;
            row.reason = r / n;
            row.cause = c / n;
            row.validity = valid / n;
            add_row(std::move(row));
        } else {
            json doc = json::parse(util::read_file(path));
            check_hash(doc.at("taxonomy_hash").get<std::string>());
            EvalReport rep = report_from_json(doc.at("report"));
            add_row(recompute_row(doc.at("endpoint").get<std::string>(),
                                  doc.at("strategy").get<std::string>(), rep));
        }
    }

    std::string csv = "endpoint,strategy,exact_match,actor_acc,reason_acc,cause_acc,validity_rate,n\n";
    out << "endpoint      strategy                exact   actor   reason  cause   valid   n\n";
    for (const auto& [key, row] : rows) {
        csv += row.endpoint + "," + row.strategy + "," + fmt_double(row.exact_match) + "," +
               fmt_double(row.actor) + "," + fmt_double(row.reason) + "," +
               fmt_double(row.cause) + "," + fmt_double(row.validity) + "," +
               std::to_string(row.n) + "\n";
        char line[200];
        std::snprintf(line, sizeof(line), "%-13s %-23s %.4f  %.4f  %.4f  %.4f  %.4f  %zu\n",
                      row.endpoint.c_str(), row.strategy.c_str(), row.exact_match, row.actor,
                      row.reason, row.cause, row.validity, row.n);
        out << line;
    }
    fs::path csv_path = opt.out_override.empty() ? fs::path("report.csv")
                                                 : fs::path(opt.out_override);
    util::write_file_atomic(csv_path, csv);
    out << "wrote " << csv_path.string() << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"promptforge: retrieval-guided prompt optimization for frame detection"};
    app.require_subcommand(1);
    CliOptions opt;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "run configuration file");
        cmd->add_option("--out", opt.out_override, "output directory/file override");
        cmd->add_option("--seed", opt.seed, "master seed override")
            ->each([&](const std::string&) { opt.seed_set = true; });
        cmd->add_option("--endpoint", opt.endpoint_override, "target endpoint name override");
    };

    CLI::App* c_ingest = app.add_subcommand("ingest", "ingest dataset, write split + report");
    add_common(c_ingest);
    CLI::App* c_stats = app.add_subcommand("stats", "print corpus statistics");
    add_common(c_stats);
    CLI::App* c_index = app.add_subcommand("index", "build the train exemplar index");
    add_common(c_index);
    CLI::App* c_opt = app.add_subcommand("optimize", "run the prompt optimization loop");
    add_common(c_opt);
    CLI::App* c_infer = app.add_subcommand("infer", "annotate inputs with a selected prompt");
    add_common(c_infer);
    c_infer->add_option("artifact", opt.artifact_path, "final prompt artifact (from optimize)");
    c_infer->add_option("--input", opt.input_path, "JSONL inputs with id/text, or '-' for stdin");
    c_infer->add_option("--strategy", opt.strategy,
                        "ad-hoc strategy (zero_shot|few_shot_manual|cot|auto_cot|rag_k)");
    c_infer->add_option("--k", opt.k, "retrieval shot count for ad-hoc rag_k");
    CLI::App* c_report = app.add_subcommand("report", "aggregate reports into a strategy table");
    add_common(c_report);
    c_report->add_option("inputs", opt.report_inputs, "report JSONs or prediction JSONLs");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (c_ingest->parsed()) return cmd_ingest(opt, out);
        if (c_stats->parsed()) return cmd_stats(opt, out);
        if (c_index->parsed()) return cmd_index(opt, out);
        if (c_opt->parsed()) return cmd_optimize(opt, out);
        if (c_infer->parsed()) return cmd_infer(opt, out);
        if (c_report->parsed()) return cmd_report(opt, out);
        err << "no subcommand\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const TransportError& e) {
        err << "endpoint error: " << e.what() << "\n";
        return kExitEndpoint;
    } catch (const EndpointError& e) {
        err << "endpoint error: " << e.what() << "\n";
        return kExitEndpoint;
    } catch (const Error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace promptforge
