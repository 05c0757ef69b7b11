#include "promptforge/optimizer.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "promptforge/errors.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

using nlohmann::json;
namespace util = promptforge::util;

namespace {

const uint64_t kAutoCotTag = util::fnv1a64("autocot");

void require(bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("evaluate_candidate: missing ") + what);
}

std::string wrong_pattern_key(const std::vector<std::string>& wrong_levels) {
    std::string key;
    for (const auto& l : wrong_levels) {
        if (!key.empty()) key += ',';
        key += l;
    }
    return key;
}

EvalReport aggregate(std::vector<EvalItem> items,
                     const std::map<std::string, AnnotatedMessage>& gold_by_id,
                     long calls_used) {
    EvalReport rep;
    rep.calls_used = calls_used;
    std::size_t exact = 0, actor = 0, reason = 0, cause = 0, valid = 0, parsed = 0;
    for (const auto& it : items) {
        if (it.exact()) ++exact;
        if (it.actor_ok) ++actor;
        if (it.reason_ok) ++reason;
        if (it.cause_ok) ++cause;
        if (it.error_kind.empty()) {
            ++valid;
            ++parsed;
        } else if (it.error_kind == "invalid_label") {
            ++parsed;
        }
    }
    const double n = items.empty() ? 1.0 : static_cast<double>(items.size());
    rep.exact_match = static_cast<double>(exact) / n;
    rep.level_acc = {static_cast<double>(actor) / n, static_cast<double>(reason) / n,
                     static_cast<double>(cause) / n};
    rep.validity_rate = static_cast<double>(valid) / n;
    rep.parse_rate = static_cast<double>(parsed) / n;

    for (const auto& it : items) {
        if (it.exact()) continue;
        ErrorCase ec;
        auto gold = gold_by_id.find(it.id);
        if (gold == gold_by_id.end()) continue;
        ec.message = gold->second;
        ec.error_kind = it.error_kind;
        if (it.error_kind.empty()) {
            ec.predicted = it.predicted;
            if (!it.actor_ok) ec.wrong_levels.push_back("actor");
            if (!it.reason_ok) ec.wrong_levels.push_back("reason");
            if (!it.cause_ok) ec.wrong_levels.push_back("cause");
        } else {
            ec.wrong_levels = {"actor", "reason", "cause"};
        }
        rep.error_cases.push_back(std::move(ec));
    }
    rep.items = std::move(items);
    return rep;
}

/// Counts completions so calls_used is exact regardless of outer budget
/// wrapping.
class CountingClient : public ChatClient {
public:
    explicit CountingClient(ChatClient& inner) : inner_(inner) {}
    Completion complete(const std::vector<ChatMessage>& messages,
                        const DecodingConfig& decoding) override {
        Completion c = inner_.complete(messages, decoding);
        ++calls_;  // completed calls only
        return c;
    }
    const std::string& endpoint_name() const override { return inner_.endpoint_name(); }
    long calls() const { return calls_; }

private:
    ChatClient& inner_;
    long calls_ = 0;
};

std::optional<Rationale> synthesize_rationale(const EvalContext& ctx,
                                              const AnnotatedMessage& exemplar,
                                              CountingClient& optimizer) {
    DecodingConfig dec = ctx.decoding;
    dec.seed = util::mix_seed(util::mix_seed(ctx.eval_seed, kAutoCotTag),
                              util::fnv1a64(exemplar.id));
    try {
        return filter_rationales(
            sample_rationales(optimizer, *ctx.library, exemplar, ctx.m_samples, dec,
                              *ctx.taxonomy));
    } catch (const BudgetError&) {
        throw;
    } catch (const Error&) {
        return std::nullopt;
    }
}

std::string extract_marked_block(const std::string& text, std::string_view marker) {
    std::size_t pos = text.find(marker);
    if (pos == std::string::npos) return {};
    std::string block = util::trim(text.substr(pos + marker.size()));
    if (block.size() >= 2 && block.front() == '"' && block.back() == '"')
        block = util::trim(block.substr(1, block.size() - 2));
    return block;
}

uint64_t slot_seed(const OptimizerConfig& config, int round, int slot) {
    return util::mix_seed(config.mutation_seed,
                          static_cast<uint64_t>(round) * 256 + static_cast<uint64_t>(slot));
}

}  // namespace

void OptimizerConfig::validate() const {
    if (rounds < 1) throw ConfigError("optimizer: rounds must be >= 1");
    if (candidates_per_round < 1) throw ConfigError("optimizer: candidates_per_round must be >= 1");
    if (budget <= 0) throw ConfigError("optimizer: budget must be positive");
    if (k_options.empty()) throw ConfigError("optimizer: k_options must not be empty");
    for (int k : k_options)
        if (k < 0) throw ConfigError("optimizer: negative k option");
    if (m_samples < 1) throw ConfigError("optimizer: m_samples must be >= 1");
    if (max_error_cases < 1) throw ConfigError("optimizer: max_error_cases must be >= 1");
}

EvalReport evaluate_candidate(const PromptCandidate& candidate, const EvalContext& ctx) {
    require(ctx.val_set != nullptr, "val_set");
    require(ctx.index != nullptr, "index");
    require(ctx.train_by_id != nullptr, "train_by_id");
    require(ctx.embedder != nullptr, "embedder");
    require(ctx.target != nullptr, "target client");
    require(ctx.taxonomy != nullptr, "taxonomy");
    require(ctx.library != nullptr, "library");
    validate_candidate(candidate);

    // Leakage guard: retrieval exemplars come from the train split only.
    for (const auto& m : *ctx.val_set)
        if (ctx.index->contains(m.id))
            throw DataError("leakage guard: validation id '" + m.id + "' present in index");

    std::map<std::string, AnnotatedMessage> gold_by_id;
    for (const auto& m : *ctx.val_set) gold_by_id[m.id] = m;

    CountingClient target(*ctx.target);
    std::optional<CountingClient> optimizer;
    if (ctx.optimizer != nullptr) optimizer.emplace(*ctx.optimizer);

    std::vector<EvalItem> items;
    items.reserve(ctx.val_set->size());
    auto synth_calls = [&]() { return optimizer ? optimizer->calls() : 0; };

    for (const auto& msg : *ctx.val_set) {
        std::vector<ExemplarBlock> retrieved;
        EvalItem item;
        item.id = msg.id;
        try {
            if (candidate.uses_retrieval() && candidate.k > 0) {
                std::vector<double> q = ctx.embedder->embed(msg.text);
                for (const auto& nb : ctx.index->knn(q, candidate.k, {msg.id})) {
                    auto tr = ctx.train_by_id->find(nb.id);
                    if (tr == ctx.train_by_id->end())
                        throw DataError("index id '" + nb.id + "' missing from train corpus");
                    item.exemplar_ids.push_back(nb.id);
                    std::optional<Rationale> rationale;
                    if (candidate.cot_mode == CotMode::auto_cot && optimizer) {
                        if (ctx.rationale_cache != nullptr) {
                            auto hit = ctx.rationale_cache->find(nb.id);
                            if (hit == ctx.rationale_cache->end()) {
                                auto made = synthesize_rationale(ctx, tr->second, *optimizer);
                                hit = ctx.rationale_cache->emplace(nb.id, std::move(made)).first;
                            }
                            rationale = hit->second;
                        } else {
                            rationale = synthesize_rationale(ctx, tr->second, *optimizer);
                        }
                    }
                    retrieved.push_back(ExemplarBlock{tr->second, std::move(rationale)});
                }
            }

            auto messages = compose(candidate, msg.text, retrieved, *ctx.taxonomy, *ctx.library);
            DecodingConfig dec = ctx.decoding;
            dec.seed = util::mix_seed(ctx.eval_seed, util::fnv1a64(msg.id));
            AnnotationOutcome outcome = annotate(target, std::move(messages), dec, *ctx.taxonomy);
            item.raw = outcome.raw;
            switch (outcome.status) {
                case AnnotationOutcome::Status::ok:
                    item.predicted = outcome.label;
                    item.actor_ok = outcome.label->actor == msg.label.actor;
                    item.reason_ok = outcome.label->reason == msg.label.reason;
                    item.cause_ok = outcome.label->cause == msg.label.cause;
                    break;
                case AnnotationOutcome::Status::invalid_label:
                    item.error_kind = "invalid_label";
                    break;
                case AnnotationOutcome::Status::unparseable:
                    item.error_kind = "unparseable";
                    break;
            }
        } catch (const BudgetError& e) {
            EvalReport partial =
                aggregate(std::move(items), gold_by_id, target.calls() + synth_calls());
            throw EvalTruncatedError(std::string("budget exhausted mid-evaluation: ") + e.what(),
                                     std::move(partial));
        } catch (const TransportError&) {
            item.error_kind = "unparseable";  // endpoint failures count as unparseable
        } catch (const EndpointError&) {
            item.error_kind = "unparseable";
        }
        items.push_back(std::move(item));
    }
    return aggregate(std::move(items), gold_by_id, target.calls() + synth_calls());
}

PromptCandidate mutate(const PromptCandidate& candidate, uint64_t seed,
                       const PromptLibrary& library) {
    std::mt19937_64 rng(seed);
    int op = static_cast<int>(rng() % 3);
    PromptCandidate out = candidate;
    out.id = candidate.id + "+m";
    out.provenance.parent_id = candidate.id;

    switch (op) {
        case 0: {
            std::size_t n = candidate.uses_retrieval()
                                ? static_cast<std::size_t>(candidate.k)
                                : candidate.static_exemplars.size();
            std::vector<std::size_t> current = apply_order(n, candidate.exemplar_order);
            std::vector<std::size_t> perm(n);
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
            if (n >= 2) {
                do {
                    for (std::size_t i = n; i > 1; --i)
                        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng() % i)]);
                } while (perm == current);
            }
            out.exemplar_order.assign(perm.begin(), perm.end());
            out.provenance.transformation = "mutate:reorder_exemplars";
            break;
        }
        case 1: {
            const std::string& clause = library.get("specificity_clause").body;
            const std::string suffix = "\n\n" + clause;
            if (out.instruction.size() >= suffix.size() &&
                out.instruction.compare(out.instruction.size() - suffix.size(), suffix.size(),
                                        suffix) == 0) {
                out.instruction.erase(out.instruction.size() - suffix.size());
            } else {
                out.instruction += suffix;
            }
            out.provenance.transformation = "mutate:toggle_specificity";
            break;
        }
        case 2: {
            switch (candidate.cot_mode) {
                case CotMode::plain: out.cot_mode = CotMode::cot; break;
                case CotMode::cot: out.cot_mode = CotMode::auto_cot; break;
                case CotMode::auto_cot: out.cot_mode = CotMode::plain; break;
            }
            out.provenance.transformation = "mutate:cot_switch";
            break;
        }
        default: break;
    }
    return out;
}

std::vector<ErrorCase> select_error_cases(const std::vector<ErrorCase>& cases, int max_cases) {
    std::map<std::string, int> freq;
    for (const auto& c : cases) ++freq[wrong_pattern_key(c.wrong_levels)];
    std::vector<const ErrorCase*> sorted;
    sorted.reserve(cases.size());
    for (const auto& c : cases) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(), [&](const ErrorCase* a, const ErrorCase* b) {
        int fa = freq[wrong_pattern_key(a->wrong_levels)];
        int fb = freq[wrong_pattern_key(b->wrong_levels)];
        if (fa != fb) return fa > fb;
        return a->message.id < b->message.id;
    });
    std::vector<ErrorCase> out;
    for (const ErrorCase* c : sorted) {
        if (static_cast<int>(out.size()) >= max_cases) break;
        out.push_back(*c);
    }
    return out;
}

std::string render_refine_prompt(const PromptLibrary& library, const PromptCandidate& candidate,
                                 const std::vector<ErrorCase>& selected,
                                 const LabelTaxonomy& taxonomy) {
    std::string cases_text;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        const ErrorCase& c = selected[i];
        if (i) cases_text += "\n\n";
        cases_text += "Case " + std::to_string(i + 1) + ":\n";
        cases_text += "Text: \"" + c.message.text + "\"\n";
        cases_text += "Gold: " + render_label(c.message.label, RenderForm::tuple, taxonomy) + "\n";
        if (c.predicted) {
            cases_text +=
                "Predicted: " + render_label(*c.predicted, RenderForm::tuple, taxonomy) + "\n";
        } else {
            cases_text += "Predicted: " + (c.error_kind.empty() ? std::string("unknown")
                                                                : c.error_kind) + "\n";
        }
        cases_text += "Wrong levels: " + wrong_pattern_key(c.wrong_levels);
    }
    std::string prompt = library.get("refine_template").body;
    prompt = util::replace_all(std::move(prompt), "{{previous_prompt}}", candidate.instruction);
    prompt = util::replace_all(std::move(prompt), "{{error_cases}}", cases_text);
    return prompt;
}

PromptCandidate refine_with_errors(ChatClient& optimizer, const PromptLibrary& library,
                                   const PromptCandidate& candidate,
                                   const std::vector<ErrorCase>& error_cases, int max_cases,
                                   const DecodingConfig& decoding,
                                   const LabelTaxonomy& taxonomy) {
    PromptCandidate out = candidate;
    out.provenance.parent_id = candidate.id;
    if (error_cases.empty()) {
        out.provenance.transformation = "refine:noop";
        return out;
    }
    std::vector<ErrorCase> selected = select_error_cases(error_cases, max_cases);
    std::string prompt = render_refine_prompt(library, candidate, selected, taxonomy);
    Completion reply =
        optimizer.complete({{ChatMessage::Role::user, std::move(prompt)}}, decoding);
    std::string refined = extract_marked_block(reply.text, "Refined Prompt:");
    if (refined.empty())
        throw ExtractionError("refinement reply lacks a 'Refined Prompt:' block");
    out.instruction = std::move(refined);
    out.id = candidate.id + "+r";
    out.provenance.transformation = "refine";
    return out;
}

std::string render_debate_prompt(const PromptLibrary& library,
                                 const std::vector<PromptCandidate>& variants) {
    std::string variants_text;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        if (i) variants_text += "\n";
        char tag = static_cast<char>('A' + (i % 26));
        variants_text += "Prompt ";
        variants_text += tag;
        variants_text += ": \"" + variants[i].instruction + "\"";
    }
    std::string prompt = library.get("debate_template").body;
    prompt = util::replace_all(std::move(prompt), "{{prompt_variants}}", variants_text);
    return prompt;
}

PromptCandidate debate(ChatClient& optimizer, const PromptLibrary& library,
                       const std::vector<PromptCandidate>& variants,
                       const DecodingConfig& decoding) {
    if (variants.size() < 2) throw ConfigError("debate: need at least 2 variants");
    std::string prompt = render_debate_prompt(library, variants);
    PromptCandidate out = variants.front();
    out.id = variants.front().id + "+d";
    out.provenance.parent_id = variants.front().id;
    Completion reply =
        optimizer.complete({{ChatMessage::Role::user, std::move(prompt)}}, decoding);
    std::string improved = extract_marked_block(reply.text, "Final Improved Prompt:");
    if (improved.empty()) {
        out.provenance.transformation = "debate:fallback";
        return out;
    }
    out.instruction = std::move(improved);
    out.provenance.transformation = "debate";
    return out;
}

std::vector<PromptCandidate> generate_candidates(int round,
                                                 const std::optional<SolutionPair>& incumbent,
                                                 const PromptLibrary& library,
                                                 const OptimizerConfig& config,
                                                 ChatClient& optimizer_endpoint,
                                                 const DecodingConfig& decoding,
                                                 const LabelTaxonomy& taxonomy) {
    if (round < 1) throw ConfigError("generate_candidates: round must be >= 1");
    config.validate();
    std::vector<PromptCandidate> out;

    auto degraded_mutation = [&](const PromptCandidate& base, int slot) {
        PromptCandidate m = mutate(base, slot_seed(config, round, slot), library);
        m.provenance.transformation += ":degraded";
        m.provenance.round = round;
        return m;
    };

    if (round == 1) {
        std::vector<int> ks = config.k_options;
        std::sort(ks.begin(), ks.end());
        const std::string& base_instruction = library.get("base_instruction").body;
        for (int slot = 0; slot < config.candidates_per_round; ++slot) {
            if (slot < static_cast<int>(ks.size())) {
                PromptCandidate c;
                c.id = "r1-k" + std::to_string(ks[static_cast<std::size_t>(slot)]);
                c.strategy = Strategy::rag_k;
                c.k = ks[static_cast<std::size_t>(slot)];
                c.instruction = base_instruction;
                c.provenance = {1, "", "seed"};
                out.push_back(std::move(c));
            } else {
                PromptCandidate m = mutate(out.front(), slot_seed(config, round, slot), library);
                m.id = "r1-m" + std::to_string(slot);
                m.provenance.round = 1;
                out.push_back(std::move(m));
            }
        }
        return out;
    }

    if (!incumbent)
        throw ConfigError("generate_candidates: rounds > 1 need an incumbent solution pair");
    const PromptCandidate& parent = incumbent->candidate;

    for (int slot = 0; slot < config.candidates_per_round; ++slot) {
        if (slot == 0) {
            DecodingConfig dec = decoding;
            dec.seed = util::mix_seed(config.mutation_seed,
                                      util::fnv1a64("refine:" + std::to_string(round)));
            try {
                PromptCandidate c =
                    refine_with_errors(optimizer_endpoint, library, parent,
                                       incumbent->report.error_cases, config.max_error_cases,
                                       dec, taxonomy);
                c.id = "r" + std::to_string(round) + "-refine";
                c.provenance.round = round;
                out.push_back(std::move(c));
            } catch (const BudgetError&) {
                throw;
            } catch (const Error&) {
                PromptCandidate c = degraded_mutation(parent, slot);
                c.id = "r" + std::to_string(round) + "-refine";
                out.push_back(std::move(c));
            }
        } else if (slot == 1) {
            PromptCandidate c = mutate(parent, slot_seed(config, round, slot), library);
            c.id = "r" + std::to_string(round) + "-mutate";
            c.provenance.round = round;
            out.push_back(std::move(c));
        } else if (slot == 2) {
            DecodingConfig dec = decoding;
            dec.seed = util::mix_seed(config.mutation_seed,
                                      util::fnv1a64("debate:" + std::to_string(round)));
            std::vector<PromptCandidate> variants(out.begin(), out.end());
            try {
                PromptCandidate c = debate(optimizer_endpoint, library, variants, dec);
                c.id = "r" + std::to_string(round) + "-debate";
                c.provenance.round = round;
                out.push_back(std::move(c));
            } catch (const BudgetError&) {
                throw;
            } catch (const Error&) {
                PromptCandidate c = degraded_mutation(parent, slot);
                c.id = "r" + std::to_string(round) + "-debate";
                out.push_back(std::move(c));
            }
        } else {
            PromptCandidate c = mutate(parent, slot_seed(config, round, slot), library);
            c.id = "r" + std::to_string(round) + "-m" + std::to_string(slot);
            c.provenance.round = round;
            out.push_back(std::move(c));
        }
    }
    return out;
}

RunResult run_loop(const OptimizerConfig& config, EvalContext& ctx) {
    config.validate();
    require(ctx.optimizer != nullptr, "optimizer client");
    RunResult res;
    std::optional<SolutionPair> incumbent;
    try {
        for (int round = 1; round <= config.rounds; ++round) {
            std::vector<PromptCandidate> candidates = generate_candidates(
                round, incumbent, *ctx.library, config, *ctx.optimizer, ctx.decoding,
                *ctx.taxonomy);
            for (const auto& c : candidates) {
                EvalReport rep = evaluate_candidate(c, ctx);
                res.pairs.push_back(SolutionPair{c, std::move(rep), round});
            }
            for (const auto& p : res.pairs)
                if (!incumbent || pair_better(p, *incumbent, *ctx.taxonomy, *ctx.library))
                    incumbent = p;
        }
    } catch (const EvalTruncatedError&) {
        res.truncated = true;
    } catch (const BudgetError&) {
        res.truncated = true;
    }
    return res;
}

int probe_token_count(const PromptCandidate& candidate, const LabelTaxonomy& taxonomy,
                      const PromptLibrary& library) {
    auto messages = compose(candidate, kSelectionProbeText, {}, taxonomy, library);
    std::size_t n = 0;
    for (const auto& m : messages) n += util::count_words(m.content);
    return static_cast<int>(n);
}

bool pair_better(const SolutionPair& a, const SolutionPair& b, const LabelTaxonomy& taxonomy,
                 const PromptLibrary& library) {
    if (a.report.exact_match != b.report.exact_match)
        return a.report.exact_match > b.report.exact_match;
    if (a.report.validity_rate != b.report.validity_rate)
        return a.report.validity_rate > b.report.validity_rate;
    int ta = probe_token_count(a.candidate, taxonomy, library);
    int tb = probe_token_count(b.candidate, taxonomy, library);
    if (ta != tb) return ta < tb;
    if (a.round != b.round) return a.round < b.round;
    return a.candidate.id < b.candidate.id;
}

SolutionPair select_final(const std::vector<SolutionPair>& pairs, const LabelTaxonomy& taxonomy,
                          const PromptLibrary& library) {
    if (pairs.empty()) throw ConfigError("select_final: no solution pairs");
    const SolutionPair* best = &pairs.front();
    for (const auto& p : pairs)
        if (pair_better(p, *best, taxonomy, library)) best = &p;
    return *best;
}

json report_to_json(const EvalReport& report) {
    json j;
    j["exact_match"] = report.exact_match;
    j["actor_acc"] = report.level_acc[0];
    j["reason_acc"] = report.level_acc[1];
    j["cause_acc"] = report.level_acc[2];
    j["validity_rate"] = report.validity_rate;
    j["parse_rate"] = report.parse_rate;
    j["calls_used"] = report.calls_used;
    j["n"] = report.n();
    json items = json::array();
    for (const auto& it : report.items) {
        json ji;
        ji["id"] = it.id;
        if (it.predicted) {
            ji["predicted"] = {{"actor", it.predicted->actor},
                               {"reason", it.predicted->reason},
                               {"cause", it.predicted->cause}};
        } else {
            ji["predicted"] = nullptr;
        }
        ji["error"] = it.error_kind.empty() ? json(nullptr) : json(it.error_kind);
        ji["actor_ok"] = it.actor_ok;
        ji["reason_ok"] = it.reason_ok;
        ji["cause_ok"] = it.cause_ok;
        ji["exemplar_ids"] = it.exemplar_ids;
        ji["raw"] = it.raw;
        items.push_back(std::move(ji));
    }
    j["items"] = std::move(items);
    return j;
}

EvalReport report_from_json(const json& j) {
    EvalReport rep;
    try {
        rep.exact_match = j.at("exact_match").get<double>();
        rep.level_acc = {j.at("actor_acc").get<double>(), j.at("reason_acc").get<double>(),
                         j.at("cause_acc").get<double>()};
        rep.validity_rate = j.at("validity_rate").get<double>();
        rep.parse_rate = j.at("parse_rate").get<double>();
        rep.calls_used = j.at("calls_used").get<long>();
        for (const auto& ji : j.at("items")) {
            EvalItem it;
            it.id = ji.at("id").get<std::string>();
            if (!ji.at("predicted").is_null()) {
                const auto& p = ji["predicted"];
                it.predicted = FrameLabel{p.at("actor").get<std::string>(),
                                          p.at("reason").get<std::string>(),
                                          p.at("cause").get<std::string>()};
            }
            if (!ji.at("error").is_null()) it.error_kind = ji["error"].get<std::string>();
            it.actor_ok = ji.at("actor_ok").get<bool>();
            it.reason_ok = ji.at("reason_ok").get<bool>();
            it.cause_ok = ji.at("cause_ok").get<bool>();
            it.exemplar_ids = ji.at("exemplar_ids").get<std::vector<std::string>>();
            it.raw = ji.at("raw").get<std::string>();
            rep.items.push_back(std::move(it));
        }
    } catch (const json::exception& e) {
        throw FormatError("eval report: bad shape (" + std::string(e.what()) + ")");
    }
    return rep;
}

std::map<std::string, AnnotatedMessage> message_index(
    const std::vector<AnnotatedMessage>& messages) {
    std::map<std::string, AnnotatedMessage> out;
    for (const auto& m : messages)
        if (!out.emplace(m.id, m).second)
            throw DataError("duplicate message id '" + m.id + "'");
    return out;
}

}  // namespace promptforge
