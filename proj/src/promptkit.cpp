#include "promptforge/promptkit.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <sstream>

#include "json.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

using nlohmann::json;
namespace util = promptforge::util;

namespace {

const std::regex kPlaceholderRe(R"(\{\{([a-z_]+)\}\})");

const std::set<std::string>& allowed_placeholders(ComponentKind kind) {
    static const std::set<std::string> none;
    static const std::set<std::string> input_only{"input_text"};
    static const std::set<std::string> rag{"exemplars", "input_text"};
    static const std::set<std::string> refine{"previous_prompt", "error_cases"};
    static const std::set<std::string> debate{"prompt_variants", "agent_outputs"};
    switch (kind) {
        case ComponentKind::instruction:
        case ComponentKind::exemplar: return none;
        case ComponentKind::cot_template:
        case ComponentKind::autocot_template: return input_only;
        case ComponentKind::rag_template: return rag;
        case ComponentKind::refine_template: return refine;
        case ComponentKind::debate_template: return debate;
    }
    return none;
}

std::string render_exemplar_block(const ExemplarBlock& block, std::size_t position,
                                  bool retrieved_header, const LabelTaxonomy& taxonomy) {
    std::string header = retrieved_header ? "Retrieved Example " : "Example ";
    header += std::to_string(position + 1);
    header += ":\n";
    std::string out = header + "Text: \"" + block.message.text + "\"\n";
    if (block.is_cot()) {
        out += util::trim(block.rationale->chain);
    } else {
        out += "Output: " + render_label(block.message.label, RenderForm::tuple, taxonomy);
    }
    return out;
}

}  // namespace

ComponentKind component_kind_from_string(const std::string& s) {
    if (s == "instruction") return ComponentKind::instruction;
    if (s == "exemplar") return ComponentKind::exemplar;
    if (s == "cot_template") return ComponentKind::cot_template;
    if (s == "autocot_template") return ComponentKind::autocot_template;
    if (s == "rag_template") return ComponentKind::rag_template;
    if (s == "refine_template") return ComponentKind::refine_template;
    if (s == "debate_template") return ComponentKind::debate_template;
    throw FormatError("unknown component kind: " + s);
}

std::string component_kind_name(ComponentKind kind) {
    switch (kind) {
        case ComponentKind::instruction: return "instruction";
        case ComponentKind::exemplar: return "exemplar";
        case ComponentKind::cot_template: return "cot_template";
        case ComponentKind::autocot_template: return "autocot_template";
        case ComponentKind::rag_template: return "rag_template";
        case ComponentKind::refine_template: return "refine_template";
        case ComponentKind::debate_template: return "debate_template";
    }
    return "instruction";
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(util::read_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw FormatError("library manifest: not valid JSON (" + std::string(e.what()) + ")");
    }
    if (!manifest.is_object() || !manifest.contains("components") ||
        !manifest["components"].is_array())
        throw FormatError("library manifest: expected {\"components\": [...]}");

    PromptLibrary lib;
    std::filesystem::path base = manifest_path.parent_path();
    std::string hash_acc;
    for (const auto& entry : manifest["components"]) {
        if (!entry.is_object() || !entry.contains("path") || !entry.contains("fnv64"))
            throw FormatError("library manifest: component entries need 'path' and 'fnv64'");
        std::filesystem::path file = base / entry["path"].get<std::string>();
        std::string raw = util::read_file(file);
        std::string hash = util::fnv1a64_hex(raw);
        if (hash != entry["fnv64"].get<std::string>())
            throw ConfigError("library component drifted from manifest hash: " + file.string());

        std::size_t sep = raw.find("\n---\n");
        if (sep == std::string::npos)
            throw FormatError("component missing '---' header separator: " + file.string());
        json header;
        try {
            header = json::parse(raw.substr(0, sep));
        } catch (const json::parse_error& e) {
            throw FormatError("component header not JSON in " + file.string() + " (" +
                              e.what() + ")");
        }
        if (!header.contains("id") || !header.contains("kind"))
            throw FormatError("component header needs 'id' and 'kind': " + file.string());

        PromptComponent c;
        c.id = header["id"].get<std::string>();
        c.kind = component_kind_from_string(header["kind"].get<std::string>());
        c.body = raw.substr(sep + 5);
        while (!c.body.empty() && c.body.back() == '\n') c.body.pop_back();
        c.content_hash = hash;
        if (header.contains("metadata") && header["metadata"].is_object())
            for (const auto& [k, v] : header["metadata"].items())
                if (v.is_string()) c.metadata[k] = v.get<std::string>();

        const auto& allowed = allowed_placeholders(c.kind);
        for (auto it = std::sregex_iterator(c.body.begin(), c.body.end(), kPlaceholderRe);
             it != std::sregex_iterator(); ++it) {
            std::string name = (*it)[1].str();
            if (!allowed.count(name))
                throw FormatError("component '" + c.id + "' uses placeholder {{" + name +
                                  "}} not allowed for kind " + component_kind_name(c.kind));
        }

        if (lib.by_id_.count(c.id))
            throw FormatError("library manifest: duplicate component id '" + c.id + "'");
        hash_acc += c.id + ":" + c.content_hash + "\n";
        lib.by_id_[c.id] = lib.components_.size();
        lib.components_.push_back(std::move(c));
    }
    if (lib.components_.empty()) throw FormatError("library manifest: no components");
    lib.manifest_hash_ = util::fnv1a64_hex(hash_acc);
    return lib;
}

const PromptComponent& PromptLibrary::get(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw ConfigError("library: no component with id '" + id + "'");
    return components_[it->second];
}

std::vector<ExemplarBlock> PromptLibrary::static_exemplars(const LabelTaxonomy& taxonomy) const {
    std::vector<ExemplarBlock> out;
    for (const auto& c : components_) {
        if (c.kind != ComponentKind::exemplar) continue;
        json j;
        try {
            j = json::parse(c.body);
        } catch (const json::parse_error& e) {
            throw FormatError("exemplar component '" + c.id + "' body not JSON (" + e.what() +
                              ")");
        }
        AnnotatedMessage m;
        m.id = "component:" + c.id;
        m.text = j.at("text").get<std::string>();
        m.label = make_label(j.at("actor").get<std::string>(), j.at("reason").get<std::string>(),
                             j.at("cause").get<std::string>());
        if (!taxonomy.validate(m.label))
            throw DataError("exemplar component '" + c.id + "' carries a label outside the taxonomy");
        out.push_back(ExemplarBlock{std::move(m), std::nullopt});
    }
    return out;
}

std::map<std::string, std::string> PromptLibrary::component_hashes() const {
    std::map<std::string, std::string> out;
    for (const auto& c : components_) out[c.id] = c.content_hash;
    return out;
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::zero_shot: return "zero_shot";
        case Strategy::few_shot_manual: return "few_shot_manual";
        case Strategy::cot: return "cot";
        case Strategy::auto_cot: return "auto_cot";
        case Strategy::rag_k: return "rag_k";
    }
    return "rag_k";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "zero_shot") return Strategy::zero_shot;
    if (s == "few_shot_manual") return Strategy::few_shot_manual;
    if (s == "cot") return Strategy::cot;
    if (s == "auto_cot") return Strategy::auto_cot;
    if (s == "rag_k") return Strategy::rag_k;
    throw ConfigError("unknown strategy: " + s);
}

void validate_candidate(const PromptCandidate& c) {
    if (util::trim(c.instruction).empty())
        throw ConfigError("candidate '" + c.id + "': empty instruction");
    if (c.strategy == Strategy::rag_k) {
        if (c.k < 0) throw ConfigError("candidate '" + c.id + "': negative k");
        if (!c.static_exemplars.empty())
            throw ConfigError("candidate '" + c.id + "': rag_k carries static exemplars");
    } else {
        if (c.k != 0)
            throw ConfigError("candidate '" + c.id + "': non-rag strategy must have k = 0");
    }
    if ((c.strategy == Strategy::zero_shot || c.strategy == Strategy::cot) &&
        !c.static_exemplars.empty())
        throw ConfigError("candidate '" + c.id + "': zero-shot strategies carry no exemplars");
}

std::string strategy_label(const PromptCandidate& c) {
    std::string base;
    switch (c.strategy) {
        case Strategy::zero_shot: base = "zero_shot"; break;
        case Strategy::few_shot_manual:
            base = "manual_" + std::to_string(c.static_exemplars.size()) + "shot";
            break;
        case Strategy::cot: base = "cot"; break;
        case Strategy::auto_cot:
            base = "auto_cot_" + std::to_string(c.static_exemplars.size()) + "shot";
            break;
        case Strategy::rag_k:
            base = c.k == 0 ? "auto_0shot" : "auto_rag_" + std::to_string(c.k) + "shot";
            break;
    }
    if (c.strategy == Strategy::zero_shot || c.strategy == Strategy::few_shot_manual ||
        c.strategy == Strategy::rag_k) {
        if (c.cot_mode == CotMode::cot) base += "+cot";
        if (c.cot_mode == CotMode::auto_cot) base += "+auto_cot";
    }
    return base;
}

std::string label_space_summary(const LabelTaxonomy& taxonomy) {
    std::string out = "Label space:\n- Actor: ";
    auto actors = taxonomy.actor_names();
    for (std::size_t i = 0; i < actors.size(); ++i) {
        if (i) out += ", ";
        out += actors[i];
    }
    out += "\n- Reason: ";
    auto reasons = taxonomy.reason_names();
    for (std::size_t i = 0; i < reasons.size(); ++i) {
        if (i) out += ", ";
        out += reasons[i];
    }
    out += "\n- Cause: one of " + std::to_string(taxonomy.size()) +
           " fine-grained causes under the chosen actor and reason.";
    return out;
}

std::vector<std::size_t> apply_order(std::size_t n, const std::vector<int>& order) {
    std::vector<std::size_t> out;
    std::vector<bool> used(n, false);
    for (int raw : order) {
        if (raw < 0 || static_cast<std::size_t>(raw) >= n) continue;
        auto i = static_cast<std::size_t>(raw);
        if (used[i]) continue;
        used[i] = true;
        out.push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!used[i]) out.push_back(i);
    return out;
}

std::vector<ChatMessage> compose(const PromptCandidate& candidate, std::string_view input_text,
                                 const std::vector<ExemplarBlock>& retrieved,
                                 const LabelTaxonomy& taxonomy, const PromptLibrary& library) {
    validate_candidate(candidate);
    if (candidate.uses_retrieval()) {
        if (static_cast<int>(retrieved.size()) > candidate.k)
            throw ConfigError("compose: " + std::to_string(retrieved.size()) +
                              " retrieved exemplars exceed k=" + std::to_string(candidate.k));
    } else if (!retrieved.empty()) {
        throw ConfigError("compose: strategy " + strategy_name(candidate.strategy) +
                          " does not accept retrieved exemplars");
    }

    std::string system = candidate.instruction;
    if (candidate.cot_mode != CotMode::plain)
        system += "\n\n" + library.get("cot_instruction").body;
    system += "\n\n" + label_space_summary(taxonomy);

    const auto& blocks = candidate.uses_retrieval() ? retrieved : candidate.static_exemplars;
    std::vector<std::size_t> order = apply_order(blocks.size(), candidate.exemplar_order);

    const bool rag_header = candidate.uses_retrieval();
    std::string exemplar_text;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        if (pos) exemplar_text += "\n\n";
        exemplar_text += render_exemplar_block(blocks[order[pos]], pos, rag_header, taxonomy);
    }

    std::string template_id;
    if (order.empty()) {
        template_id = "zero_shot_user";
    } else if (candidate.uses_retrieval()) {
        template_id = "rag_user";
    } else {
        template_id = "few_shot_user";
    }
    std::string user = library.get(template_id).body;
    user = util::replace_all(std::move(user), "{{exemplars}}", exemplar_text);
    user = util::replace_all(std::move(user), "{{input_text}}", std::string(input_text));

    std::smatch leftover;
    if (std::regex_search(user, leftover, kPlaceholderRe))
        throw TemplateError("compose: unresolved placeholder {{" + leftover[1].str() + "}}");

    return {{ChatMessage::Role::system, std::move(system)},
            {ChatMessage::Role::user, std::move(user)}};
}

std::vector<Rationale> sample_rationales(ChatClient& client, const PromptLibrary& library,
                                         const AnnotatedMessage& exemplar, int m,
                                         const DecodingConfig& decoding,
                                         const LabelTaxonomy& taxonomy) {
    if (m < 1) throw ConfigError("sample_rationales: m must be >= 1");
    std::string user = library.get("cot_template").body;
    user = util::replace_all(std::move(user), "{{input_text}}", exemplar.text);
    std::vector<ChatMessage> messages{{ChatMessage::Role::user, user}};

    std::vector<Rationale> out;
    for (int i = 0; i < m; ++i) {
        DecodingConfig dec = decoding;
        dec.seed = util::mix_seed(decoding.seed, static_cast<uint64_t>(i));
        Completion c = client.complete(messages, dec);
        Rationale r;
        r.chain = c.text;
        r.samples_drawn = m;
        try {
            r.final_label = parse_frame_response(c.text, taxonomy);
            r.agreed = r.final_label == exemplar.label;
        } catch (const InvalidLabelError& e) {
            r.final_label = FrameLabel{e.actor(), e.reason(), e.cause()};
            r.agreed = false;
        } catch (const UnparseableOutputError&) {
            continue;
        }
        out.push_back(std::move(r));
    }
    if (out.empty())
        throw SynthesisError("rationale synthesis: all " + std::to_string(m) +
                             " samples unparseable for exemplar '" + exemplar.id + "'");
    return out;
}

std::optional<Rationale> filter_rationales(const std::vector<Rationale>& rationales) {
    const Rationale* best = nullptr;
    for (const auto& r : rationales) {
        if (!r.agreed) continue;
        if (best == nullptr || r.chain.size() < best->chain.size()) best = &r;
    }
    if (best == nullptr) return std::nullopt;
    return *best;
}

std::vector<ExemplarBlock> build_auto_cot_exemplars(ChatClient& client,
                                                    const PromptLibrary& library,
                                                    const std::vector<AnnotatedMessage>& exemplars,
                                                    int m, const DecodingConfig& decoding,
                                                    const LabelTaxonomy& taxonomy) {
    if (exemplars.empty()) throw ConfigError("build_auto_cot_exemplars: empty exemplar list");
    std::vector<ExemplarBlock> out;
    out.reserve(exemplars.size());
    for (const auto& e : exemplars) {
        DecodingConfig dec = decoding;
        dec.seed = util::mix_seed(decoding.seed, util::fnv1a64(e.id));
        std::optional<Rationale> chosen;
        try {
            chosen = filter_rationales(sample_rationales(client, library, e, m, dec, taxonomy));
        } catch (const BudgetError&) {
            throw;
        } catch (const Error&) {
            chosen = std::nullopt;  // per-exemplar failure: fall back to plain form
        }
        out.push_back(ExemplarBlock{e, std::move(chosen)});
    }
    return out;
}

namespace {

json label_to_json(const FrameLabel& l) {
    return json{{"actor", l.actor}, {"reason", l.reason}, {"cause", l.cause}};
}

FrameLabel label_from_json(const json& j) {
    return FrameLabel{j.at("actor").get<std::string>(), j.at("reason").get<std::string>(),
                      j.at("cause").get<std::string>()};
}

}  // namespace

json candidate_to_json(const PromptCandidate& c) {
    json j;
    j["id"] = c.id;
    j["strategy"] = strategy_name(c.strategy);
    j["instruction"] = c.instruction;
    j["k"] = c.k;
    j["exemplar_order"] = c.exemplar_order;
    switch (c.cot_mode) {
        case CotMode::plain: j["cot_mode"] = "plain"; break;
        case CotMode::cot: j["cot_mode"] = "cot"; break;
        case CotMode::auto_cot: j["cot_mode"] = "auto_cot"; break;
    }
    j["provenance"] = {{"round", c.provenance.round},
                       {"parent_id", c.provenance.parent_id},
                       {"transformation", c.provenance.transformation}};
    json blocks = json::array();
    for (const auto& b : c.static_exemplars) {
        json jb;
        jb["id"] = b.message.id;
        jb["text"] = b.message.text;
        jb["label"] = label_to_json(b.message.label);
        if (b.rationale) {
            jb["rationale"] = {{"chain", b.rationale->chain},
                               {"final_label", label_to_json(b.rationale->final_label)},
                               {"samples_drawn", b.rationale->samples_drawn},
                               {"agreed", b.rationale->agreed}};
        }
        blocks.push_back(std::move(jb));
    }
    j["static_exemplars"] = std::move(blocks);
    return j;
}

PromptCandidate candidate_from_json(const json& j) {
    PromptCandidate c;
    try {
        c.id = j.at("id").get<std::string>();
        c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
        c.instruction = j.at("instruction").get<std::string>();
        c.k = j.at("k").get<int>();
        c.exemplar_order = j.at("exemplar_order").get<std::vector<int>>();
        std::string mode = j.at("cot_mode").get<std::string>();
        c.cot_mode = mode == "cot"        ? CotMode::cot
                     : mode == "auto_cot" ? CotMode::auto_cot
                                          : CotMode::plain;
        const auto& p = j.at("provenance");
        c.provenance.round = p.at("round").get<int>();
        c.provenance.parent_id = p.at("parent_id").get<std::string>();
        c.provenance.transformation = p.at("transformation").get<std::string>();
        for (const auto& jb : j.at("static_exemplars")) {
            ExemplarBlock b;
            b.message.id = jb.at("id").get<std::string>();
            b.message.text = jb.at("text").get<std::string>();
            b.message.label = label_from_json(jb.at("label"));
            if (jb.contains("rationale")) {
                Rationale r;
                r.chain = jb["rationale"].at("chain").get<std::string>();
                r.final_label = label_from_json(jb["rationale"].at("final_label"));
                r.samples_drawn = jb["rationale"].at("samples_drawn").get<int>();
                r.agreed = jb["rationale"].at("agreed").get<bool>();
                b.rationale = std::move(r);
            }
            c.static_exemplars.push_back(std::move(b));
        }
    } catch (const json::exception& e) {
        throw FormatError("candidate artifact: bad shape (" + std::string(e.what()) + ")");
    }
    return c;
}

}  // namespace promptforge
