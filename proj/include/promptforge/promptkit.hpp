#ifndef PROMPTFORGE_PROMPTKIT_HPP
#define PROMPTFORGE_PROMPTKIT_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptforge/corpus.hpp"
#include "promptforge/gateway.hpp"
#include "promptforge/schema.hpp"

namespace promptforge {

enum class ComponentKind {
    instruction,
    exemplar,
    cot_template,
    autocot_template,
    rag_template,
    refine_template,
    debate_template,
};

ComponentKind component_kind_from_string(const std::string& s);
std::string component_kind_name(ComponentKind kind);

/// One prompt component: a JSON header line, a "---" separator, then the
/// body. Placeholders use {{name}} syntax and are validated against the
/// allowed set for the component's kind at load time.
struct PromptComponent {
    std::string id;
    ComponentKind kind = ComponentKind::instruction;
    std::string body;
    std::map<std::string, std::string> metadata;
    std::string content_hash;  // fnv1a64 hex of the full file
};

/// Immutable component library loaded from a manifest that lists component
/// files with content hashes. Hash mismatches are refused: the optimizer
/// mutates instructions, so asset drift must be loud.
class PromptLibrary {
public:
    static PromptLibrary load(const std::filesystem::path& manifest_path);

    const PromptComponent& get(const std::string& id) const;
    bool has(const std::string& id) const { return by_id_.count(id) > 0; }

    /// Components in manifest order.
    const std::vector<PromptComponent>& components() const { return components_; }

    /// Static exemplar components (kind == exemplar) as plain blocks, in
    /// manifest order. Bodies are JSON {"text", "actor", "reason", "cause"}.
    std::vector<struct ExemplarBlock> static_exemplars(const LabelTaxonomy& taxonomy) const;

    std::map<std::string, std::string> component_hashes() const;
    const std::string& manifest_hash() const { return manifest_hash_; }

private:
    std::vector<PromptComponent> components_;
    std::map<std::string, std::size_t> by_id_;
    std::string manifest_hash_;
};

/// A reasoning chain sampled for an exemplar, with the agreement flag from
/// comparing its final label against the exemplar's gold label.
struct Rationale {
    std::string chain;
    FrameLabel final_label;
    int samples_drawn = 0;
    bool agreed = false;
};

struct ExemplarBlock {
    AnnotatedMessage message;
    std::optional<Rationale> rationale;  // present iff rendered in cot form

    bool is_cot() const { return rationale.has_value(); }
};

enum class Strategy { zero_shot, few_shot_manual, cot, auto_cot, rag_k };
enum class CotMode { plain, cot, auto_cot };

std::string strategy_name(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct Provenance {
    int round = 1;
    std::string parent_id;
    std::string transformation;  // e.g. "seed", "refine", "mutate:reorder_exemplars"
};

/// A fully specified composable prompt. `exemplar_order` is a permutation
/// spec applied to the exemplar list at rendering time (empty = identity;
/// out-of-range entries are dropped, missing positions appended in
/// ascending order). `cot_mode` controls the reasoning rendering and is the
/// axis the CoT-switch mutation moves along.
struct PromptCandidate {
    std::string id;
    Strategy strategy = Strategy::rag_k;
    std::string instruction;
    std::vector<ExemplarBlock> static_exemplars;
    int k = 0;  // retrieval shot count; > 0 only for rag_k
    std::vector<int> exemplar_order;
    CotMode cot_mode = CotMode::plain;
    Provenance provenance;

    bool uses_retrieval() const { return strategy == Strategy::rag_k; }
};

/// Checks the candidate invariants (non-empty instruction, k/strategy
/// coupling); throws ConfigError on violation.
void validate_candidate(const PromptCandidate& c);

/// Reporting name, e.g. "auto_0shot", "auto_rag_6shot", "manual_2shot",
/// "auto_rag_3shot+cot".
std::string strategy_label(const PromptCandidate& c);

/// Deterministic two-message rendering: the system turn carries the
/// instruction (plus the step-by-step clause when cot_mode is set) and the
/// per-level label-space summary; the user turn carries the exemplar blocks
/// in the candidate's order followed by the input text. A rag_k candidate
/// with no retrieved exemplars renders byte-identically to zero_shot with
/// the same instruction.
std::vector<ChatMessage> compose(const PromptCandidate& candidate, std::string_view input_text,
                                 const std::vector<ExemplarBlock>& retrieved,
                                 const LabelTaxonomy& taxonomy, const PromptLibrary& library);

/// The per-level summary included in every system message: level-1 and
/// level-2 vocabularies plus the leaf count (never all leaves).
std::string label_space_summary(const LabelTaxonomy& taxonomy);

/// Applies a permutation spec to indices [0, n).
std::vector<std::size_t> apply_order(std::size_t n, const std::vector<int>& order);

/// Draws m reasoning chains for one exemplar through the CoT template with
/// per-sample seeds mix_seed(decoding.seed, sample_index). Unparseable
/// samples are dropped; if all m are unparseable a SynthesisError is
/// thrown. agreed is set by comparing the parsed final label to the gold
/// label.
std::vector<Rationale> sample_rationales(ChatClient& client, const PromptLibrary& library,
                                         const AnnotatedMessage& exemplar, int m,
                                         const DecodingConfig& decoding,
                                         const LabelTaxonomy& taxonomy);

/// Among agreed rationales returns the one with the shortest chain (ties:
/// earliest sample); nullopt when none agreed.
std::optional<Rationale> filter_rationales(const std::vector<Rationale>& rationales);

/// Two-phase exemplar synthesis: each exemplar keeps its filtered rationale
/// when one exists (cot form) and falls back to plain form otherwise.
/// Per-exemplar seeds derive as mix_seed(decoding.seed, fnv1a64(id)); input
/// order is preserved and per-exemplar failures never abort the batch.
std::vector<ExemplarBlock> build_auto_cot_exemplars(ChatClient& client,
                                                    const PromptLibrary& library,
                                                    const std::vector<AnnotatedMessage>& exemplars,
                                                    int m, const DecodingConfig& decoding,
                                                    const LabelTaxonomy& taxonomy);

/// Candidate serialization for run artifacts; round-trips losslessly.
nlohmann::json candidate_to_json(const PromptCandidate& c);
PromptCandidate candidate_from_json(const nlohmann::json& j);

}  // namespace promptforge

#endif  // PROMPTFORGE_PROMPTKIT_HPP
