#ifndef PROMPTFORGE_OPTIMIZER_HPP
#define PROMPTFORGE_OPTIMIZER_HPP

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "promptforge/errors.hpp"
#include "promptforge/promptkit.hpp"
#include "promptforge/retrieval.hpp"

namespace promptforge {

struct OptimizerConfig {
    int rounds = 3;
    int candidates_per_round = 3;
    std::vector<int> k_options{0, 3, 6};
    uint64_t eval_seed = 42;
    uint64_t mutation_seed = 7;
    long budget = 1000000;  // max total model calls, optimizer + target
    int m_samples = 5;      // self-consistency samples per exemplar
    int max_error_cases = 3;

    void validate() const;
};

/// A validation mistake carried into the refinement prompt.
struct ErrorCase {
    AnnotatedMessage message;
    std::optional<FrameLabel> predicted;  // set only when a label was produced
    std::string error_kind;               // "" | "unparseable" | "invalid_label"
    std::vector<std::string> wrong_levels;  // subset of {actor, reason, cause}
};

struct EvalItem {
    std::string id;
    std::optional<FrameLabel> predicted;  // set only on a clean parse+validate
    std::string error_kind;               // "" | "unparseable" | "invalid_label"
    bool actor_ok = false;
    bool reason_ok = false;
    bool cause_ok = false;
    std::vector<std::string> exemplar_ids;  // retrieval order, before permutation
    std::string raw;

    bool exact() const { return actor_ok && reason_ok && cause_ok; }
};

struct EvalReport {
    double exact_match = 0.0;
    std::array<double, 3> level_acc{0.0, 0.0, 0.0};  // actor, reason, cause
    double validity_rate = 0.0;  // fraction passing taxonomy validation
    double parse_rate = 0.0;     // fraction structurally parseable
    std::vector<ErrorCase> error_cases;
    long calls_used = 0;
    std::vector<EvalItem> items;

    std::size_t n() const { return items.size(); }
};

struct SolutionPair {
    PromptCandidate candidate;
    EvalReport report;
    int round = 1;
};

/// Budget ran out mid-evaluation; carries the progress made so far.
class EvalTruncatedError : public Error {
public:
    EvalTruncatedError(const std::string& msg, EvalReport partial)
        : Error(msg), partial_(std::move(partial)) {}
    const EvalReport& partial() const { return partial_; }

private:
    EvalReport partial_;
};

/// Everything one candidate evaluation needs. The index must cover the
/// train split only; validation ids found in the index abort with
/// DataError (leakage guard). rationale_cache, when set, memoizes auto-CoT
/// rationales per exemplar id across candidates.
struct EvalContext {
    const std::vector<AnnotatedMessage>* val_set = nullptr;
    const VectorIndex* index = nullptr;
    const std::map<std::string, AnnotatedMessage>* train_by_id = nullptr;
    const Embedder* embedder = nullptr;
    ChatClient* target = nullptr;
    ChatClient* optimizer = nullptr;  // rationale synthesis for auto-CoT rendering
    const LabelTaxonomy* taxonomy = nullptr;
    const PromptLibrary* library = nullptr;
    DecodingConfig decoding;
    uint64_t eval_seed = 42;
    int m_samples = 5;
    std::map<std::string, std::optional<Rationale>>* rationale_cache = nullptr;
};

/// Runs one candidate over the validation split: embed, retrieve k
/// exemplars (query id excluded defensively), compose, complete, parse,
/// score. Per-call decoding seeds derive as mix_seed(eval_seed,
/// fnv1a64(message id)), so item order and concurrency cannot change
/// outcomes.
EvalReport evaluate_candidate(const PromptCandidate& candidate, const EvalContext& ctx);

/// Applies exactly one seeded-random operator: exemplar-order permutation,
/// specificity-clause toggle (involution), or CoT-mode switch
/// (plain -> cot -> auto_cot -> plain). Operator choice is the first engine
/// draw modulo 3; provenance names the operator.
PromptCandidate mutate(const PromptCandidate& candidate, uint64_t seed,
                       const PromptLibrary& library);

/// Ranks error cases by the frequency of their wrong-level pattern
/// (descending), ties by message id ascending; returns the first max_cases.
std::vector<ErrorCase> select_error_cases(const std::vector<ErrorCase>& cases, int max_cases);

/// Renders the refinement prompt (previous prompt + selected error cases).
std::string render_refine_prompt(const PromptLibrary& library, const PromptCandidate& candidate,
                                 const std::vector<ErrorCase>& selected,
                                 const LabelTaxonomy& taxonomy);

/// Asks the optimizer endpoint for a refined instruction. The reply must
/// carry a "Refined Prompt:" block; otherwise ExtractionError is thrown and
/// the caller substitutes a mutation. An empty error list returns the
/// candidate unchanged without a model call.
PromptCandidate refine_with_errors(ChatClient& optimizer, const PromptLibrary& library,
                                   const PromptCandidate& candidate,
                                   const std::vector<ErrorCase>& error_cases, int max_cases,
                                   const DecodingConfig& decoding,
                                   const LabelTaxonomy& taxonomy);

/// Renders the debate prompt over variants labeled A, B, C...
std::string render_debate_prompt(const PromptLibrary& library,
                                 const std::vector<PromptCandidate>& variants);

/// Merges >= 2 prompt variants through the debate template; the consensus
/// "Final Improved Prompt:" block becomes the new instruction, inheriting
/// strategy/k from the first variant (callers pass the best variant first).
/// Extraction failure falls back to that variant, flagged in provenance.
PromptCandidate debate(ChatClient& optimizer, const PromptLibrary& library,
                       const std::vector<PromptCandidate>& variants,
                       const DecodingConfig& decoding);

/// Round 1 seeds one rag_k candidate per configured k (ascending) from the
/// base instruction; later rounds derive refine/mutate/debate variants of
/// the incumbent. Optimizer-endpoint failures degrade the slot to a pure
/// mutation flagged ":degraded" in provenance. Always returns exactly
/// candidates_per_round candidates.
std::vector<PromptCandidate> generate_candidates(int round,
                                                 const std::optional<SolutionPair>& incumbent,
                                                 const PromptLibrary& library,
                                                 const OptimizerConfig& config,
                                                 ChatClient& optimizer_endpoint,
                                                 const DecodingConfig& decoding,
                                                 const LabelTaxonomy& taxonomy);

struct RunResult {
    std::vector<SolutionPair> pairs;  // all rounds, evaluation order
    bool truncated = false;
};

/// The full closed loop: rounds are strictly sequential; the incumbent for
/// round r+1 is the best pair so far under the selection order. All pairs
/// from all rounds are retained. Budget exhaustion truncates the run
/// instead of failing it.
RunResult run_loop(const OptimizerConfig& config, EvalContext& ctx);

/// Fixed probe input for the prompt-length tie-break.
inline constexpr const char* kSelectionProbeText =
    "Đơn hàng giao không thành công.";

/// Whitespace tokens of the candidate rendered on the probe input with no
/// retrieval context.
int probe_token_count(const PromptCandidate& candidate, const LabelTaxonomy& taxonomy,
                      const PromptLibrary& library);

/// Total selection order: exact_match desc, validity_rate desc, probe
/// token count asc, round asc, candidate id asc.
bool pair_better(const SolutionPair& a, const SolutionPair& b, const LabelTaxonomy& taxonomy,
                 const PromptLibrary& library);

SolutionPair select_final(const std::vector<SolutionPair>& pairs, const LabelTaxonomy& taxonomy,
                          const PromptLibrary& library);

/// Report serialization for run artifacts (latency is never included).
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Convenience: id -> message map with duplicate detection.
std::map<std::string, AnnotatedMessage> message_index(const std::vector<AnnotatedMessage>& messages);

}  // namespace promptforge

#endif  // PROMPTFORGE_OPTIMIZER_HPP
