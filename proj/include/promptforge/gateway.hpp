#ifndef PROMPTFORGE_GATEWAY_HPP
#define PROMPTFORGE_GATEWAY_HPP

#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "promptforge/schema.hpp"

namespace promptforge {

struct ChatMessage {
    enum class Role { system, user, assistant };
    Role role = Role::user;
    std::string content;
};

std::string role_name(ChatMessage::Role role);

/// Decoding parameters shared by all endpoints. Serialized form round-trips
/// exactly; defaults follow the common 70B-class configuration.
struct DecodingConfig {
    double top_p = 0.95;
    int top_k = 70;
    double temperature = 0.3;
    int max_tokens = 1024;
    double repetition_penalty = 0.0;
    double presence_penalty = 0.0;
    uint64_t seed = 0;

    void validate() const;
};

/// One endpoint handle: either a remote chat-completion service or the
/// deterministic rule-driven mock.
struct EndpointSpec {
    enum class Kind { remote, mock };
    std::string name = "default";
    Kind kind = Kind::mock;

    // remote
    std::string base_url;        // API root, e.g. http://host:port/v1
    std::string model;
    std::string auth_env;        // env var holding the bearer token; may be empty
    double timeout_s = 30.0;
    int max_retries = 2;
    int backoff_ms = 200;        // doubled per retry, transport errors only
    bool reasoning = true;       // recorded passthrough flag, not interpreted

    // mock
    std::string rules_path;
};

/// One mock rule. `match` is a plain substring unless it starts with '^',
/// in which case it is an ECMAScript regex searched against the final user
/// message. `respond` is literal text or a template; `noise` replaces the
/// whole response with a seeded uniformly-random enumerated label rendered
/// as a tuple.
struct MockRule {
    std::string match;
    std::string respond;
    double noise = 0.0;
    std::optional<std::regex> pattern;  // compiled when match starts with '^'
};

struct MockRuleSet {
    std::vector<MockRule> rules;
    std::string fallback;  // mandatory final rule
};

/// Loads a line-delimited rule file; the last record must be
/// {"fallback": "..."}. Bad patterns report the offending rule index.
MockRuleSet load_mock_rules(const std::filesystem::path& path);

struct Completion {
    std::string text;
    int prompt_tokens = 0;      // whitespace tokens for the mock
    int completion_tokens = 0;
    double latency_ms = 0.0;    // never serialized into artifacts
};

/// Uniform chat-completion interface. Implementations are stateless handles;
/// concurrent complete() calls are safe.
class ChatClient {
public:
    virtual ~ChatClient() = default;

    /// Messages must be non-empty and end with a user turn.
    virtual Completion complete(const std::vector<ChatMessage>& messages,
                                const DecodingConfig& decoding) = 0;

    virtual const std::string& endpoint_name() const = 0;
};

/// Deterministic scripted model. Per-call randomness is seeded by
/// mix_seed(decoding.seed, fnv1a64(final user content)), so identical
/// (rules, messages, seed) always produce identical text and concurrent
/// batches cannot change outcomes. Draw order: one u01 draw for the noise
/// check when the matched rule has noise > 0, then template placeholders
/// left to right ({{random_label}} consumes one draw; untaken branches of
/// {{if_retrieved_actor=...}} consume nothing).
class MockClient : public ChatClient {
public:
    /// The taxonomy supplies the enumerated label space for random-label
    /// emission; pass nullptr only for rule sets that never draw labels.
    MockClient(MockRuleSet rules, const LabelTaxonomy* taxonomy, std::string name = "mock");

    Completion complete(const std::vector<ChatMessage>& messages,
                        const DecodingConfig& decoding) override;
    const std::string& endpoint_name() const override { return name_; }

private:
    MockRuleSet rules_;
    const LabelTaxonomy* taxonomy_;
    std::string name_;
};

/// HTTP client for the neutral chat-completion wire contract (README).
/// Bounded retries with exponential backoff on transport errors only; HTTP
/// error statuses surface immediately as EndpointError.
class RemoteClient : public ChatClient {
public:
    using AuditSink = std::function<void(const std::string& request_json,
                                         const std::string& response_body, int status)>;

    explicit RemoteClient(EndpointSpec spec);

    Completion complete(const std::vector<ChatMessage>& messages,
                        const DecodingConfig& decoding) override;
    const std::string& endpoint_name() const override { return spec_.name; }

    /// Records every raw request/response pair for audit.
    void set_audit_sink(AuditSink sink) { audit_ = std::move(sink); }

    /// Request body for the wire contract; exposed for tests.
    static std::string build_request_json(const EndpointSpec& spec,
                                          const std::vector<ChatMessage>& messages,
                                          const DecodingConfig& decoding);

private:
    EndpointSpec spec_;
    AuditSink audit_;
};

std::unique_ptr<ChatClient> make_client(const EndpointSpec& spec,
                                        const LabelTaxonomy* taxonomy);

/// Shared model-call budget. charge() throws BudgetError once the limit is
/// reached.
class CallBudget {
public:
    explicit CallBudget(long limit) : limit_(limit) {}
    void charge();
    long used() const { return used_; }
    long limit() const { return limit_; }

private:
    long limit_;
    long used_ = 0;
};

/// Decorator that charges a CallBudget before delegating.
class BudgetedClient : public ChatClient {
public:
    BudgetedClient(ChatClient& inner, CallBudget& budget) : inner_(inner), budget_(budget) {}
    Completion complete(const std::vector<ChatMessage>& messages,
                        const DecodingConfig& decoding) override {
        budget_.charge();
        return inner_.complete(messages, decoding);
    }
    const std::string& endpoint_name() const override { return inner_.endpoint_name(); }

private:
    ChatClient& inner_;
    CallBudget& budget_;
};

/// Parses a model reply into a frame label. Tries, in order: (1) the first
/// flat JSON object carrying actor/reason/cause string fields, (2) the
/// first quoted 3-tuple, (3) the text after a "Final Output:" marker with
/// the same two forms, (4) a whole-line flat delimiter-joined label.
/// Throws UnparseableOutputError when no form matches and InvalidLabelError
/// (carrying the triple) when a triple parses but is not a taxonomy leaf.
FrameLabel parse_frame_response(const std::string& text, const LabelTaxonomy& taxonomy);

/// Outcome of one annotation attempt after the single re-ask rule.
struct AnnotationOutcome {
    enum class Status { ok, invalid_label, unparseable };
    Status status = Status::unparseable;
    std::optional<FrameLabel> label;            // set when status == ok
    std::optional<FrameLabel> invalid_triple;   // set when status == invalid_label
    std::string raw;                            // final model text
    int calls = 0;
};

/// complete + parse with the retry rule: an unparseable reply triggers
/// exactly one re-ask (the previous reply plus an instruction to return
/// only the structured label); invalid labels never retry.
AnnotationOutcome annotate(ChatClient& client, std::vector<ChatMessage> messages,
                           const DecodingConfig& decoding, const LabelTaxonomy& taxonomy);

}  // namespace promptforge

#endif  // PROMPTFORGE_GATEWAY_HPP
