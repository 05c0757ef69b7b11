#include "promptforge/gateway.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

using nlohmann::json;
namespace util = promptforge::util;

namespace {

const std::regex kTupleRe(
    R"re(\(\s*"([^"]*)"\s*,\s*"([^"]*)"\s*,\s*"([^"]*)"\s*\))re");
const std::regex kObjectRe(R"re(\{[^{}]*\})re");
constexpr const char* kFinalOutputMarker = "Final Output:";

struct Triple {
    std::string actor, reason, cause;
};

std::optional<Triple> find_object_triple(const std::string& text) {
    auto begin = std::sregex_iterator(text.begin(), text.end(), kObjectRe);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        json j;
        try {
            j = json::parse(it->str());
        } catch (const json::parse_error&) {
            continue;
        }
        if (!j.is_object()) continue;
        if (!j.contains("actor") || !j.contains("reason") || !j.contains("cause")) continue;
        if (!j["actor"].is_string() || !j["reason"].is_string() || !j["cause"].is_string())
            continue;
        return Triple{j["actor"].get<std::string>(), j["reason"].get<std::string>(),
                      j["cause"].get<std::string>()};
    }
    return std::nullopt;
}

std::optional<Triple> find_tuple_triple(const std::string& text) {
    std::smatch m;
    if (std::regex_search(text, m, kTupleRe)) return Triple{m[1].str(), m[2].str(), m[3].str()};
    return std::nullopt;
}

std::optional<Triple> find_structured_triple(const std::string& text) {
    if (auto t = find_object_triple(text)) return t;
    if (auto t = find_tuple_triple(text)) return t;
    return std::nullopt;
}

/// Actors of every exemplar label visible in a prompt: quoted 3-tuples plus
/// flat actor/reason/cause objects.
std::vector<std::string> extract_prompt_actors(const std::string& user_text) {
    std::vector<std::string> actors;
    for (auto it = std::sregex_iterator(user_text.begin(), user_text.end(), kTupleRe);
         it != std::sregex_iterator(); ++it)
        actors.push_back(util::normalize_field((*it)[1].str()));
    for (auto it = std::sregex_iterator(user_text.begin(), user_text.end(), kObjectRe);
         it != std::sregex_iterator(); ++it) {
        json j;
        try {
            j = json::parse(it->str());
        } catch (const json::parse_error&) {
            continue;
        }
        if (j.is_object() && j.contains("actor") && j["actor"].is_string())
            actors.push_back(util::normalize_field(j["actor"].get<std::string>()));
    }
    return actors;
}

const std::string& require_last_user(const std::vector<ChatMessage>& messages) {
    if (messages.empty()) throw ConfigError("complete: empty message list");
    if (messages.back().role != ChatMessage::Role::user)
        throw ConfigError("complete: last message must have role user");
    return messages.back().content;
}

int count_prompt_tokens(const std::vector<ChatMessage>& messages) {
    std::size_t n = 0;
    for (const auto& m : messages) n += util::count_words(m.content);
    return static_cast<int>(n);
}

}  // namespace

std::string role_name(ChatMessage::Role role) {
    switch (role) {
        case ChatMessage::Role::system: return "system";
        case ChatMessage::Role::user: return "user";
        case ChatMessage::Role::assistant: return "assistant";
    }
    return "user";
}

void DecodingConfig::validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("decoding: top_p must be in (0, 1]");
    if (top_k < 1) throw ConfigError("decoding: top_k must be positive");
    if (temperature < 0.0) throw ConfigError("decoding: temperature must be non-negative");
    if (max_tokens < 1) throw ConfigError("decoding: max_tokens must be positive");
}

MockRuleSet load_mock_rules(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("mock rules: cannot open " + path.string());
    MockRuleSet rs;
    bool have_fallback = false;
    std::string line;
    int index = 0;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        if (have_fallback)
            throw FormatError("mock rules: record after fallback at line " +
                              std::to_string(lineno));
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error&) {
            throw FormatError("mock rules: malformed JSON at line " + std::to_string(lineno));
        }
        if (rec.contains("fallback")) {
            if (!rec["fallback"].is_string())
                throw FormatError("mock rules: fallback must be a string");
            rs.fallback = rec["fallback"].get<std::string>();
            have_fallback = true;
            continue;
        }
        MockRule rule;
        if (!rec.contains("match") || !rec["match"].is_string() || !rec.contains("respond") ||
            !rec["respond"].is_string())
            throw FormatError("mock rules: rule " + std::to_string(index) +
                              " needs 'match' and 'respond' strings");
        rule.match = rec["match"].get<std::string>();
        rule.respond = rec["respond"].get<std::string>();
        if (rule.match.empty())
            throw FormatError("mock rules: rule " + std::to_string(index) + " has empty match");
        if (rec.contains("noise")) {
            if (!rec["noise"].is_number())
                throw FormatError("mock rules: rule " + std::to_string(index) +
                                  " noise must be a number");
            rule.noise = rec["noise"].get<double>();
            if (rule.noise < 0.0 || rule.noise > 1.0)
                throw FormatError("mock rules: rule " + std::to_string(index) +
                                  " noise must be in [0, 1]");
        }
        if (!rule.match.empty() && rule.match.front() == '^') {
            try {
                rule.pattern.emplace(rule.match, std::regex::ECMAScript);
            } catch (const std::regex_error& e) {
                throw FormatError("mock rules: rule " + std::to_string(index) +
                                  " has a bad pattern: " + e.what());
            }
        }
        rs.rules.push_back(std::move(rule));
        ++index;
    }
    if (!have_fallback) throw ConfigError("mock rules: missing mandatory final fallback record");
    return rs;
}

MockClient::MockClient(MockRuleSet rules, const LabelTaxonomy* taxonomy, std::string name)
    : rules_(std::move(rules)), taxonomy_(taxonomy), name_(std::move(name)) {}

Completion MockClient::complete(const std::vector<ChatMessage>& messages,
                                const DecodingConfig& decoding) {
    decoding.validate();
    const std::string& last_user = require_last_user(messages);

    const MockRule* matched = nullptr;
    for (const auto& rule : rules_.rules) {
        bool hit = rule.pattern ? std::regex_search(last_user, *rule.pattern)
                                : last_user.find(rule.match) != std::string::npos;
        if (hit) {
            matched = &rule;
            break;
        }
    }

    std::mt19937_64 rng(util::mix_seed(decoding.seed, util::fnv1a64(last_user)));

    auto random_label_tuple = [&]() {
        if (taxonomy_ == nullptr || taxonomy_->enumerate().empty())
            throw ConfigError("mock: random-label emission requires a label space");
        const auto& labels = taxonomy_->enumerate();
        const FrameLabel& l = labels[util::pick_index(rng, labels.size())];
        return render_label(l, RenderForm::tuple, *taxonomy_);
    };

    std::string text;
    if (matched != nullptr && matched->noise > 0.0 && util::u01(rng) < matched->noise) {
        text = random_label_tuple();
    } else {
        std::string tpl = matched != nullptr ? matched->respond : rules_.fallback;

        // Conditional on retrieved exemplar actors (single block, not nested).
        constexpr std::string_view if_open = "{{if_retrieved_actor=";
        std::size_t ifpos = tpl.find(if_open);
        if (ifpos != std::string::npos) {
            std::size_t cond_end = tpl.find("}}", ifpos);
            std::size_t else_pos = tpl.find("{{else}}", ifpos);
            std::size_t end_pos = tpl.find("{{end}}", ifpos);
            if (cond_end == std::string::npos || else_pos == std::string::npos ||
                end_pos == std::string::npos)
                throw FormatError("mock: malformed if_retrieved_actor template");
            std::string wanted = util::normalize_field(
                tpl.substr(ifpos + if_open.size(), cond_end - ifpos - if_open.size()));
            std::string then_part = tpl.substr(cond_end + 2, else_pos - cond_end - 2);
            std::string else_part = tpl.substr(else_pos + 8, end_pos - else_pos - 8);
            bool found = false;
            for (const auto& actor : extract_prompt_actors(last_user)) {
                if (actor == wanted) {
                    found = true;
                    break;
                }
            }
            tpl = tpl.substr(0, ifpos) + (found ? then_part : else_part) +
                  tpl.substr(end_pos + 7);
        }

        constexpr std::string_view rand_slot = "{{random_label}}";
        std::size_t pos = 0;
        while ((pos = tpl.find(rand_slot, pos)) != std::string::npos) {
            std::string drawn = random_label_tuple();
            tpl.replace(pos, rand_slot.size(), drawn);
            pos += drawn.size();
        }
        text = tpl;
    }

    Completion c;
    c.text = std::move(text);
    c.prompt_tokens = count_prompt_tokens(messages);
    c.completion_tokens = static_cast<int>(util::count_words(c.text));
    c.latency_ms = 0.0;
    return c;
}

RemoteClient::RemoteClient(EndpointSpec spec) : spec_(std::move(spec)) {
    if (spec_.kind != EndpointSpec::Kind::remote)
        throw ConfigError("RemoteClient: endpoint kind must be remote");
    if (spec_.base_url.empty()) throw ConfigError("RemoteClient: base_url required");
}

std::string RemoteClient::build_request_json(const EndpointSpec& spec,
                                             const std::vector<ChatMessage>& messages,
                                             const DecodingConfig& decoding) {
    json req;
    req["model"] = spec.model;
    json msgs = json::array();
    for (const auto& m : messages)
        msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    req["messages"] = std::move(msgs);
    req["temperature"] = decoding.temperature;
    req["top_p"] = decoding.top_p;
    req["top_k"] = decoding.top_k;
    req["max_tokens"] = decoding.max_tokens;
    req["seed"] = decoding.seed;
    return req.dump();
}

Completion RemoteClient::complete(const std::vector<ChatMessage>& messages,
                                  const DecodingConfig& decoding) {
    decoding.validate();
    require_last_user(messages);

    util::HttpUrl url = util::parse_http_url(spec_.base_url);
    std::string path = url.path;
    while (path.size() > 1 && path.back() == '/') path.pop_back();
    if (path == "/") path.clear();
    path += "/chat/completions";

    std::string body = build_request_json(spec_, messages, decoding);
    httplib::Headers headers;
    if (!spec_.auth_env.empty()) {
        const char* token = std::getenv(spec_.auth_env.c_str());
        if (token != nullptr && token[0] != '\0')
            headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    auto started = std::chrono::steady_clock::now();
    int attempts = 0;
    std::string last_err;
    for (int attempt = 0; attempt <= spec_.max_retries; ++attempt) {
        ++attempts;
        httplib::Client cli(url.host, url.port);
        cli.set_connection_timeout(static_cast<time_t>(spec_.timeout_s), 0);
        cli.set_read_timeout(static_cast<time_t>(spec_.timeout_s), 0);
        auto res = cli.Post(path, headers, body, "application/json");
        if (!res) {
            last_err = httplib::to_string(res.error());
            if (attempt < spec_.max_retries)
                std::this_thread::sleep_for(std::chrono::milliseconds(spec_.backoff_ms << attempt));
            continue;
        }
        if (audit_) audit_(body, res->body, res->status);
        if (res->status != 200)
            throw EndpointError("endpoint '" + spec_.name + "' returned HTTP " +
                                    std::to_string(res->status),
                                res->status, res->body);
        json doc;
        try {
            doc = json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw FormatError("endpoint response not JSON (" + std::string(e.what()) + ")");
        }
        Completion c;
        if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty() &&
            doc["choices"][0].contains("message") &&
            doc["choices"][0]["message"].contains("content") &&
            doc["choices"][0]["message"]["content"].is_string()) {
            c.text = doc["choices"][0]["message"]["content"].get<std::string>();
        } else if (doc.contains("text") && doc["text"].is_string()) {
            c.text = doc["text"].get<std::string>();
        } else {
            throw FormatError("endpoint response carries no assistant text");
        }
        if (doc.contains("usage") && doc["usage"].is_object()) {
            const auto& u = doc["usage"];
            c.prompt_tokens = u.value("prompt_tokens", 0);
            c.completion_tokens = u.value("completion_tokens", 0);
        }
        if (c.prompt_tokens == 0) c.prompt_tokens = count_prompt_tokens(messages);
        if (c.completion_tokens == 0)
            c.completion_tokens = static_cast<int>(util::count_words(c.text));
        c.latency_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - started)
                           .count();
        return c;
    }
    throw TransportError("endpoint '" + spec_.name + "' unreachable after " +
                             std::to_string(attempts) + " attempts: " + last_err,
                         attempts);
}

std::unique_ptr<ChatClient> make_client(const EndpointSpec& spec,
                                        const LabelTaxonomy* taxonomy) {
    if (spec.kind == EndpointSpec::Kind::mock) {
        if (spec.rules_path.empty()) throw ConfigError("mock endpoint needs rules_path");
        return std::make_unique<MockClient>(load_mock_rules(spec.rules_path), taxonomy,
                                            spec.name);
    }
    return std::make_unique<RemoteClient>(spec);
}

void CallBudget::charge() {
    if (used_ >= limit_)
        throw BudgetError("model-call budget exhausted (" + std::to_string(limit_) + " calls)");
    ++used_;
}

FrameLabel parse_frame_response(const std::string& text, const LabelTaxonomy& taxonomy) {
    std::optional<Triple> triple = find_structured_triple(text);
    if (!triple) {
        std::size_t marker = text.find(kFinalOutputMarker);
        if (marker != std::string::npos)
            triple = find_structured_triple(text.substr(marker));
    }
    if (triple) {
        FrameLabel label = make_label(triple->actor, triple->reason, triple->cause);
        if (!taxonomy.validate(label))
            throw InvalidLabelError("model output is not a taxonomy leaf", label.actor,
                                    label.reason, label.cause);
        return label;
    }

    // Bare flat form, single line only.
    std::string flat = util::trim(text);
    if (!flat.empty() && flat.find('\n') == std::string::npos) {
        try {
            return taxonomy.parse_flat(flat);
        } catch (const FormatError&) {
            // not a flat label; fall through
        }
    }
    throw UnparseableOutputError("no frame label found in model output");
}

AnnotationOutcome annotate(ChatClient& client, std::vector<ChatMessage> messages,
                           const DecodingConfig& decoding, const LabelTaxonomy& taxonomy) {
    AnnotationOutcome out;
    Completion first = client.complete(messages, decoding);
    out.calls = 1;
    out.raw = first.text;
    try {
        out.label = parse_frame_response(first.text, taxonomy);
        out.status = AnnotationOutcome::Status::ok;
        return out;
    } catch (const InvalidLabelError& e) {
        out.status = AnnotationOutcome::Status::invalid_label;
        out.invalid_triple = FrameLabel{e.actor(), e.reason(), e.cause()};
        return out;
    } catch (const UnparseableOutputError&) {
        // one re-ask, below
    }

    messages.push_back({ChatMessage::Role::assistant, first.text});
    messages.push_back({ChatMessage::Role::user, "Return only the structured label."});
    Completion second = client.complete(messages, decoding);
    out.calls = 2;
    out.raw = second.text;
    try {
        out.label = parse_frame_response(second.text, taxonomy);
        out.status = AnnotationOutcome::Status::ok;
    } catch (const InvalidLabelError& e) {
        out.status = AnnotationOutcome::Status::invalid_label;
        out.invalid_triple = FrameLabel{e.actor(), e.reason(), e.cause()};
    } catch (const UnparseableOutputError&) {
        out.status = AnnotationOutcome::Status::unparseable;
    }
    return out;
}

}  // namespace promptforge
