#include "promptforge/schema.hpp"

#include <sstream>

#include "json.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

using nlohmann::json;
namespace util = promptforge::util;

namespace {

std::string check_name(const json& j, const char* field, const std::string& delim) {
    if (!j.is_string())
        throw FormatError(std::string("taxonomy: field '") + field + "' must be a string");
    std::string name = util::normalize_field(j.get<std::string>());
    if (name.empty())
        throw FormatError(std::string("taxonomy: empty ") + field + " name");
    if (name.find(delim) != std::string::npos)
        throw FormatError("taxonomy: name contains the delimiter token: " + name);
    if (name.find('"') != std::string::npos || name.find('\n') != std::string::npos)
        throw FormatError("taxonomy: name contains a quote or newline: " + name);
    return name;
}

std::string json_quote(const std::string& s) { return json(s).dump(); }

}  // namespace

LabelTaxonomy LabelTaxonomy::load(const std::filesystem::path& path) {
    std::string raw = util::read_file(path);
    if (util::trim(raw).empty()) throw FormatError("taxonomy: empty file: " + path.string());
    json doc;
    try {
        doc = json::parse(raw);
    } catch (const json::parse_error& e) {
        throw FormatError("taxonomy: not valid JSON (" + std::string(e.what()) + ")");
    }
    if (!doc.is_object() || !doc.contains("size") || !doc.contains("actors"))
        throw FormatError("taxonomy: expected object with 'size' and 'actors'");
    if (!doc["size"].is_number_integer())
        throw FormatError("taxonomy: 'size' must be an integer");

    LabelTaxonomy t;
    if (doc.contains("delimiter")) {
        if (!doc["delimiter"].is_string())
            throw FormatError("taxonomy: 'delimiter' must be a string");
        t.delimiter_ = util::trim(doc["delimiter"].get<std::string>());
        if (t.delimiter_.empty()) throw FormatError("taxonomy: empty delimiter");
    }

    if (!doc["actors"].is_array()) throw FormatError("taxonomy: 'actors' must be an array");
    for (const auto& ja : doc["actors"]) {
        if (!ja.is_object() || !ja.contains("name") || !ja.contains("reasons"))
            throw FormatError("taxonomy: actor entries need 'name' and 'reasons'");
        ActorNode actor;
        actor.name = check_name(ja["name"], "actor", t.delimiter_);
        if (!ja["reasons"].is_array())
            throw FormatError("taxonomy: 'reasons' must be an array (actor " + actor.name + ")");
        for (const auto& jr : ja["reasons"]) {
            if (!jr.is_object() || !jr.contains("name") || !jr.contains("causes"))
                throw FormatError("taxonomy: reason entries need 'name' and 'causes'");
            ReasonNode reason;
            reason.name = check_name(jr["name"], "reason", t.delimiter_);
            if (!jr["causes"].is_array() || jr["causes"].empty())
                throw FormatError("taxonomy: reason '" + reason.name +
                                  "' needs a non-empty 'causes' array");
            for (const auto& jc : jr["causes"])
                reason.causes.push_back(check_name(jc, "cause", t.delimiter_));
            actor.reasons.push_back(std::move(reason));
        }
        if (actor.reasons.empty())
            throw FormatError("taxonomy: actor '" + actor.name + "' has no reasons");
        t.actors_.push_back(std::move(actor));
    }
    t.finalize(doc["size"].get<std::size_t>());
    return t;
}

LabelTaxonomy LabelTaxonomy::from_nodes(std::vector<ActorNode> actors,
                                        std::string delimiter, std::size_t declared_size) {
    LabelTaxonomy t;
    t.actors_ = std::move(actors);
    t.delimiter_ = std::move(delimiter);
    for (auto& a : t.actors_) {
        a.name = util::normalize_field(a.name);
        for (auto& r : a.reasons) {
            r.name = util::normalize_field(r.name);
            for (auto& c : r.causes) c = util::normalize_field(c);
        }
    }
    t.finalize(declared_size);
    return t;
}

void LabelTaxonomy::finalize(std::size_t declared_size) {
    leaves_.clear();
    leaf_set_.clear();
    for (const auto& a : actors_) {
        for (const auto& r : a.reasons) {
            for (const auto& c : r.causes) {
                FrameLabel leaf{a.name, r.name, c};
                auto key = std::array<std::string, 3>{leaf.actor, leaf.reason, leaf.cause};
                if (!leaf_set_.insert(key).second)
                    throw DataError("taxonomy: duplicate leaf path: " + leaf.actor + " / " +
                                    leaf.reason + " / " + leaf.cause);
                leaves_.push_back(std::move(leaf));
            }
        }
    }
    if (leaves_.empty()) throw FormatError("taxonomy: no leaf paths");
    if (leaves_.size() != declared_size) {
        std::ostringstream msg;
        msg << "taxonomy: header size " << declared_size << " does not match counted leaf paths "
            << leaves_.size();
        throw DataError(msg.str());
    }

    // Canonical serialization for the content hash: one line per leaf.
    std::string canon = "delimiter=" + delimiter_ + "\n";
    for (const auto& l : leaves_)
        canon += l.actor + "\x1f" + l.reason + "\x1f" + l.cause + "\n";
    content_hash_ = util::fnv1a64_hex(canon);
}

bool LabelTaxonomy::validate(const FrameLabel& label) const {
    FrameLabel n = make_label(label.actor, label.reason, label.cause);
    if (n.actor.empty() || n.reason.empty() || n.cause.empty()) return false;
    return leaf_set_.count({n.actor, n.reason, n.cause}) > 0;
}

FrameLabel LabelTaxonomy::parse_flat(std::string_view text) const {
    std::vector<std::string> parts;
    std::string s(text);
    std::size_t pos = 0;
    while (true) {
        std::size_t hit = s.find(delimiter_, pos);
        if (hit == std::string::npos) {
            parts.push_back(s.substr(pos));
            break;
        }
        parts.push_back(s.substr(pos, hit - pos));
        pos = hit + delimiter_.size();
    }
    if (parts.size() != 3) {
        std::ostringstream msg;
        msg << "label parse: expected 3 parts, got " << parts.size();
        throw FormatError(msg.str());
    }
    FrameLabel label = make_label(parts[0], parts[1], parts[2]);
    if (!validate(label))
        throw InvalidLabelError("label parse: not a leaf path of the taxonomy", label.actor,
                                label.reason, label.cause);
    return label;
}

std::vector<std::string> LabelTaxonomy::actor_names() const {
    std::vector<std::string> out;
    for (const auto& a : actors_) out.push_back(a.name);
    return out;
}

std::vector<std::string> LabelTaxonomy::reason_names() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& a : actors_)
        for (const auto& r : a.reasons)
            if (seen.insert(r.name).second) out.push_back(r.name);
    return out;
}

std::string render_label(const FrameLabel& label, RenderForm form,
                         const LabelTaxonomy& taxonomy) {
    if (label.actor.empty() || label.reason.empty() || label.cause.empty())
        throw Error("render_label: empty label field");
    switch (form) {
        case RenderForm::flat:
            return label.actor + " " + taxonomy.delimiter() + " " + label.reason + " " +
                   taxonomy.delimiter() + " " + label.cause;
        case RenderForm::object:
            return "{ \"actor\": " + json_quote(label.actor) +
                   ", \"reason\": " + json_quote(label.reason) +
                   ", \"cause\": " + json_quote(label.cause) + " }";
        case RenderForm::tuple:
            return "(\"" + label.actor + "\", \"" + label.reason + "\", \"" + label.cause +
                   "\")";
    }
    throw Error("render_label: unknown form");
}

FrameLabel make_label(std::string_view actor, std::string_view reason,
                      std::string_view cause) {
    return FrameLabel{util::normalize_field(actor), util::normalize_field(reason),
                      util::normalize_field(cause)};
}

}  // namespace promptforge
