#include "promptforge/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

using nlohmann::json;
namespace util = promptforge::util;

Embedder::Embedder(EmbedderConfig config) : config_(std::move(config)) {
    if (config_.dim <= 0) throw ConfigError("embedder: dim must be positive");
    if (config_.kind == EmbedderConfig::Kind::builtin) {
        fingerprint_ = "bow-fnv1a64-lower-d" + std::to_string(config_.dim) + "-v1";
    } else {
        if (config_.url.empty()) throw ConfigError("embedder: remote kind needs a url");
        fingerprint_ =
            "remote-d" + std::to_string(config_.dim) + "-" + util::fnv1a64_hex(config_.url);
    }
}

std::vector<double> Embedder::embed(std::string_view text) const {
    return config_.kind == EmbedderConfig::Kind::builtin ? embed_builtin(text)
                                                         : embed_remote(text);
}

std::vector<double> Embedder::embed_builtin(std::string_view text) const {
    std::vector<double> v(static_cast<std::size_t>(config_.dim), 0.0);
    std::string lowered = util::to_lower_ascii(text);
    for (const auto& tok : util::split_ws(lowered)) {
        std::size_t bucket =
            static_cast<std::size_t>(util::fnv1a64(tok) % static_cast<uint64_t>(config_.dim));
        v[bucket] += 1.0;
    }
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (norm2 > 0.0) {
        double inv = 1.0 / std::sqrt(norm2);
        for (double& x : v) x *= inv;
    }
    return v;
}

std::vector<double> Embedder::embed_remote(std::string_view text) const {
    util::HttpUrl url = util::parse_http_url(config_.url);
    json req;
    req["texts"] = json::array({std::string(text)});
    std::string body = req.dump();

    int attempts = 0;
    std::string last_err;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        ++attempts;
        httplib::Client cli(url.host, url.port);
        cli.set_connection_timeout(10, 0);
        cli.set_read_timeout(30, 0);
        auto res = cli.Post(url.path, body, "application/json");
        if (!res) {
            last_err = httplib::to_string(res.error());
            if (attempt < config_.max_retries)
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(config_.backoff_ms << attempt));
            continue;
        }
        if (res->status != 200)
            throw EndpointError("embedder: HTTP " + std::to_string(res->status), res->status,
                                res->body);
        json doc;
        try {
            doc = json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw FormatError("embedder: response not JSON (" + std::string(e.what()) + ")");
        }
        if (!doc.contains("vectors") || !doc["vectors"].is_array() || doc["vectors"].empty())
            throw FormatError("embedder: response missing 'vectors'");
        std::vector<double> v;
        try {
            v = doc["vectors"][0].get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw FormatError("embedder: bad vector payload (" + std::string(e.what()) + ")");
        }
        if (static_cast<int>(v.size()) != config_.dim)
            throw ConfigError("embedder: endpoint returned dimension " +
                              std::to_string(v.size()) + ", config declares " +
                              std::to_string(config_.dim));
        double norm2 = 0.0;
        for (double x : v) norm2 += x * x;
        if (norm2 > 0.0) {
            double inv = 1.0 / std::sqrt(norm2);
            for (double& x : v) x *= inv;
        }
        return v;
    }
    throw TransportError("embedder: transport failure after " + std::to_string(attempts) +
                             " attempts: " + last_err,
                         attempts);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    // Round-off can push |c| one ulp past 1; the score contract is [-1, 1].
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

VectorIndex VectorIndex::build(const std::vector<AnnotatedMessage>& messages,
                               const Embedder& embedder) {
    if (messages.empty()) throw DataError("index: empty message list");
    VectorIndex idx;
    idx.dim_ = embedder.dim();
    idx.fingerprint_ = embedder.fingerprint();
    for (const auto& m : messages) {
        if (idx.entries_.count(m.id)) throw DataError("index: duplicate id '" + m.id + "'");
        try {
            idx.entries_[m.id] = embedder.embed(m.text);
        } catch (const TransportError& e) {
            throw TransportError("index: embedding failed for id '" + m.id + "': " + e.what(),
                                 e.attempts());
        } catch (const EndpointError& e) {
            throw EndpointError("index: embedding failed for id '" + m.id + "': " + e.what(),
                                e.status(), e.body());
        } catch (const Error& e) {
            throw DataError("index: embedding failed for id '" + m.id + "': " + e.what());
        }
    }
    return idx;
}

std::vector<Neighbor> VectorIndex::knn(const std::vector<double>& query, int k,
                                       const std::set<std::string>& exclude) const {
    if (k < 0) throw ConfigError("knn: k must be non-negative");
    if (static_cast<int>(query.size()) != dim_)
        throw ConfigError("knn: query dimension " + std::to_string(query.size()) +
                          " != index dimension " + std::to_string(dim_));
    if (k == 0) return {};

    std::vector<Neighbor> all;
    all.reserve(entries_.size());
    for (const auto& [id, vec] : entries_) {
        if (exclude.count(id)) continue;
        all.push_back({id, cosine(query, vec)});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
    return all;
}

std::string VectorIndex::checksum() const {
    std::string data;
    for (const auto& [id, vec] : entries_) {
        data += id;
        data += ';';
        for (double x : vec) {
            uint64_t bits;
            static_assert(sizeof(bits) == sizeof(x));
            std::memcpy(&bits, &x, sizeof(bits));
            char buf[17];
            std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(bits));
            data += buf;
        }
        data += '\n';
    }
    return util::fnv1a64_hex(data);
}

void VectorIndex::save(const std::filesystem::path& path) const {
    json doc;
    doc["dim"] = dim_;
    doc["fingerprint"] = fingerprint_;
    doc["count"] = entries_.size();
    doc["checksum"] = checksum();
    json entries = json::object();
    for (const auto& [id, vec] : entries_) entries[id] = vec;
    doc["entries"] = std::move(entries);
    util::write_file_atomic(path, doc.dump() + "\n");
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(util::read_file(path));
    } catch (const json::parse_error& e) {
        throw FormatError("index artifact: not valid JSON (" + std::string(e.what()) + ")");
    }
    VectorIndex idx;
    try {
        idx.dim_ = doc.at("dim").get<int>();
        idx.fingerprint_ = doc.at("fingerprint").get<std::string>();
        for (const auto& [id, vec] : doc.at("entries").items()) {
            idx.entries_[id] = vec.get<std::vector<double>>();
            if (static_cast<int>(idx.entries_[id].size()) != idx.dim_)
                throw DataError("index artifact: entry '" + id + "' has wrong dimension");
        }
        if (doc.at("count").get<std::size_t>() != idx.entries_.size())
            throw DataError("index artifact: header count does not match entries");
        if (doc.at("checksum").get<std::string>() != idx.checksum())
            throw DataError("index artifact: checksum mismatch (file was modified?)");
    } catch (const json::exception& e) {
        throw FormatError("index artifact: bad shape (" + std::string(e.what()) + ")");
    }
    return idx;
}

}  // namespace promptforge
