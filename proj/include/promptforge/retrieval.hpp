#ifndef PROMPTFORGE_RETRIEVAL_HPP
#define PROMPTFORGE_RETRIEVAL_HPP

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "promptforge/corpus.hpp"

namespace promptforge {

/// Embedder configuration. The builtin embedder is a deterministic hashed
/// bag-of-words: ASCII-lowercase, whitespace-tokenize, bucket each token by
/// fnv1a64(token) % dim, accumulate term frequency, L2-normalize. Empty or
/// token-free text maps to the zero vector. The remote kind posts
/// {"texts": [...]} to `url` and re-normalizes the returned vectors locally.
struct EmbedderConfig {
    enum class Kind { builtin, remote };
    Kind kind = Kind::builtin;
    int dim = 256;
    std::string url;        // remote only
    int max_retries = 2;    // remote only, transport errors
    int backoff_ms = 100;   // remote only, doubled per retry
};

class Embedder {
public:
    explicit Embedder(EmbedderConfig config);

    /// Deterministic for the builtin kind. Unit L2 norm except for the
    /// zero vector on token-free input.
    std::vector<double> embed(std::string_view text) const;

    /// Identifies the embedder configuration that produced an index; indexes
    /// built under a different fingerprint are refused at inference time.
    const std::string& fingerprint() const { return fingerprint_; }
    int dim() const { return config_.dim; }
    const EmbedderConfig& config() const { return config_; }

private:
    std::vector<double> embed_builtin(std::string_view text) const;
    std::vector<double> embed_remote(std::string_view text) const;

    EmbedderConfig config_;
    std::string fingerprint_;
};

struct Neighbor {
    std::string id;
    double score = 0.0;  // cosine similarity in [-1, 1]

    bool operator==(const Neighbor&) const = default;
};

/// Immutable exact-search index over exemplar embeddings. Entries are kept
/// in ascending id order; queries are exhaustive cosine top-k with the tie
/// order fixed as (score desc, id asc). Safe for unlimited concurrent reads.
class VectorIndex {
public:
    static VectorIndex build(const std::vector<AnnotatedMessage>& messages,
                             const Embedder& embedder);

    /// Returns min(k, available) neighbors sorted by score descending, ties
    /// by ascending id. Excluded ids never appear. Cosine against the zero
    /// vector is defined as 0, so zero-vector queries yield the k
    /// lexicographically-first ids with score 0.
    std::vector<Neighbor> knn(const std::vector<double>& query, int k,
                              const std::set<std::string>& exclude = {}) const;

    bool contains(const std::string& id) const { return entries_.count(id) > 0; }
    std::size_t size() const { return entries_.size(); }
    int dim() const { return dim_; }
    const std::string& fingerprint() const { return fingerprint_; }

    /// Checksum over all entries; detects tampered artifacts on load.
    std::string checksum() const;

    void save(const std::filesystem::path& path) const;
    static VectorIndex load(const std::filesystem::path& path);

private:
    VectorIndex() = default;

    std::map<std::string, std::vector<double>> entries_;
    int dim_ = 0;
    std::string fingerprint_;
};

/// Exact cosine similarity clamped to [-1, 1]; 0 when either vector is
/// all-zero.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace promptforge

#endif  // PROMPTFORGE_RETRIEVAL_HPP
