#ifndef PROMPTFORGE_UTIL_HPP
#define PROMPTFORGE_UTIL_HPP

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge::util {

// ---------------------------------------------------------------------------
// Hashing and seed derivation. These are part of the reproducibility
// contract: artifacts and replay oracles depend on the exact constants.
// ---------------------------------------------------------------------------

/// FNV-1a 64-bit over raw bytes.
uint64_t fnv1a64(std::string_view data);

/// FNV-1a 64-bit rendered as 16 lowercase hex digits. Used as the
/// non-cryptographic content hash for assets, taxonomies and indexes.
std::string fnv1a64_hex(std::string_view data);

/// Derives a child seed from (parent, salt): hash-combine followed by the
/// splitmix64 finalizer. Order-independent batch work keys every draw off
/// this so concurrency cannot change outcomes.
uint64_t mix_seed(uint64_t parent, uint64_t salt);

/// Uniform double in [0, 1) using the top 53 bits of one engine draw.
/// Fixed mapping (no distribution object) so replays are portable.
double u01(std::mt19937_64& rng);

/// Uniform index in [0, n) as one engine draw modulo n. n must be > 0.
std::size_t pick_index(std::mt19937_64& rng, std::size_t n);

/// Seeded in-place Fisher-Yates with explicit modulo draws.
template <typename T>
void seeded_shuffle(std::vector<T>& items, uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

/// ASCII-only lowercase; multi-byte UTF-8 sequences pass through untouched.
std::string to_lower_ascii(std::string_view s);

/// Strips ASCII whitespace from both ends.
std::string trim(std::string_view s);

/// Splits on runs of ASCII whitespace; empty tokens never returned.
std::vector<std::string> split_ws(std::string_view s);

/// Number of maximal whitespace-separated tokens.
std::size_t count_words(std::string_view s);

/// Unicode NFC normalization (ICU). Returns the input unchanged if it is
/// not valid UTF-8.
std::string nfc(std::string_view s);

/// trim(nfc(s)) — canonical form for label fields and taxonomy names.
std::string normalize_field(std::string_view s);

/// Replaces every occurrence of `from` in `s`.
std::string replace_all(std::string s, std::string_view from, std::string_view to);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);

/// Write via temp file + rename in the same directory.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// ---------------------------------------------------------------------------
// URLs
// ---------------------------------------------------------------------------

struct HttpUrl {
    std::string host;
    int port = 80;
    std::string path = "/";
};

/// Parses "http://host[:port][/path]". Https is not supported.
HttpUrl parse_http_url(std::string_view url);

}  // namespace promptforge::util

#endif  // PROMPTFORGE_UTIL_HPP
