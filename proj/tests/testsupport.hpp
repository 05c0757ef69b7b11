#ifndef PROMPTFORGE_TESTSUPPORT_HPP
#define PROMPTFORGE_TESTSUPPORT_HPP

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptforge/corpus.hpp"
#include "promptforge/schema.hpp"

namespace pftest {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(PF_SOURCE_DIR); }
inline fs::path fixture(const std::string& name) { return source_dir() / "fixtures" / name; }
inline fs::path asset_manifest() { return source_dir() / "assets" / "manifest.json"; }
inline fs::path golden(const std::string& name) {
    return source_dir() / "tests" / "golden" / name;
}

/// Unique scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<uint64_t> counter{0};
        path_ = fs::temp_directory_path() /
                ("pf_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter.fetch_add(1)));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }
    fs::path file(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Independent replay-oracle primitives. These restate the documented
// reproducibility contract (FNV-1a 64, hash-combine + splitmix64, top-53-bit
// uniform mapping) without touching the implementation under test.
// ---------------------------------------------------------------------------

inline uint64_t oracle_fnv1a64(std::string_view data) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : data) {
        h ^= static_cast<uint64_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t oracle_mix_seed(uint64_t parent, uint64_t salt) {
    uint64_t x = parent ^ (salt + 0x9e3779b97f4a7c15ull + (parent << 6) + (parent >> 2));
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

inline double oracle_u01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Fixture access (loaded once per test binary)
// ---------------------------------------------------------------------------

inline const promptforge::LabelTaxonomy& fixture_taxonomy() {
    static promptforge::LabelTaxonomy t =
        promptforge::LabelTaxonomy::load(fixture("taxonomy.json"));
    return t;
}

inline const std::vector<promptforge::AnnotatedMessage>& fixture_messages() {
    static std::vector<promptforge::AnnotatedMessage> msgs = [] {
        promptforge::IngestReport report;
        auto m = promptforge::ingest(fixture("dataset.jsonl"), fixture_taxonomy(), report);
        if (!report.rejections.empty())
            throw std::runtime_error("fixture dataset has rejected lines");
        return m;
    }();
    return msgs;
}

// ---------------------------------------------------------------------------
// Mock rule-file builders
// ---------------------------------------------------------------------------

inline std::string tuple_of(const promptforge::FrameLabel& l) {
    return "(\"" + l.actor + "\", \"" + l.reason + "\", \"" + l.cause + "\")";
}

/// One rule per message answering its gold label; matches on the quoted
/// input text so prompts for different messages never cross-match.
inline fs::path write_gold_rules(const TempDir& dir,
                                 const std::vector<promptforge::AnnotatedMessage>& messages,
                                 const std::string& name = "gold_rules.jsonl",
                                 double noise = 0.0) {
    std::string out;
    for (const auto& m : messages) {
        nlohmann::json rule;
        rule["match"] = "ext: \"" + m.text + "\"";
        rule["respond"] = tuple_of(m.label);
        if (noise > 0.0) rule["noise"] = noise;
        out += rule.dump() + "\n";
    }
    out += nlohmann::json{{"fallback", "(\"Customer\", \"Refused Delivery\", \"Late Delivery\")"}}
               .dump() +
           "\n";
    fs::path p = dir.file(name);
    write_file(p, out);
    return p;
}

/// Relevance-coupled rules: gold iff some retrieved exemplar shares the
/// gold actor, else a seeded-uniform enumerated label.
inline fs::path write_relevance_rules(const TempDir& dir,
                                      const std::vector<promptforge::AnnotatedMessage>& messages,
                                      const std::string& name = "relevance_rules.jsonl") {
    std::string out;
    for (const auto& m : messages) {
        nlohmann::json rule;
        rule["match"] = "ext: \"" + m.text + "\"";
        rule["respond"] = "{{if_retrieved_actor=" + m.label.actor + "}}" + tuple_of(m.label) +
                          "{{else}}{{random_label}}{{end}}";
        out += rule.dump() + "\n";
    }
    out += nlohmann::json{{"fallback", "(\"Customer\", \"Refused Delivery\", \"Late Delivery\")"}}
               .dump() +
           "\n";
    fs::path p = dir.file(name);
    write_file(p, out);
    return p;
}

}  // namespace pftest

#endif  // PROMPTFORGE_TESTSUPPORT_HPP
