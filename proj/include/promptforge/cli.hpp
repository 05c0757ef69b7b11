#ifndef PROMPTFORGE_CLI_HPP
#define PROMPTFORGE_CLI_HPP

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "promptforge/gateway.hpp"
#include "promptforge/optimizer.hpp"
#include "promptforge/retrieval.hpp"

namespace promptforge {

/// Resolved run configuration. File paths inside the config file resolve
/// relative to the config file's directory; out_dir resolves relative to
/// the working directory. Flags take precedence over environment variables
/// (PROMPTFORGE_SEED, PROMPTFORGE_OUT), which take precedence over the
/// file.
struct RunConfig {
    std::filesystem::path taxonomy_path;
    std::filesystem::path dataset_path;
    std::filesystem::path library_manifest;
    std::filesystem::path out_dir = "out";

    std::array<double, 3> ratios{0.70, 0.15, 0.15};
    uint64_t split_seed = 42;

    EmbedderConfig embedder;
    std::map<std::string, EndpointSpec> endpoints;
    std::string target_endpoint;
    std::string optimizer_endpoint;

    DecodingConfig decoding;
    OptimizerConfig optimizer;

    static RunConfig load(const std::filesystem::path& path);

    /// Snapshot for the run artifact. Output locations are excluded: they
    /// are not part of the run identity, so reruns into different
    /// directories stay byte-identical.
    nlohmann::json snapshot() const;

    std::filesystem::path split_artifact() const { return out_dir / "split.json"; }
    std::filesystem::path index_artifact() const { return out_dir / "index.json"; }
};

/// CLI exit codes (stable contract).
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitEndpoint = 4;

/// Entry point for the promptforge CLI; `args` excludes the program name.
/// Output streams are injectable for tests.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Formats the printed statistics block (also golden-tested).
std::string format_stats_block(const CorpusStats& st);

}  // namespace promptforge

#endif  // PROMPTFORGE_CLI_HPP
