#ifndef PROMPTFORGE_CORPUS_HPP
#define PROMPTFORGE_CORPUS_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "promptforge/schema.hpp"

namespace promptforge {

struct AnnotatedMessage {
    std::string id;
    std::string text;
    FrameLabel label;
};

/// Per-line rejection from ingestion. Rejected records never abort the run;
/// they are reported so dirty exports stay auditable.
struct IngestRejection {
    int line = 0;
    std::string error;
};

struct IngestReport {
    std::vector<IngestRejection> rejections;
};

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    uint64_t seed = 0;
    std::array<double, 3> ratios{0.7, 0.15, 0.15};
};

struct CorpusStats {
    std::size_t count = 0;
    double mean_len = 0.0;   // words, full precision; rounded only at display
    std::size_t max_len = 0;
    std::size_t min_len = 0;
    std::size_t over_10 = 0;  // sentences strictly longer than 10 words
};

/// Reads a line-delimited dataset. Each line is a JSON record with "id",
/// "text" and either separate "actor"/"reason"/"cause" keys or a flat
/// "label" string. Records that fail to parse or carry labels outside the
/// taxonomy are rejected into `report` with their 1-based line number.
/// Duplicate ids abort with DataError. Input order is preserved.
std::vector<AnnotatedMessage> ingest(const std::filesystem::path& path,
                                     const LabelTaxonomy& taxonomy, IngestReport& report);

/// Deterministic seeded split. Ids are shuffled by an explicit Fisher-Yates
/// permutation of mt19937_64 draws (j = rng() % (i+1)) and cut at
/// |train| = floor(n*r_train), |val| = floor(n*r_val), remainder to test.
/// Ratios must sum to 1 within 1e-9 and n must be >= 3.
DatasetSplit split(const std::vector<AnnotatedMessage>& messages,
                   const std::array<double, 3>& ratios, uint64_t seed);

/// Word counts use maximal whitespace-separated tokens.
CorpusStats stats(const std::vector<AnnotatedMessage>& messages);

/// Split artifact round-trip (JSON file with seed, ratios and id lists).
void save_split(const DatasetSplit& s, const std::filesystem::path& path);
DatasetSplit load_split(const std::filesystem::path& path);

/// Ingestion report as line-delimited {"line": n, "error": "..."} records.
void save_ingest_report(const IngestReport& r, const std::filesystem::path& path);

/// Serializes one message back to its dataset line form (actor/reason/cause
/// keys). Accepted records re-serialize to their source line modulo field
/// ordering.
std::string serialize_message(const AnnotatedMessage& m);

}  // namespace promptforge

#endif  // PROMPTFORGE_CORPUS_HPP
