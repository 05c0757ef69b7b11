#include "promptforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/util.hpp"

namespace promptforge {

using nlohmann::json;
namespace util = promptforge::util;

std::vector<AnnotatedMessage> ingest(const std::filesystem::path& path,
                                     const LabelTaxonomy& taxonomy, IngestReport& report) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset: " + path.string());

    std::vector<AnnotatedMessage> out;
    std::set<std::string> seen_ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error&) {
            report.rejections.push_back({lineno, "malformed JSON"});
            continue;
        }
        if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string() ||
            !rec.contains("text") || !rec["text"].is_string()) {
            report.rejections.push_back({lineno, "missing id/text fields"});
            continue;
        }
        AnnotatedMessage m;
        m.id = rec["id"].get<std::string>();
        m.text = rec["text"].get<std::string>();
        if (m.id.empty() || util::trim(m.text).empty()) {
            report.rejections.push_back({lineno, "empty id or text"});
            continue;
        }
        try {
            if (rec.contains("label")) {
                if (!rec["label"].is_string()) {
                    report.rejections.push_back({lineno, "label must be a string"});
                    continue;
                }
                m.label = taxonomy.parse_flat(rec["label"].get<std::string>());
            } else if (rec.contains("actor") && rec.contains("reason") && rec.contains("cause")) {
                if (!rec["actor"].is_string() || !rec["reason"].is_string() ||
                    !rec["cause"].is_string()) {
                    report.rejections.push_back({lineno, "label fields must be strings"});
                    continue;
                }
                m.label = make_label(rec["actor"].get<std::string>(),
                                     rec["reason"].get<std::string>(),
                                     rec["cause"].get<std::string>());
                if (!taxonomy.validate(m.label)) {
                    report.rejections.push_back({lineno, "label not in taxonomy: " + m.label.actor +
                                                             " / " + m.label.reason + " / " +
                                                             m.label.cause});
                    continue;
                }
            } else {
                report.rejections.push_back({lineno, "missing label fields"});
                continue;
            }
        } catch (const FormatError& e) {
            report.rejections.push_back({lineno, e.what()});
            continue;
        } catch (const InvalidLabelError& e) {
            report.rejections.push_back({lineno, std::string("label not in taxonomy: ") + e.what()});
            continue;
        }
        if (!seen_ids.insert(m.id).second)
            throw DataError("dataset: duplicate id '" + m.id + "' at line " +
                            std::to_string(lineno));
        out.push_back(std::move(m));
    }
    return out;
}

DatasetSplit split(const std::vector<AnnotatedMessage>& messages,
                   const std::array<double, 3>& ratios, uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split: ratios must sum to 1, got " + std::to_string(sum));
    for (double r : ratios)
        if (r < 0.0) throw ConfigError("split: negative ratio");
    const std::size_t n = messages.size();
    if (n < 3) throw DataError("split: need at least 3 messages, got " + std::to_string(n));

    std::vector<std::string> ids;
    ids.reserve(n);
    for (const auto& m : messages) ids.push_back(m.id);
    util::seeded_shuffle(ids, seed);

    // Tiny epsilon absorbs binary-representation error in the products
    // (1500 * 0.70 must cut at exactly 1050).
    auto cut = [n](double r) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
    };
    std::size_t n_train = cut(ratios[0]);
    std::size_t n_val = cut(ratios[1]);
    if (n_train + n_val > n) throw DataError("split: cut sizes exceed corpus");

    DatasetSplit s;
    s.seed = seed;
    s.ratios = ratios;
    s.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                     ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    return s;
}

CorpusStats stats(const std::vector<AnnotatedMessage>& messages) {
    if (messages.empty()) throw DataError("stats: empty corpus");
    CorpusStats st;
    st.count = messages.size();
    st.min_len = std::numeric_limits<std::size_t>::max();
    std::size_t total = 0;
    for (const auto& m : messages) {
        std::size_t w = util::count_words(m.text);
        total += w;
        st.max_len = std::max(st.max_len, w);
        st.min_len = std::min(st.min_len, w);
        if (w > 10) ++st.over_10;
    }
    st.mean_len = static_cast<double>(total) / static_cast<double>(st.count);
    return st;
}

void save_split(const DatasetSplit& s, const std::filesystem::path& path) {
    json doc;
    doc["seed"] = s.seed;
    doc["ratios"] = {s.ratios[0], s.ratios[1], s.ratios[2]};
    doc["train_ids"] = s.train_ids;
    doc["val_ids"] = s.val_ids;
    doc["test_ids"] = s.test_ids;
    util::write_file_atomic(path, doc.dump(2) + "\n");
}

DatasetSplit load_split(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(util::read_file(path));
    } catch (const json::parse_error& e) {
        throw FormatError("split artifact: not valid JSON (" + std::string(e.what()) + ")");
    }
    DatasetSplit s;
    try {
        s.seed = doc.at("seed").get<uint64_t>();
        auto r = doc.at("ratios");
        s.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
        s.train_ids = doc.at("train_ids").get<std::vector<std::string>>();
        s.val_ids = doc.at("val_ids").get<std::vector<std::string>>();
        s.test_ids = doc.at("test_ids").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError("split artifact: bad shape (" + std::string(e.what()) + ")");
    }
    return s;
}

void save_ingest_report(const IngestReport& r, const std::filesystem::path& path) {
    std::string out;
    for (const auto& rej : r.rejections) {
        json rec;
        rec["line"] = rej.line;
        rec["error"] = rej.error;
        out += rec.dump() + "\n";
    }
    util::write_file_atomic(path, out);
}

std::string serialize_message(const AnnotatedMessage& m) {
    json rec;
    rec["id"] = m.id;
    rec["text"] = m.text;
    rec["actor"] = m.label.actor;
    rec["reason"] = m.label.reason;
    rec["cause"] = m.label.cause;
    return rec.dump();
}

}  // namespace promptforge
