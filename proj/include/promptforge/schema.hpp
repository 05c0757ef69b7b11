#ifndef PROMPTFORGE_SCHEMA_HPP
#define PROMPTFORGE_SCHEMA_HPP

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge {

/// Three-level hierarchical frame label: responsible entity, event category,
/// fine-grained instantiation. Fields are stored NFC-normalized and trimmed;
/// comparison is exact on the normalized text (no case folding).
struct FrameLabel {
    std::string actor;
    std::string reason;
    std::string cause;

    bool operator==(const FrameLabel&) const = default;
    bool operator<(const FrameLabel& o) const {
        return std::tie(actor, reason, cause) < std::tie(o.actor, o.reason, o.cause);
    }
};

enum class RenderForm { flat, object, tuple };

struct ReasonNode {
    std::string name;
    std::vector<std::string> causes;
};

struct ActorNode {
    std::string name;
    std::vector<ReasonNode> reasons;
};

/// Immutable label taxonomy. Every root-to-leaf path has exactly three
/// levels; leaf paths are pairwise distinct and their count equals the
/// declared header size. All read operations are safe for concurrent use.
class LabelTaxonomy {
public:
    /// Loads and validates a taxonomy file (see file format in README).
    /// Throws FormatError on malformed input, DataError on duplicate leaf
    /// paths or a header/count mismatch.
    static LabelTaxonomy load(const std::filesystem::path& path);

    /// Builds a taxonomy from in-memory nodes (used by tests and tools).
    static LabelTaxonomy from_nodes(std::vector<ActorNode> actors,
                                    std::string delimiter, std::size_t declared_size);

    /// True iff (actor, reason, cause) is a leaf path. Pure predicate;
    /// normalizes its argument before lookup.
    bool validate(const FrameLabel& label) const;

    /// All leaf paths in depth-first file order.
    const std::vector<FrameLabel>& enumerate() const { return leaves_; }

    /// Parses the flat serialized form ("actor <delim> reason <delim> cause").
    /// Throws FormatError when the split does not yield exactly 3 parts and
    /// InvalidLabelError when the triple is well-formed but not a leaf path.
    FrameLabel parse_flat(std::string_view text) const;

    const std::vector<ActorNode>& actors() const { return actors_; }
    const std::string& delimiter() const { return delimiter_; }
    std::size_t size() const { return leaves_.size(); }

    /// Content hash of the canonical serialized form; stamped into run
    /// artifacts so inference can refuse drifted label spaces.
    const std::string& content_hash() const { return content_hash_; }

    /// Unique level-1 names in file order.
    std::vector<std::string> actor_names() const;
    /// Unique level-2 names in file order (first occurrence wins).
    std::vector<std::string> reason_names() const;

private:
    LabelTaxonomy() = default;
    void finalize(std::size_t declared_size);

    std::vector<ActorNode> actors_;
    std::string delimiter_ = "–";  // en dash, as printed in the flat form
    std::vector<FrameLabel> leaves_;
    std::set<std::array<std::string, 3>> leaf_set_;
    std::string content_hash_;
};

/// Serializes a label. flat = delimiter-joined with single spaces around the
/// delimiter; object = {"actor": ..., "reason": ..., "cause": ...}; tuple =
/// ("...", "...", "..."). Throws Error if a field is empty.
std::string render_label(const FrameLabel& label, RenderForm form,
                         const LabelTaxonomy& taxonomy);

/// Normalizes a raw triple into a FrameLabel (NFC + trim per field).
FrameLabel make_label(std::string_view actor, std::string_view reason,
                      std::string_view cause);

}  // namespace promptforge

#endif  // PROMPTFORGE_SCHEMA_HPP
