#pragma once

#include "stainforge/color.hpp"
#include "stainforge/rng.hpp"
#include "stainforge/stain.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stainforge {

/// Identifiers attached to a slide's stain vectors.
struct SlideMeta {
    std::string slide_id;
    std::string lab;
    std::string scanner;
    std::string indication;
    /// ISO-8601 timestamp, e.g. 2024-01-31T12:00:00Z.
    std::string created_at = "1970-01-01T00:00:00Z";
};

struct StainVectorRecord {
    StainMatrix stains;
    std::string slide_id;
    std::string lab;
    std::string scanner;
    std::string indication;
    std::size_t pixel_count = 0;
    std::string created_at;

    bool operator==(const StainVectorRecord&) const = default;
};

inline constexpr std::size_t kMinRecordPixels = 100;

/// Ordered collection of records with unique slide ids and a scanner index.
/// Immutable once shared; concurrent readers are safe.
class StainVectorLibrary {
public:
    /// Throws DuplicateSlide on a repeated slide_id and SchemaViolation when
    /// the record breaks its invariants.
    void add(StainVectorRecord record);

    const std::vector<StainVectorRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    /// Distinct scanners, sorted.
    const std::vector<std::string>& scanners() const noexcept { return scanner_names_; }
    /// Record positions for `scanner`, in insertion order; empty if unknown.
    const std::vector<std::size_t>& positions_for_scanner(std::string_view scanner) const;

    const StainVectorRecord* find(std::string_view slide_id) const;

    bool operator==(const StainVectorLibrary& other) const { return records_ == other.records_; }

private:
    std::vector<StainVectorRecord> records_;
    std::map<std::string, std::vector<std::size_t>, std::less<>> by_scanner_;
    std::vector<std::string> scanner_names_;
};

/// Pools tissue pixels (any OD channel above params.beta) from all patches of
/// one slide and estimates its stain vectors. Throws InsufficientTissue.
StainVectorRecord build_record(std::span<const RgbPatch> patches, const SlideMeta& meta,
                               const EstimationParams& params, Rng& rng, double i0 = kDefaultI0);

/// One JSON object per line, keys in schema order, stain components with 17
/// significant digits. Identical libraries produce identical bytes.
std::string record_to_jsonl(const StainVectorRecord& record);
/// Throws SchemaViolation on a missing/mistyped field, a stain column whose
/// norm differs from 1 by more than 1e-6, or any other broken invariant.
StainVectorRecord record_from_json(std::string_view line);

void save_library(const StainVectorLibrary& library, const std::filesystem::path& path);
StainVectorLibrary load_library(const std::filesystem::path& path);

struct LibraryStats {
    std::map<std::string, std::size_t> per_scanner;
    std::map<std::string, std::size_t> per_lab;
    std::map<std::string, std::size_t> per_indication;
    std::size_t total = 0;

    bool operator==(const LibraryStats&) const = default;
};

LibraryStats stats(const StainVectorLibrary& library);

} // namespace stainforge
