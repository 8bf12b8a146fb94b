#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace stainforge {

struct EvalRecord {
    std::string annotation_id;
    std::string slide_id;
    std::string lab;
    std::string scanner;
    std::size_t label = 0;
    std::size_t prediction = 0;
};

/// Macro-F1 percentiles, scaled by 100.
struct BootstrapSummary {
    double p05 = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
    std::size_t rounds = 0;
    std::uint64_t seed = 0;
};

/// Unweighted mean of per-class F1 = 2TP / (2TP + FP + FN).
///
/// A class with no labels and no predictions is left out of the mean; a class
/// that is predicted but never labelled scores 0. Throws EmptyInput on no
/// records and InvalidArgument when a label or prediction is >= n_classes.
double macro_f1(std::span<const EvalRecord> records, std::size_t n_classes);

inline constexpr std::size_t kDefaultRounds = 10;

/// Macro-F1 of each bootstrap round, in round order. Round r draws |records|
/// indices with replacement from Rng::derive(seed, r), so the scores do not
/// depend on `threads`.
std::vector<double> bootstrap_scores(std::span<const EvalRecord> records, std::size_t n_classes, std::size_t rounds,
                                     std::uint64_t seed, std::size_t threads = 1);

/// 5th, 50th and 95th percentiles (linear interpolation) of bootstrap_scores.
BootstrapSummary bootstrap(std::span<const EvalRecord> records, std::size_t n_classes,
                           std::size_t rounds = kDefaultRounds, std::uint64_t seed = 0, std::size_t threads = 1);

struct MethodRecord {
    std::string method;
    EvalRecord record;
};

/// Reads `method,annotation_id,slide_id,lab,scanner,label,prediction` (extra
/// columns are ignored). Throws SchemaViolation with file:line context.
std::vector<MethodRecord> read_eval_manifest(const std::filesystem::path& path, std::size_t n_classes);

struct CompareRow {
    std::string lab;
    std::string scanner;
    std::string method;
    std::size_t slides = 0;
    std::size_t annotations = 0;
    BootstrapSummary summary;
    /// Highest p50 within the (lab, scanner) partition; ties are all flagged.
    bool best = false;
};

/// One bootstrap summary per (lab, scanner, method), sorted by those keys.
///
/// Records of a group are ordered by (slide_id, annotation_id) and every group
/// uses the same seed, so methods scored on the same annotations see the same
/// resamples.
std::vector<CompareRow> compare(std::span<const MethodRecord> records, std::size_t n_classes,
                                std::size_t rounds = kDefaultRounds, std::uint64_t seed = 0, std::size_t threads = 1);

/// Header: lab,scanner,method,slides,annotations,p05,p50,p95,best.
/// Percentiles are printed with six decimals.
std::string compare_csv(std::span<const CompareRow> rows);
std::string compare_markdown(std::span<const CompareRow> rows);
/// Inverse of compare_csv.
std::vector<CompareRow> read_compare_csv(const std::filesystem::path& path);

/// Bar chart of p50 per method with p05-p95 whiskers, one panel per partition.
std::string render_svg(std::span<const CompareRow> rows);

/// ICC(A,1): two-way model, absolute agreement, single measurement, on paired
/// per-slide values (one pair per slide, one column per scanner).
///
/// Throws InsufficientPairs below two pairs, ZeroVariance when all values are
/// equal or the denominator vanishes, InvalidArgument on non-finite values.
double icc_consistency(std::span<const std::pair<double, double>> pairs);

/// Reads a CSV whose last two columns are the paired values.
std::vector<std::pair<double, double>> read_pairs(const std::filesystem::path& path);

} // namespace stainforge
