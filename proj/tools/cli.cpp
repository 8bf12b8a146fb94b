#include "cli.hpp"

#include "stainforge/csv.hpp"
#include "stainforge/error.hpp"
#include "stainforge/eval.hpp"
#include "stainforge/icc.hpp"
#include "stainforge/image_io.hpp"
#include "stainforge/pipeline.hpp"
#include "stainforge/stainlib.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <memory>
#include <optional>
#include <thread>

namespace stainforge::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

constexpr const char* kVersion = "stainforge 0.1.0";

/// A semantically invalid command line that CLI11 cannot detect on its own.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Log {
public:
    Log(std::ostream& err, const bool& quiet) : err_(err), quiet_(quiet) {}

    void info(std::string_view event, ojson fields = ojson::object()) const
    {
        if (!quiet_)
            emit("info", event, std::move(fields));
    }
    void warn(std::string_view event, ojson fields = ojson::object()) const
    {
        if (!quiet_)
            emit("warn", event, std::move(fields));
    }
    void error(std::string_view event, ojson fields = ojson::object()) const { emit("error", event, std::move(fields)); }

private:
    void emit(std::string_view level, std::string_view event, ojson fields) const
    {
        ojson line = {{"level", level}, {"event", event}};
        for (auto& [key, value] : fields.items())
            line[key] = value;
        err_ << line.dump() << '\n' << std::flush;
    }

    std::ostream& err_;
    const bool& quiet_;
};

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size())) || !out.flush())
        throw Error(Errc::Io, "cannot write " + path.string());
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// A PNG file, or every PNG directly inside a directory.
std::vector<fs::path> collect_inputs(const fs::path& in)
{
    if (fs::is_directory(in)) {
        auto files = list_png_files(in);
        if (files.empty())
            throw Error(Errc::EmptyInput, "no PNG files in " + in.string());
        return files;
    }
    return {in};
}

std::vector<RgbPatch> read_patches(const std::vector<fs::path>& files)
{
    std::vector<RgbPatch> patches;
    patches.reserve(files.size());
    for (const auto& f : files)
        patches.push_back(read_png(f));
    return patches;
}

ojson stains_json(const StainMatrix& s)
{
    const auto vec = [](const Vec3& v) { return ojson::array({v[0], v[1], v[2]}); };
    return {{"h", vec(s.hematoxylin())}, {"e", vec(s.eosin())}};
}

StainMatrix read_stains(const fs::path& path)
{
    ojson j;
    try {
        j = ojson::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaViolation, path.string() + ": " + e.what());
    }
    const auto column = [&](const char* key) {
        if (!j.is_object() || !j.contains(key) || !j[key].is_array() || j[key].size() != 3)
            throw Error(Errc::SchemaViolation, path.string() + ": '" + key + "' must be an array of 3 numbers");
        Vec3 v{};
        for (std::size_t i = 0; i < 3; ++i) {
            if (!j[key][i].is_number())
                throw Error(Errc::SchemaViolation, path.string() + ": '" + key + "' must be an array of 3 numbers");
            v[i] = j[key][i].get<double>();
        }
        return v;
    };
    try {
        return StainMatrix::from_columns(column("h"), column("e"));
    } catch (const Error& e) {
        if (e.code() != Errc::InvalidArgument)
            throw;
        throw Error(Errc::SchemaViolation, path.string() + ": " + e.message());
    }
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> items;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        const std::size_t end = std::min(text.find(',', begin), text.size());
        if (end > begin)
            items.push_back(text.substr(begin, end - begin));
        begin = end + 1;
    }
    return items;
}

std::size_t resolve_threads(std::size_t flag)
{
    if (flag > 0)
        return flag;
    if (const char* env = std::getenv("STAINFORGE_THREADS"); env && *env) {
        std::size_t n = 0;
        const char* end = env + std::char_traits<char>::length(env);
        const auto [ptr, ec] = std::from_chars(env, end, n);
        if (ec != std::errc() || ptr != end || n == 0)
            throw UsageError("STAINFORGE_THREADS must be a positive integer, got '" + std::string(env) + "'");
        return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the
/// exception of the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn)
{
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < std::min(threads, n); ++t)
            pool.emplace_back(worker);
        worker();
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

struct EstimationFlags {
    double beta = EstimationParams{}.beta;
    double alpha = EstimationParams{}.alpha;
    std::size_t max_pixels = EstimationParams{}.max_pixels;
    double i0 = kDefaultI0;

    void add_to(CLI::App* app)
    {
        app->add_option("--beta", beta, "OD threshold for tissue pixels")->capture_default_str();
        app->add_option("--alpha", alpha, "Extreme-angle percentile")->capture_default_str();
        app->add_option("--max-pixels", max_pixels, "Subsample tissue pixels beyond this count")
            ->capture_default_str();
        app->add_option("--i0", i0, "Background intensity")->capture_default_str();
    }

    EstimationParams params() const
    {
        EstimationParams p;
        p.beta = beta;
        p.alpha = alpha;
        p.max_pixels = max_pixels;
        return p;
    }
};

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Stain and scanner domain augmentation for H&E patches", "stainforge"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    bool quiet = false;
    std::size_t threads_flag = 0;
    app.add_flag("--quiet", quiet, "Suppress informational log lines");
    app.add_option("--threads", threads_flag, "Worker threads (default: STAINFORGE_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
    const Log log(err, quiet);

    // icc-convert
    auto* icc_cmd = app.add_subcommand("icc-convert", "Convert device RGB patches to sRGB with an ICC profile");
    icc_cmd->fallthrough();
    fs::path icc_profile, icc_in, icc_out;
    icc_cmd->add_option("--profile", icc_profile, "Matrix/TRC ICC profile")->required()->check(CLI::ExistingFile);
    icc_cmd->add_option("--in", icc_in, "PNG file or directory of PNGs")->required()->check(CLI::ExistingPath);
    icc_cmd->add_option("--out", icc_out, "Output PNG (or directory for a directory input)")->required();

    // estimate-stains
    auto* est_cmd = app.add_subcommand("estimate-stains", "Estimate slide-level H&E stain vectors");
    est_cmd->fallthrough();
    fs::path est_in, est_out;
    std::uint64_t est_seed = 0;
    EstimationFlags est_flags;
    est_cmd->add_option("--in", est_in, "PNG file or directory of a slide's patches")
        ->required()
        ->check(CLI::ExistingPath);
    est_cmd->add_option("--out", est_out, "Output JSON")->required();
    est_cmd->add_option("--seed", est_seed, "Seed for tissue-pixel subsampling")->capture_default_str();
    est_flags.add_to(est_cmd);

    // build-library
    auto* lib_cmd = app.add_subcommand("build-library", "Build a stain vector library from slide directories");
    lib_cmd->fallthrough();
    fs::path lib_in, lib_meta, lib_out;
    std::uint64_t lib_seed = 0;
    std::string lib_created_at = SlideMeta{}.created_at;
    EstimationFlags lib_flags;
    lib_cmd->add_option("--in", lib_in, "Directory with one sub-directory of PNGs per slide")
        ->required()
        ->check(CLI::ExistingDirectory);
    lib_cmd->add_option("--meta", lib_meta, "CSV: slide_id,lab,scanner,indication[,created_at]")
        ->required()
        ->check(CLI::ExistingFile);
    lib_cmd->add_option("--out", lib_out, "Output JSONL library")->required();
    lib_cmd->add_option("--seed", lib_seed, "Seed for tissue-pixel subsampling")->capture_default_str();
    lib_cmd->add_option("--created-at", lib_created_at, "Timestamp for rows without created_at")
        ->capture_default_str();
    lib_flags.add_to(lib_cmd);

    // augment
    auto* aug_cmd = app.add_subcommand("augment", "Augment patches for training");
    aug_cmd->fallthrough();
    std::string aug_method, aug_targets, aug_policy, aug_st_command;
    std::uint64_t aug_seed = 0;
    fs::path aug_in, aug_out, aug_manifest, aug_config, aug_library, aug_source, aug_profile;
    bool aug_no_identity = false, aug_residual = false;
    std::size_t aug_st_slots = 0;
    aug_cmd->add_option("--method", aug_method, "baseline, icc, sva or st")
        ->check(CLI::IsMember({"baseline", "icc", "sva", "st"}));
    aug_cmd->add_option("--seed", aug_seed, "Seed for all randomness")->required();
    aug_cmd->add_option("--in", aug_in, "PNG file or directory of PNGs")->required()->check(CLI::ExistingPath);
    aug_cmd->add_option("--out", aug_out, "Output directory")->required();
    aug_cmd->add_option("--config", aug_config, "TOML augmentation config")->check(CLI::ExistingFile);
    aug_cmd->add_option("--targets", aug_targets, "Comma-separated target domains");
    aug_cmd->add_option("--manifest", aug_manifest, "Per-patch audit CSV");
    aug_cmd->add_option("--library", aug_library, "Stain vector library (sva)")->check(CLI::ExistingFile);
    aug_cmd->add_option("--source-stains", aug_source, "Source slide stain JSON (sva)")->check(CLI::ExistingFile);
    aug_cmd->add_option("--profile", aug_profile, "Slide ICC profile (icc)")->check(CLI::ExistingFile);
    aug_cmd->add_option("--st-command", aug_st_command, "Adapter command with {in}, {out}, {domain} (st)");
    aug_cmd->add_option("--st-slots", aug_st_slots, "Concurrent adapter processes (st)")
        ->check(CLI::PositiveNumber);
    aug_cmd->add_option("--policy", aug_policy, "Target sampling: uniform-scanner or uniform-record (sva)")
        ->check(CLI::IsMember({"uniform-scanner", "uniform-record"}));
    aug_cmd->add_flag("--no-identity", aug_no_identity, "Do not schedule untransformed patches");
    aug_cmd->add_flag("--preserve-residual", aug_residual, "Keep the off-plane OD residual (sva)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Bootstrap macro-F1 per method, lab and scanner");
    eval_cmd->fallthrough();
    fs::path eval_manifest, eval_out, eval_csv;
    std::size_t eval_classes = 0, eval_rounds = kDefaultRounds;
    std::uint64_t eval_seed = 0;
    eval_cmd->add_option("--manifest", eval_manifest, "CSV: method,annotation_id,slide_id,lab,scanner,label,prediction")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--classes", eval_classes, "Number of classes")->required()->check(CLI::PositiveNumber);
    eval_cmd->add_option("--rounds", eval_rounds, "Bootstrap rounds")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    eval_cmd->add_option("--seed", eval_seed, "Bootstrap seed")->required();
    eval_cmd->add_option("--out", eval_out, "Markdown report (default: standard output)");
    eval_cmd->add_option("--csv", eval_csv, "CSV summary for report-plot");

    // icc-consistency
    auto* cons_cmd = app.add_subcommand("icc-consistency", "ICC(A,1) of paired per-slide values");
    cons_cmd->fallthrough();
    fs::path cons_pairs;
    cons_cmd->add_option("--pairs", cons_pairs, "CSV whose last two columns are the paired values")
        ->required()
        ->check(CLI::ExistingFile);

    // report-plot
    auto* plot_cmd = app.add_subcommand("report-plot", "SVG chart of an eval CSV summary");
    plot_cmd->fallthrough();
    fs::path plot_in, plot_out;
    plot_cmd->add_option("--in", plot_in, "CSV written by eval --csv")->required()->check(CLI::ExistingFile);
    plot_cmd->add_option("--out", plot_out, "Output SVG")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const std::size_t threads = resolve_threads(threads_flag);

        if (icc_cmd->parsed()) {
            const icc::IccProfile profile = icc::load_profile(icc_profile);
            const icc::SrgbTransform transform(profile);
            const bool dir_mode = fs::is_directory(icc_in);
            const auto inputs = collect_inputs(icc_in);
            if (dir_mode)
                fs::create_directories(icc_out);
            std::vector<std::size_t> clipped(inputs.size());
            parallel_for(inputs.size(), threads, [&](std::size_t i) {
                RgbPatch patch = read_png(inputs[i]);
                patch.set_space(DeviceRgb{profile.id});
                const auto result = icc::to_srgb_with_stats(patch, transform);
                write_png(dir_mode ? icc_out / inputs[i].filename() : icc_out, result.patch);
                clipped[i] = result.clipped_pixels;
            });
            std::size_t total_clipped = 0;
            for (const auto c : clipped)
                total_clipped += c;
            log.info("icc-convert", {{"profile", profile.id}, {"patches", inputs.size()},
                                     {"clipped_pixels", total_clipped}});
        } else if (est_cmd->parsed()) {
            const auto patches = read_patches(collect_inputs(est_in));
            SlideMeta meta;
            meta.slide_id = est_in.stem().string();
            Rng rng = Rng::derive(est_seed, 0);
            const auto record = build_record(patches, meta, est_flags.params(), rng, est_flags.i0);
            ojson j = stains_json(record.stains);
            j["pixel_count"] = record.pixel_count;
            write_text(est_out, j.dump(2) + "\n");
            log.info("estimate-stains", {{"patches", patches.size()},
                                         {"pixel_count", record.pixel_count},
                                         {"separation_deg", record.stains.separation_deg()}});
        } else if (lib_cmd->parsed()) {
            const CsvTable meta = read_csv(lib_meta);
            const std::size_t id = meta.column("slide_id"), lab = meta.column("lab"),
                              scanner = meta.column("scanner"), indication = meta.column("indication"),
                              created = meta.column("created_at");
            if (id == std::string::npos || lab == std::string::npos || scanner == std::string::npos ||
                indication == std::string::npos)
                throw Error(Errc::SchemaViolation,
                            lib_meta.string() + ": needs columns slide_id, lab, scanner, indication");
            std::vector<std::optional<StainVectorRecord>> records(meta.rows.size());
            parallel_for(meta.rows.size(), threads, [&](std::size_t i) {
                const auto& row = meta.rows[i];
                SlideMeta m{row[id], row[lab], row[scanner], row[indication],
                            created != std::string::npos && !row[created].empty() ? row[created] : lib_created_at};
                const fs::path dir = lib_in / m.slide_id;
                if (!fs::is_directory(dir))
                    throw Error(Errc::Io, "no patch directory for slide '" + m.slide_id + "' at " + dir.string());
                const auto patches = read_patches(collect_inputs(dir));
                Rng rng = Rng::derive(lib_seed, i);
                try {
                    records[i] = build_record(patches, m, lib_flags.params(), rng, lib_flags.i0);
                } catch (const Error& e) {
                    throw Error(e.code(), "slide '" + m.slide_id + "': " + e.message());
                }
            });
            StainVectorLibrary library;
            for (auto& r : records)
                library.add(std::move(*r));
            save_library(library, lib_out);
            const LibraryStats s = stats(library);
            log.info("build-library", {{"records", s.total}, {"scanners", s.per_scanner}, {"labs", s.per_lab}});
        } else if (aug_cmd->parsed()) {
            AugmentConfig cfg = aug_config.empty() ? AugmentConfig{} : load_augment_config(aug_config);
            if (!aug_method.empty())
                cfg.method = *parse_augment_method(aug_method);
            cfg.seed = aug_seed;
            if (!aug_targets.empty())
                cfg.targets = split_list(aug_targets);
            if (!aug_library.empty())
                cfg.library_path = aug_library;
            if (!aug_profile.empty())
                cfg.profile_path = aug_profile;
            if (!aug_st_command.empty())
                cfg.st_command = aug_st_command;
            if (aug_st_slots > 0)
                cfg.st_slots = aug_st_slots;
            if (aug_no_identity)
                cfg.include_identity = false;
            if (aug_residual)
                cfg.sva.preserve_residual = true;
            if (aug_policy == "uniform-record")
                cfg.policy = SamplingPolicy::UniformRecord;
            else if (aug_policy == "uniform-scanner")
                cfg.policy = SamplingPolicy::UniformScannerThenRecord;

            SlideContext ctx;
            std::shared_ptr<const StainVectorLibrary> library;
            switch (cfg.method) {
            case AugmentMethod::Sva:
                if (cfg.library_path.empty())
                    throw UsageError("--library is required for --method sva");
                if (aug_source.empty())
                    throw UsageError("--source-stains is required for --method sva");
                library = std::make_shared<const StainVectorLibrary>(load_library(cfg.library_path));
                if (cfg.targets.empty())
                    cfg.targets = library->scanners();
                ctx.source = read_stains(aug_source);
                break;
            case AugmentMethod::IccCal:
                if (cfg.profile_path.empty())
                    throw UsageError("--profile is required for --method icc");
                ctx.profile = std::make_shared<const icc::IccProfile>(icc::load_profile(cfg.profile_path));
                break;
            case AugmentMethod::StHook:
                if (cfg.st_command.empty())
                    throw UsageError("--st-command is required for --method st");
                if (cfg.targets.empty())
                    throw UsageError("--targets is required for --method st");
                break;
            case AugmentMethod::Baseline:
                break;
            }

            const Augmenter augmenter(cfg, library);
            const auto inputs = collect_inputs(aug_in);
            const auto rows = augment_files(augmenter, inputs, aug_out, ctx, threads);
            if (!aug_manifest.empty())
                write_manifest(aug_manifest, rows);
            log.info("augment", {{"method", to_string(cfg.method)}, {"patches", rows.size()}, {"seed", cfg.seed}});
        } else if (eval_cmd->parsed()) {
            const auto records = read_eval_manifest(eval_manifest, eval_classes);
            const auto rows = compare(records, eval_classes, eval_rounds, eval_seed, threads);
            const std::string markdown = compare_markdown(rows);
            if (eval_out.empty())
                out << markdown;
            else
                write_text(eval_out, markdown);
            if (!eval_csv.empty())
                write_text(eval_csv, compare_csv(rows));
            log.info("eval", {{"records", records.size()}, {"groups", rows.size()}, {"rounds", eval_rounds}});
        } else if (cons_cmd->parsed()) {
            const auto pairs = read_pairs(cons_pairs);
            const double icc = icc_consistency(pairs);
            out << ojson{{"icc_a1", icc}, {"pairs", pairs.size()}}.dump() << '\n';
        } else if (plot_cmd->parsed()) {
            write_text(plot_out, render_svg(read_compare_csv(plot_in)));
            log.info("report-plot", {{"out", plot_out.string()}});
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        log.error("failed", {{"code", errc_name(e.code())}, {"message", e.message()}});
        return e.code() == Errc::InvalidArgument ? kExitUsage : kExitData;
    } catch (const std::exception& e) {
        log.error("failed", {{"code", "Internal"}, {"message", e.what()}});
        return kExitData;
    }
    return kExitOk;
}

} // namespace stainforge::cli
