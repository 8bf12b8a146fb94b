#include "stainforge/eval.hpp"

#include "stainforge/csv.hpp"
#include "stainforge/error.hpp"
#include "stainforge/rng.hpp"
#include "stainforge/stats.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace stainforge {

namespace {

struct Counts {
    std::vector<std::size_t> tp, fp, fn;
    explicit Counts(std::size_t n) : tp(n), fp(n), fn(n) {}

    void add(std::size_t label, std::size_t prediction)
    {
        if (label == prediction) {
            ++tp[label];
        } else {
            ++fn[label];
            ++fp[prediction];
        }
    }

    double macro_f1() const
    {
        double sum = 0.0;
        std::size_t present = 0;
        for (std::size_t c = 0; c < tp.size(); ++c) {
            const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
            if (denom == 0)
                continue;
            sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
            ++present;
        }
        return sum / static_cast<double>(present);
    }
};

void check_records(std::span<const EvalRecord> records, std::size_t n_classes)
{
    if (records.empty())
        throw Error(Errc::EmptyInput, "no evaluation records");
    if (n_classes < 1)
        throw Error(Errc::InvalidArgument, "n_classes must be at least 1");
    for (const auto& r : records) {
        if (r.label >= n_classes || r.prediction >= n_classes)
            throw Error(Errc::InvalidArgument, "annotation '" + r.annotation_id + "' has a class outside [0, " +
                                                   std::to_string(n_classes) + ")");
    }
}

std::string format_fixed(double v, int decimals)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

template <typename T>
bool parse_number(const std::string& text, T& out)
{
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end;
}

std::string xml_escape(std::string_view s)
{
    std::string out;
    for (const char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

} // namespace

double macro_f1(std::span<const EvalRecord> records, std::size_t n_classes)
{
    check_records(records, n_classes);
    Counts counts(n_classes);
    for (const auto& r : records)
        counts.add(r.label, r.prediction);
    return counts.macro_f1();
}

std::vector<double> bootstrap_scores(std::span<const EvalRecord> records, std::size_t n_classes, std::size_t rounds,
                                     std::uint64_t seed, std::size_t threads)
{
    check_records(records, n_classes);
    if (rounds < 1)
        throw Error(Errc::InvalidArgument, "rounds must be at least 1");

    std::vector<double> scores(rounds);
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t r = next++; r < rounds; r = next++) {
            Rng rng = Rng::derive(seed, r);
            Counts counts(n_classes);
            for (std::size_t i = 0; i < records.size(); ++i) {
                const auto& rec = records[rng.uniform_index(records.size())];
                counts.add(rec.label, rec.prediction);
            }
            scores[r] = counts.macro_f1();
        }
    };
    const std::size_t count = std::clamp<std::size_t>(threads, 1, rounds);
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < count; ++t)
            pool.emplace_back(worker);
        worker();
    }
    return scores;
}

BootstrapSummary bootstrap(std::span<const EvalRecord> records, std::size_t n_classes, std::size_t rounds,
                           std::uint64_t seed, std::size_t threads)
{
    std::vector<double> scores = bootstrap_scores(records, n_classes, rounds, seed, threads);
    std::sort(scores.begin(), scores.end());
    BootstrapSummary s;
    s.p05 = 100.0 * percentile_sorted(scores, 5.0);
    s.p50 = 100.0 * percentile_sorted(scores, 50.0);
    s.p95 = 100.0 * percentile_sorted(scores, 95.0);
    s.rounds = rounds;
    s.seed = seed;
    return s;
}

std::vector<MethodRecord> read_eval_manifest(const std::filesystem::path& path, std::size_t n_classes)
{
    const CsvTable table = read_csv(path);
    static constexpr const char* kColumns[] = {"method", "annotation_id", "slide_id", "lab",
                                               "scanner", "label", "prediction"};
    std::size_t idx[7];
    for (std::size_t i = 0; i < 7; ++i) {
        idx[i] = table.column(kColumns[i]);
        if (idx[i] == std::string::npos)
            throw Error(Errc::SchemaViolation, path.string() + ": missing column '" + kColumns[i] + "'");
    }

    std::vector<MethodRecord> out;
    out.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = path.string() + ":" + std::to_string(table.lines[r]);
        MethodRecord m;
        m.method = row[idx[0]];
        m.record.annotation_id = row[idx[1]];
        m.record.slide_id = row[idx[2]];
        m.record.lab = row[idx[3]];
        m.record.scanner = row[idx[4]];
        if (m.method.empty())
            throw Error(Errc::SchemaViolation, where + ": empty method");
        if (!parse_number(row[idx[5]], m.record.label) || m.record.label >= n_classes)
            throw Error(Errc::SchemaViolation, where + ": label '" + row[idx[5]] + "' is not a class in [0, " +
                                                   std::to_string(n_classes) + ")");
        if (!parse_number(row[idx[6]], m.record.prediction) || m.record.prediction >= n_classes)
            throw Error(Errc::SchemaViolation, where + ": prediction '" + row[idx[6]] +
                                                   "' is not a class in [0, " + std::to_string(n_classes) + ")");
        out.push_back(std::move(m));
    }
    if (out.empty())
        throw Error(Errc::EmptyInput, path.string() + ": no records");
    return out;
}

std::vector<CompareRow> compare(std::span<const MethodRecord> records, std::size_t n_classes, std::size_t rounds,
                                std::uint64_t seed, std::size_t threads)
{
    if (records.empty())
        throw Error(Errc::EmptyInput, "no evaluation records");
    using Key = std::tuple<std::string, std::string, std::string>;
    std::map<Key, std::vector<EvalRecord>> groups;
    for (const auto& m : records)
        groups[{m.record.lab, m.record.scanner, m.method}].push_back(m.record);

    std::vector<CompareRow> rows;
    for (auto& [key, group] : groups) {
        std::sort(group.begin(), group.end(), [](const EvalRecord& a, const EvalRecord& b) {
            return std::tie(a.slide_id, a.annotation_id) < std::tie(b.slide_id, b.annotation_id);
        });
        std::set<std::string> slides;
        for (const auto& r : group)
            slides.insert(r.slide_id);
        CompareRow row;
        std::tie(row.lab, row.scanner, row.method) = key;
        row.slides = slides.size();
        row.annotations = group.size();
        row.summary = bootstrap(group, n_classes, rounds, seed, threads);
        rows.push_back(std::move(row));
    }

    for (std::size_t begin = 0; begin < rows.size();) {
        std::size_t end = begin;
        double best = -1.0;
        while (end < rows.size() && rows[end].lab == rows[begin].lab && rows[end].scanner == rows[begin].scanner) {
            best = std::max(best, rows[end].summary.p50);
            ++end;
        }
        for (std::size_t i = begin; i < end; ++i)
            rows[i].best = rows[i].summary.p50 == best;
        begin = end;
    }
    return rows;
}

std::string compare_csv(std::span<const CompareRow> rows)
{
    std::string out = "lab,scanner,method,slides,annotations,p05,p50,p95,best\n";
    for (const auto& r : rows) {
        out += csv_escape(r.lab) + ',' + csv_escape(r.scanner) + ',' + csv_escape(r.method) + ',' +
               std::to_string(r.slides) + ',' + std::to_string(r.annotations) + ',' + format_fixed(r.summary.p05, 6) +
               ',' + format_fixed(r.summary.p50, 6) + ',' + format_fixed(r.summary.p95, 6) + ',' +
               (r.best ? "1" : "0") + '\n';
    }
    return out;
}

std::string compare_markdown(std::span<const CompareRow> rows)
{
    std::ostringstream out;
    out << "| Lab | Scanner | Method | Slides | Annotations | Macro-F1 50% [5%, 95%] |\n";
    out << "|---|---|---|---:|---:|---|\n";
    for (const auto& r : rows) {
        std::string cell = format_fixed(r.summary.p50, 1) + " [" + format_fixed(r.summary.p05, 1) + ", " +
                           format_fixed(r.summary.p95, 1) + "]";
        if (r.best)
            cell = "**" + cell + "**";
        out << "| " << r.lab << " | " << r.scanner << " | " << r.method << " | " << r.slides << " | "
            << r.annotations << " | " << cell << " |\n";
    }
    if (!rows.empty())
        out << "\nBootstrap: " << rows.front().summary.rounds << " rounds, seed " << rows.front().summary.seed
            << ". Bold marks the best median per lab and scanner.\n";
    return out.str();
}

std::vector<CompareRow> read_compare_csv(const std::filesystem::path& path)
{
    const CsvTable table = read_csv(path);
    static constexpr const char* kColumns[] = {"lab", "scanner", "method", "slides", "annotations",
                                               "p05", "p50", "p95", "best"};
    std::size_t idx[9];
    for (std::size_t i = 0; i < 9; ++i) {
        idx[i] = table.column(kColumns[i]);
        if (idx[i] == std::string::npos)
            throw Error(Errc::SchemaViolation, path.string() + ": missing column '" + kColumns[i] + "'");
    }
    std::vector<CompareRow> rows;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& f = table.rows[r];
        CompareRow row;
        row.lab = f[idx[0]];
        row.scanner = f[idx[1]];
        row.method = f[idx[2]];
        const bool ok = parse_number(f[idx[3]], row.slides) && parse_number(f[idx[4]], row.annotations) &&
                        parse_number(f[idx[5]], row.summary.p05) && parse_number(f[idx[6]], row.summary.p50) &&
                        parse_number(f[idx[7]], row.summary.p95) && (f[idx[8]] == "0" || f[idx[8]] == "1");
        if (!ok)
            throw Error(Errc::SchemaViolation, path.string() + ":" + std::to_string(table.lines[r]) +
                                                   ": malformed summary row");
        row.best = f[idx[8]] == "1";
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string render_svg(std::span<const CompareRow> rows)
{
    // panels of bars, one per (lab, scanner), laid out left to right
    constexpr double kBar = 28.0, kGap = 10.0, kPanelGap = 40.0;
    constexpr double kLeft = 50.0, kTop = 30.0, kPlot = 240.0, kBottom = 110.0;

    std::vector<std::pair<std::size_t, std::size_t>> panels;
    for (std::size_t begin = 0; begin < rows.size();) {
        std::size_t end = begin + 1;
        while (end < rows.size() && rows[end].lab == rows[begin].lab && rows[end].scanner == rows[begin].scanner)
            ++end;
        panels.emplace_back(begin, end);
        begin = end;
    }
    double width = kLeft;
    for (const auto& [b, e] : panels)
        width += static_cast<double>(e - b) * (kBar + kGap) + kPanelGap;
    const double height = kTop + kPlot + kBottom;
    const auto y_of = [&](double v) { return kTop + kPlot * (1.0 - std::clamp(v, 0.0, 100.0) / 100.0); };
    const auto num = [](double v) { return format_fixed(v, 2); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int tick = 0; tick <= 100; tick += 20) {
        const double y = y_of(tick);
        svg << "<line x1=\"" << num(kLeft - 4) << "\" y1=\"" << num(y) << "\" x2=\"" << num(width) << "\" y2=\""
            << num(y) << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << tick
            << "</text>\n";
    }
    svg << "<text x=\"12\" y=\"" << num(kTop + kPlot / 2) << "\" transform=\"rotate(-90 12 " << num(kTop + kPlot / 2)
        << ")\" text-anchor=\"middle\">Macro-F1</text>\n";

    double x = kLeft + kGap;
    for (const auto& [b, e] : panels) {
        const double panel_start = x;
        for (std::size_t i = b; i < e; ++i) {
            const auto& r = rows[i];
            const double cx = x + kBar / 2;
            svg << "<rect x=\"" << num(x) << "\" y=\"" << num(y_of(r.summary.p50)) << "\" width=\"" << num(kBar)
                << "\" height=\"" << num(kTop + kPlot - y_of(r.summary.p50)) << "\" fill=\""
                << (r.best ? "#4c72b0" : "#a6bddb") << "\"/>\n";
            svg << "<line x1=\"" << num(cx) << "\" y1=\"" << num(y_of(r.summary.p05)) << "\" x2=\"" << num(cx)
                << "\" y2=\"" << num(y_of(r.summary.p95)) << "\" stroke=\"black\"/>\n";
            for (const double v : {r.summary.p05, r.summary.p95})
                svg << "<line x1=\"" << num(cx - 6) << "\" y1=\"" << num(y_of(v)) << "\" x2=\"" << num(cx + 6)
                    << "\" y2=\"" << num(y_of(v)) << "\" stroke=\"black\"/>\n";
            const double ly = kTop + kPlot + 8;
            svg << "<text x=\"" << num(cx) << "\" y=\"" << num(ly) << "\" transform=\"rotate(60 " << num(cx) << " "
                << num(ly) << ")\">" << xml_escape(r.method) << "</text>\n";
            x += kBar + kGap;
        }
        svg << "<text x=\"" << num((panel_start + x - kGap) / 2) << "\" y=\"" << num(kTop - 10)
            << "\" text-anchor=\"middle\">" << xml_escape(rows[b].lab) << " / " << xml_escape(rows[b].scanner)
            << "</text>\n";
        x += kPanelGap;
    }
    svg << "</svg>\n";
    return svg.str();
}

double icc_consistency(std::span<const std::pair<double, double>> pairs)
{
    const std::size_t n = pairs.size();
    if (n < 2)
        throw Error(Errc::InsufficientPairs, "ICC needs at least 2 pairs, got " + std::to_string(n));
    constexpr double k = 2.0;
    const double nd = static_cast<double>(n);

    double grand = 0.0, col_a = 0.0, col_b = 0.0;
    for (const auto& [a, b] : pairs) {
        if (!std::isfinite(a) || !std::isfinite(b))
            throw Error(Errc::InvalidArgument, "ICC values must be finite");
        col_a += a;
        col_b += b;
    }
    grand = (col_a + col_b) / (k * nd);
    col_a /= nd;
    col_b /= nd;

    double ss_total = 0.0, ss_rows = 0.0;
    for (const auto& [a, b] : pairs) {
        const double row_mean = (a + b) / k;
        ss_total += (a - grand) * (a - grand) + (b - grand) * (b - grand);
        ss_rows += k * (row_mean - grand) * (row_mean - grand);
    }
    const double ss_cols = nd * ((col_a - grand) * (col_a - grand) + (col_b - grand) * (col_b - grand));
    const double ss_error = std::max(0.0, ss_total - ss_rows - ss_cols);

    const double ms_rows = ss_rows / (nd - 1.0);
    const double ms_cols = ss_cols / (k - 1.0);
    const double ms_error = ss_error / ((nd - 1.0) * (k - 1.0));
    const double denom = ms_rows + (k - 1.0) * ms_error + k / nd * (ms_cols - ms_error);
    if (ss_total == 0.0 || !(std::fabs(denom) > 0.0))
        throw Error(Errc::ZeroVariance, "paired values have no variance");
    return (ms_rows - ms_error) / denom;
}

std::vector<std::pair<double, double>> read_pairs(const std::filesystem::path& path)
{
    const CsvTable table = read_csv(path);
    if (table.header.size() < 2)
        throw Error(Errc::SchemaViolation, path.string() + ": need at least two columns");
    const std::size_t a = table.header.size() - 2, b = a + 1;
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        std::pair<double, double> p;
        if (!parse_number(table.rows[r][a], p.first) || !parse_number(table.rows[r][b], p.second))
            throw Error(Errc::SchemaViolation,
                        path.string() + ":" + std::to_string(table.lines[r]) + ": values must be numbers");
        pairs.push_back(p);
    }
    return pairs;
}

} // namespace stainforge
