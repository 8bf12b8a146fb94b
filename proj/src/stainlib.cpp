#include "stainforge/stainlib.hpp"

#include "stainforge/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

namespace stainforge {

namespace {

bool valid_timestamp(const std::string& s)
{
    static const std::regex iso8601(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:\d{2}))");
    return std::regex_match(s, iso8601);
}

void check_record(const StainVectorRecord& r)
{
    if (r.slide_id.empty())
        throw Error(Errc::SchemaViolation, "record has an empty slide_id");
    if (r.pixel_count < kMinRecordPixels)
        throw Error(Errc::SchemaViolation, "record " + r.slide_id + " has pixel_count " +
                                               std::to_string(r.pixel_count) + " < " +
                                               std::to_string(kMinRecordPixels));
    if (!valid_timestamp(r.created_at))
        throw Error(Errc::SchemaViolation, "record " + r.slide_id + " has non-ISO-8601 created_at '" +
                                               r.created_at + "'");
}

std::string format_g17(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

std::string vec_json(const Vec3& v)
{
    return "[" + format_g17(v[0]) + "," + format_g17(v[1]) + "," + format_g17(v[2]) + "]";
}

} // namespace

void StainVectorLibrary::add(StainVectorRecord record)
{
    check_record(record);
    if (find(record.slide_id))
        throw Error(Errc::DuplicateSlide, "slide '" + record.slide_id + "' is already in the library");
    auto [it, inserted] = by_scanner_.try_emplace(record.scanner);
    it->second.push_back(records_.size());
    if (inserted) {
        scanner_names_.insert(std::lower_bound(scanner_names_.begin(), scanner_names_.end(), record.scanner),
                              record.scanner);
    }
    records_.push_back(std::move(record));
}

const std::vector<std::size_t>& StainVectorLibrary::positions_for_scanner(std::string_view scanner) const
{
    static const std::vector<std::size_t> kNone;
    const auto it = by_scanner_.find(scanner);
    return it == by_scanner_.end() ? kNone : it->second;
}

const StainVectorRecord* StainVectorLibrary::find(std::string_view slide_id) const
{
    const auto it = std::find_if(records_.begin(), records_.end(),
                                 [&](const StainVectorRecord& r) { return r.slide_id == slide_id; });
    return it == records_.end() ? nullptr : &*it;
}

StainVectorRecord build_record(std::span<const RgbPatch> patches, const SlideMeta& meta,
                               const EstimationParams& params, Rng& rng, double i0)
{
    if (patches.empty())
        throw Error(Errc::InvalidArgument, "build_record needs at least one patch");

    std::vector<double> pooled;
    for (const RgbPatch& patch : patches) {
        const OdPatch od = rgb_to_od(patch, i0);
        for (std::size_t i = 0; i < od.pixel_count(); ++i) {
            const auto p = od.pixel(i);
            if (p[0] > params.beta || p[1] > params.beta || p[2] > params.beta)
                pooled.insert(pooled.end(), p.begin(), p.end());
        }
    }

    const StainEstimate estimate = estimate_stain_vectors_detailed(pooled, params, &rng);
    StainVectorRecord record{estimate.stains,  meta.slide_id,           meta.lab, meta.scanner,
                             meta.indication, estimate.pixels_used, meta.created_at};
    check_record(record);
    return record;
}

std::string record_to_jsonl(const StainVectorRecord& r)
{
    std::string line = "{\"slide_id\":" + json_string(r.slide_id);
    line += ",\"lab\":" + json_string(r.lab);
    line += ",\"scanner\":" + json_string(r.scanner);
    line += ",\"indication\":" + json_string(r.indication);
    line += ",\"pixel_count\":" + std::to_string(r.pixel_count);
    line += ",\"h\":" + vec_json(r.stains.hematoxylin());
    line += ",\"e\":" + vec_json(r.stains.eosin());
    line += ",\"created_at\":" + json_string(r.created_at);
    line += "}";
    return line;
}

StainVectorRecord record_from_json(std::string_view line)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaViolation, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw Error(Errc::SchemaViolation, "record is not a JSON object");

    const auto field = [&](const char* key) -> const nlohmann::json& {
        const auto it = j.find(key);
        if (it == j.end())
            throw Error(Errc::SchemaViolation, std::string("missing field '") + key + "'");
        return *it;
    };
    const auto text = [&](const char* key) {
        const auto& v = field(key);
        if (!v.is_string())
            throw Error(Errc::SchemaViolation, std::string("field '") + key + "' must be a string");
        return v.get<std::string>();
    };
    const auto column = [&](const char* key) {
        const auto& v = field(key);
        if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](auto& x) { return x.is_number(); }))
            throw Error(Errc::SchemaViolation, std::string("field '") + key + "' must be an array of 3 numbers");
        Vec3 out{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
        if (std::fabs(norm(out) - 1.0) > 1e-6)
            throw Error(Errc::SchemaViolation, std::string("stain column '") + key + "' has norm " +
                                                   std::to_string(norm(out)) + ", expected 1");
        return out;
    };

    const auto& count = field("pixel_count");
    if (!count.is_number_unsigned() && !(count.is_number_integer() && count.get<long long>() >= 0))
        throw Error(Errc::SchemaViolation, "field 'pixel_count' must be a non-negative integer");

    const Vec3 h = column("h");
    const Vec3 e = column("e");
    StainMatrix stains = [&] {
        try {
            return StainMatrix::from_columns(h, e);
        } catch (const Error& err) {
            throw Error(Errc::SchemaViolation, err.message());
        }
    }();

    StainVectorRecord record{stains,           text("slide_id"),
                             text("lab"),      text("scanner"),
                             text("indication"), count.get<std::size_t>(),
                             text("created_at")};
    check_record(record);
    return record;
}

void save_library(const StainVectorLibrary& library, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
    for (const auto& record : library.records())
        out << record_to_jsonl(record) << '\n';
    if (!out.flush())
        throw Error(Errc::Io, "failed writing " + path.string());
}

StainVectorLibrary load_library(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::Io, "cannot open " + path.string());
    StainVectorLibrary library;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            library.add(record_from_json(line));
        } catch (const Error& e) {
            throw Error(e.code(), path.string() + ":" + std::to_string(line_number) + ": " + e.message());
        }
    }
    return library;
}

LibraryStats stats(const StainVectorLibrary& library)
{
    LibraryStats s;
    for (const auto& r : library.records()) {
        ++s.per_scanner[r.scanner];
        ++s.per_lab[r.lab];
        ++s.per_indication[r.indication];
    }
    s.total = library.size();
    return s;
}

} // namespace stainforge
