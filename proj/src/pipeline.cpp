#include "stainforge/pipeline.hpp"

#include "stainforge/error.hpp"
#include "stainforge/image_io.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <semaphore>
#include <set>
#include <sstream>
#include <thread>

extern char** environ;

namespace stainforge {

namespace {

constexpr double kLumaR = 0.299;
constexpr double kLumaG = 0.587;
constexpr double kLumaB = 0.114;

double luma(double r, double g, double b) { return kLumaR * r + kLumaG * g + kLumaB * b; }

// Applies `fn(r, g, b) -> (r, g, b)` in double precision to every pixel.
template <typename Fn>
RgbPatch map_pixels(const RgbPatch& patch, Fn&& fn)
{
    RgbPatch out(patch.width(), patch.height(), patch.space());
    const auto src = patch.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); i += 3) {
        const std::array<double, 3> v = fn(double(src[i]), double(src[i + 1]), double(src[i + 2]));
        dst[i] = quantize_u8(v[0]);
        dst[i + 1] = quantize_u8(v[1]);
        dst[i + 2] = quantize_u8(v[2]);
    }
    return out;
}

// HSV with h in degrees [0, 360), s and v in [0, 1]; rgb in [0, 1].
std::array<double, 3> rgb_to_hsv(double r, double g, double b)
{
    const double max = std::max({r, g, b});
    const double min = std::min({r, g, b});
    const double delta = max - min;
    double h = 0.0;
    if (delta > 0.0) {
        if (max == r)
            h = 60.0 * std::fmod((g - b) / delta, 6.0);
        else if (max == g)
            h = 60.0 * ((b - r) / delta + 2.0);
        else
            h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (h < 0.0)
        h += 360.0;
    return {h, max > 0.0 ? delta / max : 0.0, max};
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v)
{
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    std::array<double, 3> rgb{};
    switch (static_cast<int>(std::floor(hp)) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
    }
    const double m = v - c;
    return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

void check_probability(double p, const char* name)
{
    if (!(p >= 0.0 && p <= 1.0))
        throw Error(Errc::InvalidArgument, std::string(name) + " probability must lie in [0, 1]");
}

void check_range(const FactorRange& r, const char* name)
{
    if (r.enabled && !(r.lo >= 0.0 && r.lo < r.hi && std::isfinite(r.hi)))
        throw Error(Errc::InvalidArgument, std::string(name) + " range must satisfy 0 <= lo < hi");
}

std::vector<std::string> split_command(const std::string& command)
{
    std::vector<std::string> words;
    std::string current;
    bool quoted = false;
    bool in_word = false;
    for (const char c : command) {
        if (c == '"') {
            quoted = !quoted;
            in_word = true;
        } else if (!quoted && std::isspace(static_cast<unsigned char>(c))) {
            if (in_word)
                words.push_back(std::move(current));
            current.clear();
            in_word = false;
        } else {
            current.push_back(c);
            in_word = true;
        }
    }
    if (quoted)
        throw Error(Errc::InvalidArgument, "unbalanced quote in adapter command");
    if (in_word)
        words.push_back(std::move(current));
    return words;
}

void replace_all(std::string& s, std::string_view from, std::string_view to)
{
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

// Removes a directory tree on scope exit.
struct TempDir {
    std::filesystem::path path;
    TempDir()
    {
        static std::atomic<std::uint64_t> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("stainforge-st-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

} // namespace

std::string_view to_string(AugmentMethod method)
{
    switch (method) {
    case AugmentMethod::Baseline: return "baseline";
    case AugmentMethod::IccCal: return "icc";
    case AugmentMethod::Sva: return "sva";
    case AugmentMethod::StHook: return "st";
    }
    return "unknown";
}

std::optional<AugmentMethod> parse_augment_method(std::string_view name)
{
    if (name == "baseline")
        return AugmentMethod::Baseline;
    if (name == "icc")
        return AugmentMethod::IccCal;
    if (name == "sva")
        return AugmentMethod::Sva;
    if (name == "st")
        return AugmentMethod::StHook;
    return std::nullopt;
}

void BaselineParams::validate() const
{
    check_probability(hflip_probability, "hflip");
    check_probability(vflip_probability, "vflip");
    check_probability(grayscale_probability, "grayscale");
    for (int r : rotations_deg)
        if (r % 90 != 0)
            throw Error(Errc::InvalidArgument, "rotations must be multiples of 90 degrees");
    if (arbitrary_rotation && !(max_rotation_deg > 0.0 && max_rotation_deg <= 180.0))
        throw Error(Errc::InvalidArgument, "max_rotation_deg must lie in (0, 180]");
    if ((crop_width == 0) != (crop_height == 0))
        throw Error(Errc::InvalidArgument, "crop needs both a width and a height");
    if (!(hue_shift_deg >= 0.0 && hue_shift_deg <= 180.0))
        throw Error(Errc::InvalidArgument, "hue shift must lie in [0, 180] degrees");
    check_range(saturation, "saturation");
    check_range(contrast, "contrast");
    check_range(brightness, "brightness");
    if (!(noise_sigma >= 0.0 && std::isfinite(noise_sigma)))
        throw Error(Errc::InvalidArgument, "noise sigma must be non-negative");
}

bool BaselineParams::any_enabled() const
{
    return hflip_probability > 0 || vflip_probability > 0 || !rotations_deg.empty() || arbitrary_rotation ||
           crop_width > 0 || grayscale_probability > 0 || hue_shift_deg > 0 || saturation.enabled ||
           contrast.enabled || brightness.enabled || noise_sigma > 0;
}

RgbPatch flip_horizontal(const RgbPatch& patch)
{
    RgbPatch out(patch.width(), patch.height(), patch.space());
    for (std::size_t y = 0; y < patch.height(); ++y)
        for (std::size_t x = 0; x < patch.width(); ++x)
            out.set_pixel(patch.width() - 1 - x, y, patch.pixel(x, y));
    return out;
}

RgbPatch flip_vertical(const RgbPatch& patch)
{
    RgbPatch out(patch.width(), patch.height(), patch.space());
    for (std::size_t y = 0; y < patch.height(); ++y)
        for (std::size_t x = 0; x < patch.width(); ++x)
            out.set_pixel(x, patch.height() - 1 - y, patch.pixel(x, y));
    return out;
}

RgbPatch rotate_quarter_turns(const RgbPatch& patch, int quarter_turns)
{
    const int turns = ((quarter_turns % 4) + 4) % 4;
    if (turns == 0)
        return patch;
    const std::size_t w = patch.width(), h = patch.height();
    const bool swap = turns % 2 == 1;
    RgbPatch out(swap ? h : w, swap ? w : h, patch.space());
    for (std::size_t y = 0; y < out.height(); ++y) {
        for (std::size_t x = 0; x < out.width(); ++x) {
            switch (turns) {
            case 1: out.set_pixel(x, y, patch.pixel(w - 1 - y, x)); break;
            case 2: out.set_pixel(x, y, patch.pixel(w - 1 - x, h - 1 - y)); break;
            default: out.set_pixel(x, y, patch.pixel(y, h - 1 - x)); break;
            }
        }
    }
    return out;
}

RgbPatch rotate_bilinear(const RgbPatch& patch, double degrees)
{
    const double theta = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double cx = (static_cast<double>(patch.width()) - 1.0) / 2.0;
    const double cy = (static_cast<double>(patch.height()) - 1.0) / 2.0;
    const auto w = static_cast<long>(patch.width()), h = static_cast<long>(patch.height());
    const auto sample = [&](long x, long y, int ch) -> double {
        if (x < 0 || y < 0 || x >= w || y >= h)
            return 255.0;
        return patch.pixel(static_cast<std::size_t>(x), static_cast<std::size_t>(y))[ch];
    };

    RgbPatch out(patch.width(), patch.height(), patch.space());
    for (std::size_t y = 0; y < patch.height(); ++y) {
        for (std::size_t x = 0; x < patch.width(); ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double sx = cx + c * dx + s * dy;
            const double sy = cy - s * dx + c * dy;
            const auto x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
            const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
            Rgb8 px{};
            for (int ch = 0; ch < 3; ++ch) {
                const double top = sample(x0, y0, ch) * (1 - fx) + sample(x0 + 1, y0, ch) * fx;
                const double bottom = sample(x0, y0 + 1, ch) * (1 - fx) + sample(x0 + 1, y0 + 1, ch) * fx;
                px[ch] = quantize_u8(top * (1 - fy) + bottom * fy);
            }
            out.set_pixel(x, y, px);
        }
    }
    return out;
}

RgbPatch crop(const RgbPatch& patch, std::size_t x, std::size_t y, std::size_t width, std::size_t height)
{
    if (width < 1 || height < 1 || x + width > patch.width() || y + height > patch.height())
        throw Error(Errc::CropLargerThanPatch, "crop " + std::to_string(width) + "x" + std::to_string(height) +
                                                   " at (" + std::to_string(x) + ", " + std::to_string(y) +
                                                   ") does not fit a " + std::to_string(patch.width()) + "x" +
                                                   std::to_string(patch.height()) + " patch");
    RgbPatch out(width, height, patch.space());
    for (std::size_t row = 0; row < height; ++row)
        for (std::size_t col = 0; col < width; ++col)
            out.set_pixel(col, row, patch.pixel(x + col, y + row));
    return out;
}

RgbPatch to_grayscale(const RgbPatch& patch)
{
    return map_pixels(patch, [](double r, double g, double b) {
        const double l = luma(r, g, b);
        return std::array<double, 3>{l, l, l};
    });
}

RgbPatch shift_hue(const RgbPatch& patch, double degrees)
{
    return map_pixels(patch, [degrees](double r, double g, double b) {
        auto hsv = rgb_to_hsv(r / 255.0, g / 255.0, b / 255.0);
        hsv[0] = std::fmod(hsv[0] + degrees, 360.0);
        if (hsv[0] < 0.0)
            hsv[0] += 360.0;
        const auto rgb = hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
        return std::array<double, 3>{rgb[0] * 255.0, rgb[1] * 255.0, rgb[2] * 255.0};
    });
}

RgbPatch adjust_saturation(const RgbPatch& patch, double factor)
{
    return map_pixels(patch, [factor](double r, double g, double b) {
        const double l = luma(r, g, b);
        return std::array<double, 3>{l + factor * (r - l), l + factor * (g - l), l + factor * (b - l)};
    });
}

RgbPatch adjust_contrast(const RgbPatch& patch, double factor)
{
    double sum = 0.0;
    const auto src = patch.data();
    for (std::size_t i = 0; i < src.size(); i += 3)
        sum += luma(src[i], src[i + 1], src[i + 2]);
    const double mean = sum / static_cast<double>(patch.pixel_count());
    return map_pixels(patch, [factor, mean](double r, double g, double b) {
        return std::array<double, 3>{mean + factor * (r - mean), mean + factor * (g - mean),
                                     mean + factor * (b - mean)};
    });
}

RgbPatch adjust_brightness(const RgbPatch& patch, double factor)
{
    return map_pixels(patch, [factor](double r, double g, double b) {
        return std::array<double, 3>{r * factor, g * factor, b * factor};
    });
}

RgbPatch add_gaussian_noise(const RgbPatch& patch, double sigma, Rng& rng)
{
    return map_pixels(patch, [sigma, &rng](double r, double g, double b) {
        const double nr = rng.normal(), ng = rng.normal(), nb = rng.normal();
        return std::array<double, 3>{r + sigma * nr, g + sigma * ng, b + sigma * nb};
    });
}

RgbPatch apply_baseline(const RgbPatch& patch, const BaselineParams& p, Rng& rng)
{
    p.validate();
    RgbPatch out = patch;
    if (p.hflip_probability > 0.0 && rng.bernoulli(p.hflip_probability))
        out = flip_horizontal(out);
    if (p.vflip_probability > 0.0 && rng.bernoulli(p.vflip_probability))
        out = flip_vertical(out);
    if (p.arbitrary_rotation) {
        out = rotate_bilinear(out, rng.uniform(-p.max_rotation_deg, p.max_rotation_deg));
    } else if (!p.rotations_deg.empty()) {
        const int degrees = p.rotations_deg[rng.uniform_index(p.rotations_deg.size())];
        out = rotate_quarter_turns(out, degrees / 90);
    }
    if (p.crop_width > 0) {
        if (p.crop_width > out.width() || p.crop_height > out.height())
            throw Error(Errc::CropLargerThanPatch, "crop " + std::to_string(p.crop_width) + "x" +
                                                       std::to_string(p.crop_height) + " exceeds patch " +
                                                       std::to_string(out.width()) + "x" +
                                                       std::to_string(out.height()));
        const auto x = static_cast<std::size_t>(rng.uniform_index(out.width() - p.crop_width + 1));
        const auto y = static_cast<std::size_t>(rng.uniform_index(out.height() - p.crop_height + 1));
        out = crop(out, x, y, p.crop_width, p.crop_height);
    }
    if (p.grayscale_probability > 0.0 && rng.bernoulli(p.grayscale_probability))
        out = to_grayscale(out);
    if (p.hue_shift_deg > 0.0)
        out = shift_hue(out, rng.uniform(-p.hue_shift_deg, p.hue_shift_deg));
    if (p.saturation.enabled)
        out = adjust_saturation(out, rng.uniform(p.saturation.lo, p.saturation.hi));
    if (p.contrast.enabled)
        out = adjust_contrast(out, rng.uniform(p.contrast.lo, p.contrast.hi));
    if (p.brightness.enabled)
        out = adjust_brightness(out, rng.uniform(p.brightness.lo, p.brightness.hi));
    if (p.noise_sigma > 0.0)
        out = add_gaussian_noise(out, p.noise_sigma, rng);
    return out;
}

std::vector<std::size_t> schedule_domains(std::size_t n_patches, std::size_t domain_count, Rng& rng)
{
    if (domain_count < 1)
        throw Error(Errc::InvalidArgument, "at least one domain is required");
    std::vector<std::size_t> order(domain_count);
    for (std::size_t i = 0; i < domain_count; ++i)
        order[i] = i;
    rng.shuffle(std::span(order));

    std::vector<std::size_t> assignment(n_patches);
    for (std::size_t i = 0; i < n_patches; ++i)
        assignment[i] = order[i % domain_count];
    rng.shuffle(std::span(assignment));
    return assignment;
}

RgbPatch apply_st_adapter(const RgbPatch& patch, const std::string& command_template, std::string_view target_domain)
{
    const TempDir dir;
    const auto in_path = dir.path / "in.png";
    const auto out_path = dir.path / "out.png";
    write_png(in_path, patch);

    std::vector<std::string> words = split_command(command_template);
    if (words.empty())
        throw Error(Errc::StAdapterFailure, "empty adapter command");
    for (auto& w : words) {
        replace_all(w, "{in}", in_path.string());
        replace_all(w, "{out}", out_path.string());
        replace_all(w, "{domain}", target_domain);
    }
    std::vector<char*> argv;
    for (auto& w : words)
        argv.push_back(w.data());
    argv.push_back(nullptr);

    // keep the adapter's stdout away from ours
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, STDERR_FILENO, STDOUT_FILENO);
    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0)
        throw Error(Errc::StAdapterFailure, "cannot start '" + words[0] + "': " + std::strerror(rc));

    int status = 0;
    while (::waitpid(pid, &status, 0) < 0) {
        if (errno != EINTR)
            throw Error(Errc::StAdapterFailure, "waitpid failed for '" + words[0] + "'");
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw Error(Errc::StAdapterFailure, "'" + words[0] + "' exited with status " +
                                                std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
    if (!std::filesystem::exists(out_path))
        throw Error(Errc::StAdapterFailure, "'" + words[0] + "' did not write an output image");

    RgbPatch result = [&] {
        try {
            return read_png(out_path);
        } catch (const Error& e) {
            throw Error(Errc::StAdapterFailure, e.message());
        }
    }();
    if (result.width() != patch.width() || result.height() != patch.height())
        throw Error(Errc::StAdapterFailure, "adapter output is " + std::to_string(result.width()) + "x" +
                                                std::to_string(result.height()) + ", expected " +
                                                std::to_string(patch.width()) + "x" +
                                                std::to_string(patch.height()));
    result.set_space(Unspecified{});
    return result;
}

void AugmentConfig::validate() const
{
    if ((method == AugmentMethod::Sva || method == AugmentMethod::StHook) && targets.empty())
        throw Error(Errc::InvalidArgument, "method " + std::string(to_string(method)) + " needs at least one target");
    if (method == AugmentMethod::StHook && st_command.empty())
        throw Error(Errc::InvalidArgument, "method st needs an adapter command");
    if (!(sva.i0 > 0.0))
        throw Error(Errc::InvalidArgument, "i0 must be positive");
    if (st_slots < 1)
        throw Error(Errc::InvalidArgument, "st_slots must be at least 1");
    baseline.validate();
}

std::vector<std::string> AugmentConfig::domains() const
{
    std::vector<std::string> out = targets;
    if (include_identity)
        out.emplace_back(kIdentityDomain);
    return out;
}

AugmentConfig parse_augment_config(std::string_view toml_text)
{
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        throw Error(Errc::InvalidArgument, std::string("config: ") + std::string(e.description()));
    }

    const auto reject_unknown = [](const toml::table& table, std::initializer_list<std::string_view> known,
                                   const std::string& where) {
        for (const auto& [key, value] : table) {
            if (std::find(known.begin(), known.end(), key.str()) == known.end())
                throw Error(Errc::InvalidArgument, "config: unknown key '" + where + std::string(key.str()) + "'");
        }
    };
    const auto number = [](const toml::node& node, const std::string& key) {
        if (auto v = node.value<double>())
            return *v;
        throw Error(Errc::InvalidArgument, "config: '" + key + "' must be a number");
    };
    const auto range = [&](const toml::node& node, const std::string& key) {
        const auto* arr = node.as_array();
        if (!arr || arr->size() != 2)
            throw Error(Errc::InvalidArgument, "config: '" + key + "' must be [lo, hi]");
        return FactorRange::between(number(*arr->get(0), key), number(*arr->get(1), key));
    };

    reject_unknown(root,
                   {"method", "targets", "include_identity", "seed", "library", "profile", "st_command", "st_slots",
                    "policy", "sva", "baseline"},
                   "");

    AugmentConfig cfg;
    if (auto method = root["method"].value<std::string>()) {
        const auto parsed = parse_augment_method(*method);
        if (!parsed)
            throw Error(Errc::InvalidArgument, "config: unknown method '" + *method + "'");
        cfg.method = *parsed;
    }
    if (const auto* targets = root["targets"].as_array()) {
        for (const auto& t : *targets) {
            const auto name = t.value<std::string>();
            if (!name)
                throw Error(Errc::InvalidArgument, "config: targets must be strings");
            cfg.targets.push_back(*name);
        }
    }
    cfg.include_identity = root["include_identity"].value_or(cfg.include_identity);
    if (auto seed = root["seed"].value<std::int64_t>())
        cfg.seed = static_cast<std::uint64_t>(*seed);
    if (auto lib = root["library"].value<std::string>())
        cfg.library_path = *lib;
    if (auto profile = root["profile"].value<std::string>())
        cfg.profile_path = *profile;
    cfg.st_command = root["st_command"].value_or(std::string{});
    if (auto slots = root["st_slots"].value<std::int64_t>())
        cfg.st_slots = static_cast<std::size_t>(std::max<std::int64_t>(*slots, 0));
    if (auto policy = root["policy"].value<std::string>()) {
        if (*policy == "uniform-scanner")
            cfg.policy = SamplingPolicy::UniformScannerThenRecord;
        else if (*policy == "uniform-record")
            cfg.policy = SamplingPolicy::UniformRecord;
        else
            throw Error(Errc::InvalidArgument, "config: unknown policy '" + *policy + "'");
    }

    if (const auto* sva = root["sva"].as_table()) {
        reject_unknown(*sva, {"i0", "preserve_residual", "beta", "alpha"}, "sva.");
        if (const auto* n = sva->get("i0"))
            cfg.sva.i0 = number(*n, "sva.i0");
        cfg.sva.preserve_residual = (*sva)["preserve_residual"].value_or(false);
        if (const auto* n = sva->get("beta"))
            cfg.sva.estimation.beta = number(*n, "sva.beta");
        if (const auto* n = sva->get("alpha"))
            cfg.sva.estimation.alpha = number(*n, "sva.alpha");
    }

    if (const auto* base = root["baseline"].as_table()) {
        reject_unknown(*base,
                       {"hflip", "vflip", "rotations", "arbitrary_rotation", "max_rotation_deg", "crop", "grayscale",
                        "hue", "saturation", "contrast", "brightness", "noise_sigma"},
                       "baseline.");
        auto& b = cfg.baseline;
        if (const auto* n = base->get("hflip"))
            b.hflip_probability = number(*n, "baseline.hflip");
        if (const auto* n = base->get("vflip"))
            b.vflip_probability = number(*n, "baseline.vflip");
        if (const auto* rotations = (*base)["rotations"].as_array()) {
            for (const auto& r : *rotations) {
                const auto deg = r.value<std::int64_t>();
                if (!deg)
                    throw Error(Errc::InvalidArgument, "config: baseline.rotations must be integers");
                b.rotations_deg.push_back(static_cast<int>(*deg));
            }
        }
        b.arbitrary_rotation = (*base)["arbitrary_rotation"].value_or(false);
        if (const auto* n = base->get("max_rotation_deg"))
            b.max_rotation_deg = number(*n, "baseline.max_rotation_deg");
        if (const auto* size = (*base)["crop"].as_array()) {
            const auto w = size->size() == 2 ? size->get(0)->value<std::int64_t>() : std::nullopt;
            const auto h = size->size() == 2 ? size->get(1)->value<std::int64_t>() : std::nullopt;
            if (!w || !h || *w < 1 || *h < 1)
                throw Error(Errc::InvalidArgument, "config: baseline.crop must be [width, height]");
            b.crop_width = static_cast<std::size_t>(*w);
            b.crop_height = static_cast<std::size_t>(*h);
        }
        if (const auto* n = base->get("grayscale"))
            b.grayscale_probability = number(*n, "baseline.grayscale");
        if (const auto* n = base->get("hue"))
            b.hue_shift_deg = number(*n, "baseline.hue");
        if (const auto* n = base->get("saturation"))
            b.saturation = range(*n, "baseline.saturation");
        if (const auto* n = base->get("contrast"))
            b.contrast = range(*n, "baseline.contrast");
        if (const auto* n = base->get("brightness"))
            b.brightness = range(*n, "baseline.brightness");
        if (const auto* n = base->get("noise_sigma"))
            b.noise_sigma = number(*n, "baseline.noise_sigma");
    }
    return cfg;
}

AugmentConfig load_augment_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::Io, "cannot open config " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    return parse_augment_config(text.str());
}

struct Augmenter::AdapterSlots {
    explicit AdapterSlots(std::size_t n) : semaphore(static_cast<std::ptrdiff_t>(std::min<std::size_t>(n, 64))) {}
    std::counting_semaphore<64> semaphore;
};

Augmenter::Augmenter(AugmentConfig cfg, std::shared_ptr<const StainVectorLibrary> library)
    : cfg_(std::move(cfg)), library_(std::move(library)), slots_(std::make_unique<AdapterSlots>(cfg_.st_slots))
{
    cfg_.validate();
    if (cfg_.method == AugmentMethod::Sva) {
        if (!library_) {
            if (cfg_.library_path.empty())
                throw Error(Errc::InvalidArgument, "method sva needs a stain vector library");
            library_ = std::make_shared<const StainVectorLibrary>(load_library(cfg_.library_path));
        }
        if (library_->empty())
            throw Error(Errc::EmptyLibrary, "stain vector library is empty");
        for (const auto& target : cfg_.targets) {
            if (library_->positions_for_scanner(target).empty())
                throw Error(Errc::InvalidArgument, "no library records for target scanner '" + target + "'");
        }
    }
}

Augmenter::~Augmenter() = default;

RgbPatch Augmenter::method_transform(const RgbPatch& patch, const SlideContext& ctx, Rng& rng,
                                     AugmentResult& result) const
{
    switch (cfg_.method) {
    case AugmentMethod::Baseline:
        return patch;
    case AugmentMethod::IccCal: {
        if (!ctx.profile)
            throw Error(Errc::InvalidArgument, "method icc needs the slide's ICC profile");
        result.domain = "srgb";
        return icc::to_srgb(patch, *ctx.profile);
    }
    case AugmentMethod::Sva: {
        if (!ctx.source)
            throw Error(Errc::InvalidArgument, "method sva needs the slide's source stain matrix");
        if (ctx.domain == kIdentityDomain) {
            result.domain = kIdentityDomain;
            return patch;
        }
        const StainVectorRecord* target = nullptr;
        if (ctx.domain.empty()) {
            target = &sample_target(*library_, rng, cfg_.policy);
        } else {
            const auto& positions = library_->positions_for_scanner(ctx.domain);
            if (positions.empty())
                throw Error(Errc::InvalidArgument, "no library records for scanner '" + ctx.domain + "'");
            target = &library_->records()[positions[rng.uniform_index(positions.size())]];
        }
        result.domain = target->scanner;
        result.target_slide = target->slide_id;
        return sva_transform(patch, *ctx.source, target->stains, cfg_.sva);
    }
    case AugmentMethod::StHook: {
        std::string domain = ctx.domain.empty() ? cfg_.targets[rng.uniform_index(cfg_.targets.size())] : ctx.domain;
        result.domain = domain;
        if (domain == kIdentityDomain)
            return patch;
        slots_->semaphore.acquire();
        struct Release {
            std::counting_semaphore<64>& s;
            ~Release() { s.release(); }
        } release{slots_->semaphore};
        return apply_st_adapter(patch, cfg_.st_command, domain);
    }
    }
    return patch;
}

AugmentResult Augmenter::augment(const RgbPatch& patch, const SlideContext& ctx, std::uint64_t patch_index) const
{
    const Rng base = Rng::derive(cfg_.seed, patch_index);
    Rng method_rng = base.split(0);
    Rng baseline_rng = base.split(1);

    AugmentResult result{patch, {}, {}};
    result.patch = method_transform(patch, ctx, method_rng, result);
    result.patch = apply_baseline(result.patch, cfg_.baseline, baseline_rng);
    return result;
}

RgbPatch Augmenter::infer(const RgbPatch& patch, const SlideContext& ctx) const
{
    if (cfg_.method != AugmentMethod::IccCal)
        return patch;
    if (!ctx.profile)
        throw Error(Errc::InvalidArgument, "method icc needs the slide's ICC profile");
    return icc::to_srgb(patch, *ctx.profile);
}

AugmentResult augment(const RgbPatch& patch, const SlideContext& ctx, const AugmentConfig& cfg,
                      std::uint64_t patch_index)
{
    return Augmenter(cfg).augment(patch, ctx, patch_index);
}

std::vector<ManifestRow> augment_files(const Augmenter& augmenter, const std::vector<std::filesystem::path>& inputs,
                                       const std::filesystem::path& out_dir, const SlideContext& ctx,
                                       std::size_t threads)
{
    const AugmentConfig& cfg = augmenter.config();
    std::filesystem::create_directories(out_dir);

    const bool scheduled = cfg.method == AugmentMethod::Sva || cfg.method == AugmentMethod::StHook;
    const std::vector<std::string> domains = cfg.domains();
    std::vector<std::size_t> assignment;
    if (scheduled) {
        Rng schedule_rng = Rng::derive(cfg.seed, kScheduleStream);
        assignment = schedule_domains(inputs.size(), domains.size(), schedule_rng);
    }

    std::vector<ManifestRow> rows(inputs.size());
    std::vector<std::exception_ptr> errors(inputs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};

    const auto worker = [&] {
        for (std::size_t i = next++; i < inputs.size() && !failed; i = next++) {
            try {
                RgbPatch patch = read_png(inputs[i]);
                SlideContext local = ctx;
                if (scheduled)
                    local.domain = domains[assignment[i]];
                if (ctx.profile)
                    patch.set_space(DeviceRgb{ctx.profile->id});
                AugmentResult result = augmenter.augment(patch, local, i);
                const auto name = inputs[i].filename();
                write_png(out_dir / name, result.patch);
                rows[i] = {i, name.string(), std::string(to_string(cfg.method)), result.domain,
                           result.target_slide, Rng::derive(cfg.seed, i).key()};
            } catch (...) {
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };

    const std::size_t count = std::max<std::size_t>(1, std::min(threads, inputs.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < count; ++t)
            pool.emplace_back(worker);
        worker();
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
    out << "patch_index,file,method,domain,target_slide,patch_seed\n";
    for (const auto& r : rows)
        out << r.patch_index << ',' << r.file << ',' << r.method << ',' << r.domain << ',' << r.target_slide << ','
            << r.seed << '\n';
    if (!out.flush())
        throw Error(Errc::Io, "failed writing " + path.string());
}

} // namespace stainforge
