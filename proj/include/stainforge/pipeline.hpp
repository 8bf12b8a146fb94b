#pragma once

#include "stainforge/color.hpp"
#include "stainforge/icc.hpp"
#include "stainforge/rng.hpp"
#include "stainforge/stain.hpp"
#include "stainforge/stainlib.hpp"
#include "stainforge/sva.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stainforge {

enum class AugmentMethod { Baseline, IccCal, Sva, StHook };

/// CLI spelling: baseline, icc, sva, st.
std::string_view to_string(AugmentMethod method);
std::optional<AugmentMethod> parse_augment_method(std::string_view name);

/// Scheduling bucket that leaves the patch untransformed.
inline constexpr std::string_view kIdentityDomain = "identity";

/// Closed factor interval; lo < hi when enabled.
struct FactorRange {
    double lo = 1.0;
    double hi = 1.0;
    bool enabled = false;

    static FactorRange between(double lo, double hi) { return {lo, hi, true}; }
};

/// Baseline augmentations. Everything is off by default.
///
/// Applied in a fixed order: horizontal flip, vertical flip, rotation, crop,
/// grayscale, hue, saturation, contrast, brightness, noise. Each enabled step
/// draws its random parameters from the generator in that order.
struct BaselineParams {
    double hflip_probability = 0.0;
    double vflip_probability = 0.0;
    /// Multiples of 90 degrees drawn uniformly; empty disables rotation.
    std::vector<int> rotations_deg;
    /// When set, rotation is a uniform angle in [-max_rotation_deg,
    /// max_rotation_deg] with bilinear resampling and white fill instead.
    bool arbitrary_rotation = false;
    double max_rotation_deg = 0.0;
    /// Random crop of this size; 0 x 0 disables.
    std::size_t crop_width = 0;
    std::size_t crop_height = 0;
    double grayscale_probability = 0.0;
    /// Hue rotation drawn from [-hue_shift_deg, hue_shift_deg]; 0 disables.
    double hue_shift_deg = 0.0;
    FactorRange saturation;
    FactorRange contrast;
    FactorRange brightness;
    /// Gaussian noise standard deviation in intensity levels; 0 disables.
    double noise_sigma = 0.0;

    void validate() const;
    bool any_enabled() const;
};

// Individual baseline operations.
RgbPatch flip_horizontal(const RgbPatch& patch);
RgbPatch flip_vertical(const RgbPatch& patch);
/// Counter-clockwise quarter turns.
RgbPatch rotate_quarter_turns(const RgbPatch& patch, int quarter_turns);
/// Bilinear rotation about the patch center; uncovered pixels become white.
RgbPatch rotate_bilinear(const RgbPatch& patch, double degrees);
/// Throws CropLargerThanPatch when the window does not fit.
RgbPatch crop(const RgbPatch& patch, std::size_t x, std::size_t y, std::size_t width, std::size_t height);
RgbPatch to_grayscale(const RgbPatch& patch);
RgbPatch shift_hue(const RgbPatch& patch, double degrees);
RgbPatch adjust_saturation(const RgbPatch& patch, double factor);
RgbPatch adjust_contrast(const RgbPatch& patch, double factor);
RgbPatch adjust_brightness(const RgbPatch& patch, double factor);
RgbPatch add_gaussian_noise(const RgbPatch& patch, double sigma, Rng& rng);

RgbPatch apply_baseline(const RgbPatch& patch, const BaselineParams& params, Rng& rng);

/// Assigns one of `domain_count` domains to each of `n_patches` patches so
/// that per-domain counts differ by at most one. Which domains receive the
/// extra patch and the order of the assignment are shuffled by `rng`.
std::vector<std::size_t> schedule_domains(std::size_t n_patches, std::size_t domain_count, Rng& rng);

/// Runs an external scanner-transform executable on a patch.
///
/// `command_template` is split on whitespace (double quotes group words) and
/// the placeholders {in}, {out} and {domain} are substituted in every word.
/// The program must write a PNG of the same size to {out}. Throws
/// StAdapterFailure on spawn failure, non-zero exit, missing output or a
/// size mismatch.
RgbPatch apply_st_adapter(const RgbPatch& patch, const std::string& command_template,
                          std::string_view target_domain);

struct AugmentConfig {
    AugmentMethod method = AugmentMethod::Baseline;
    /// Target domains: scanner names for Sva, adapter domains for StHook.
    std::vector<std::string> targets;
    /// Adds kIdentityDomain as one more scheduling bucket.
    bool include_identity = true;
    BaselineParams baseline;
    std::uint64_t seed = 0;
    std::filesystem::path library_path;
    std::filesystem::path profile_path;
    std::string st_command;
    SvaParams sva;
    /// Used by Sva when the slide context names no domain.
    SamplingPolicy policy = SamplingPolicy::UniformScannerThenRecord;
    /// Concurrent external adapter processes.
    std::size_t st_slots = 4;

    /// Throws InvalidArgument when targets are missing for Sva/StHook or a
    /// parameter is out of range.
    void validate() const;
    /// targets, plus kIdentityDomain when include_identity is set.
    std::vector<std::string> domains() const;
};

/// Reads an AugmentConfig from TOML. Unknown keys are rejected.
AugmentConfig load_augment_config(const std::filesystem::path& path);
AugmentConfig parse_augment_config(std::string_view toml_text);

/// Per-slide inputs to the method transform.
struct SlideContext {
    /// Slide-level stains of the patch's source slide (Sva).
    std::optional<StainMatrix> source;
    /// Scanner profile of the slide (IccCal).
    std::shared_ptr<const icc::IccProfile> profile;
    /// Scheduled domain; empty lets Sva sample by policy.
    std::string domain;
};

struct AugmentResult {
    RgbPatch patch;
    /// Domain actually applied (kIdentityDomain for untransformed, "srgb"
    /// for IccCal, empty for Baseline).
    std::string domain;
    /// slide_id of the sampled Sva target record, if any.
    std::string target_slide;
};

class Augmenter {
public:
    /// Loads the library from cfg.library_path for Sva when `library` is null.
    explicit Augmenter(AugmentConfig cfg, std::shared_ptr<const StainVectorLibrary> library = nullptr);
    ~Augmenter();
    Augmenter(const Augmenter&) = delete;
    Augmenter& operator=(const Augmenter&) = delete;

    const AugmentConfig& config() const noexcept { return cfg_; }
    const StainVectorLibrary* library() const noexcept { return library_.get(); }

    /// Train-time path: method transform, then baseline augmentations. All
    /// randomness derives from (cfg.seed, patch_index), so results do not
    /// depend on call order or thread.
    AugmentResult augment(const RgbPatch& patch, const SlideContext& ctx, std::uint64_t patch_index) const;

    /// Inference-time path: to_srgb for IccCal, identity otherwise.
    RgbPatch infer(const RgbPatch& patch, const SlideContext& ctx) const;

private:
    RgbPatch method_transform(const RgbPatch& patch, const SlideContext& ctx, Rng& rng,
                              AugmentResult& result) const;

    AugmentConfig cfg_;
    std::shared_ptr<const StainVectorLibrary> library_;
    struct AdapterSlots;
    std::unique_ptr<AdapterSlots> slots_;
};

/// One-shot form of Augmenter::augment.
AugmentResult augment(const RgbPatch& patch, const SlideContext& ctx, const AugmentConfig& cfg,
                      std::uint64_t patch_index);

/// Stream reserved for the batch domain schedule of a seed.
inline constexpr std::uint64_t kScheduleStream = ~std::uint64_t{0};

struct ManifestRow {
    std::size_t patch_index;
    std::string file;
    std::string method;
    std::string domain;
    std::string target_slide;
    std::uint64_t seed;
};

/// Augments `inputs` (patch_index = position) into `out_dir` under the same
/// file names using `threads` workers. Domains are scheduled over the whole
/// batch. Output bytes do not depend on `threads`.
std::vector<ManifestRow> augment_files(const Augmenter& augmenter, const std::vector<std::filesystem::path>& inputs,
                                       const std::filesystem::path& out_dir, const SlideContext& ctx,
                                       std::size_t threads);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

} // namespace stainforge
