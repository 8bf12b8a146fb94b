#include "stainforge/sva.hpp"

#include "stainforge/error.hpp"
#include "stainforge/stainlib.hpp"

namespace stainforge {

RgbPatch sva_transform(const RgbPatch& patch, const StainMatrix& source, const StainMatrix& target,
                       const SvaParams& params)
{
    if (!(params.i0 > 0.0))
        throw Error(Errc::InvalidArgument, "i0 must be positive");
    const OdPatch od = rgb_to_od(patch, params.i0);
    if (params.preserve_residual) {
        OdPatch residual;
        const ConcentrationMap conc = deconvolve(od, source, &residual);
        return reconstruct(conc, target, params.i0, &residual);
    }
    return reconstruct(deconvolve(od, source), target, params.i0);
}

const StainVectorRecord& sample_target(const StainVectorLibrary& library, Rng& rng, SamplingPolicy policy)
{
    if (library.empty())
        throw Error(Errc::EmptyLibrary, "cannot sample a target from an empty stain library");
    if (policy == SamplingPolicy::UniformRecord)
        return library.records()[rng.uniform_index(library.size())];

    const auto scanners = library.scanners();
    const std::string& scanner = scanners[rng.uniform_index(scanners.size())];
    const auto& positions = library.positions_for_scanner(scanner);
    return library.records()[positions[rng.uniform_index(positions.size())]];
}

} // namespace stainforge
