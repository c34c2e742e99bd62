#pragma once

#include "mmreg/transform.h"
#include "mmreg/volume.h"

#include <cstdint>
#include <string>

namespace mmreg {

struct Deformation
{
    enum class Kind { none, sinusoidal, random_smooth };
    Kind kind = Kind::none;
    /// peak displacement norm in voxels
    double amplitude = 0.0;
    /// sinusoidal: period in voxels; random_smooth: smoothing sigma in voxels
    double length = 32.0;
};

struct IntensityRemap
{
    enum class Kind { identity, gamma, inverted_bands };
    Kind kind = Kind::identity;
    /// gamma exponent or band count
    double param = 1.0;
};

struct PhantomSpec
{
    Dims dims{64, 64, 64};
    std::uint64_t seed = 0x5EED;
    int n_blobs = 48;
    Deformation deformation;
    IntensityRemap remap;

    /// Throws std::invalid_argument, e.g. when the amplitude is not below a
    /// quarter of the deformation length scale.
    void validate() const;
};

struct Phantom
{
    Volume a;
    Volume b;
    LabelVolume labels_a;
    LabelVolume labels_b;
    /// Maps B-space voxels into A: b(x) = remap(a(x + truth(x))).
    DenseField truth;
};

Phantom generate(const PhantomSpec& spec);

/// Truth field alone (no image synthesis).
DenseField phantom_deformation(const PhantomSpec& spec);

/// Applies the spec's remap to a volume normalised to [0, 1].
Volume apply_remap(const Volume& v, const IntensityRemap& remap);

/// "dims=64x64x64 seed=24301 blobs=48 deformation=sinusoidal(3,32) remap=inverted_bands(4)"
std::string to_string(const PhantomSpec& spec);
/// Inverse of to_string; tokens may be separated by spaces or ';' and
/// unspecified keys keep their defaults.
PhantomSpec parse_phantom_spec(const std::string& text, PhantomSpec base = {});

} // namespace mmreg
