#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mmreg {

using Vec3 = std::array<double, 3>;

struct Dims
{
    int x = 0;
    int y = 0;
    int z = 0;

    std::size_t count() const
    {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
    }
    int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// x-fastest linear index.
inline std::size_t linear_index(const Dims& d, int x, int y, int z)
{
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(d.y) + static_cast<std::size_t>(y))
        * static_cast<std::size_t>(d.x) + static_cast<std::size_t>(x);
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

/// Dense 3D scalar image. Working scalar is float regardless of the stored
/// element type.
struct Volume
{
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::vector<float> data;

    Volume() = default;
    Volume(Dims d, Vec3 sp = {1.0, 1.0, 1.0}, Vec3 org = {0.0, 0.0, 0.0}, float fill = 0.0f);

    float& at(int x, int y, int z) { return data[linear_index(dims, x, y, z)]; }
    float at(int x, int y, int z) const { return data[linear_index(dims, x, y, z)]; }
    float at_clamped(int x, int y, int z) const
    {
        return at(clamp_index(x, dims.x), clamp_index(y, dims.y), clamp_index(z, dims.z));
    }

    /// Throws std::invalid_argument when any invariant is broken.
    void validate() const;
    bool operator==(const Volume&) const = default;
};

/// Integer segmentation. Label 0 is background.
struct LabelVolume
{
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::vector<std::uint16_t> data;
    std::map<int, std::string> label_names;

    LabelVolume() = default;
    LabelVolume(Dims d, Vec3 sp = {1.0, 1.0, 1.0}, Vec3 org = {0.0, 0.0, 0.0});

    std::uint16_t& at(int x, int y, int z) { return data[linear_index(dims, x, y, z)]; }
    std::uint16_t at(int x, int y, int z) const { return data[linear_index(dims, x, y, z)]; }

    void validate() const;
    bool operator==(const LabelVolume&) const = default;
};

enum class Interp { trilinear, nearest };

/// Trilinear sample at a continuous voxel position, clamp-to-edge.
double sample_trilinear(const Volume& v, double x, double y, double z);

/// Trilinear sample plus its spatial derivative (per voxel) at the same point.
double sample_trilinear_grad(const Volume& v, double x, double y, double z, Vec3& grad);

/// Nearest-voxel sample, clamp-to-edge. Ties round half away from zero.
float sample_nearest(const Volume& v, double x, double y, double z);

Volume resample_isotropic(const Volume& v, double target_spacing_mm, Interp interp = Interp::trilinear);
LabelVolume resample_isotropic(const LabelVolume& v, double target_spacing_mm);

/// Affine map of [min, max] onto [lo, hi]; a constant volume maps to lo.
Volume rescale_intensity(const Volume& v, double lo, double hi);

/// Separable 5-tap Gaussian (sigma in voxels), clamp-to-edge.
Volume gaussian_smooth(const Volume& v, double sigma_vox);

/// Level 0 is the input; each further level is smoothed (sigma = 1 voxel)
/// and subsampled by 2 per axis, with dims ceil(d / 2) and spacing doubled.
std::vector<Volume> gaussian_pyramid(const Volume& v, int levels);

/// Dims of pyramid level `level` for an input of dims `d`.
Dims pyramid_dims(Dims d, int level);

/// Minimum and maximum of the data; throws on empty volumes.
std::pair<float, float> min_max(const Volume& v);

} // namespace mmreg
