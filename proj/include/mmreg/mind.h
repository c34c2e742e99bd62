#pragma once

#include "mmreg/volume.h"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace mmreg {

using Offset3 = std::array<int, 3>;

/// The six axis-aligned unit offsets.
std::vector<Offset3> six_neighborhood();

struct MindParams
{
    double sigma = 0.5;
    std::vector<Offset3> neighborhood = six_neighborhood();

    /// ceil(1.5 * sigma)
    int patch_half_size() const;
    void validate() const;
};

/// Per-voxel self-similarity descriptors, channels fastest.
struct MindField
{
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    int channels = 0;
    std::vector<double> data;

    double at(std::size_t voxel, int channel) const
    {
        return data[voxel * static_cast<std::size_t>(channels) + static_cast<std::size_t>(channel)];
    }
};

/// Gaussian-weighted sum of squared differences between the patch around x
/// and the patch around x + r. Offsets are sampled clamp-to-edge, patch
/// samples too.
double patch_distance(const Volume& volume, const Offset3& x, const Offset3& r, const MindParams& params);

MindField compute_mind(const Volume& volume, const MindParams& params = {});

/// Same as above for an intensity buffer in double precision (x-fastest).
MindField compute_mind(Dims dims, Vec3 spacing, std::span<const double> values, const MindParams& params = {});

/// mind_total(reference, compute_mind(values)) and its gradient with respect
/// to every input intensity (exact up to the kinks of |.| and min).
double mind_total_backward(const MindField& reference, Dims dims, std::span<const double> values, const MindParams& params,
                           std::vector<double>& grad_values);

/// Mean absolute descriptor difference at one voxel (linear index).
double mind_pointwise_dissimilarity(const MindField& a, const MindField& b, std::size_t voxel);

/// Sum over voxels of the squared pointwise dissimilarity.
double mind_total(const MindField& a, const MindField& b);

/// Multi-channel MET_FLOAT MetaImage, one channel per offset.
void save_mha(const MindField& field, const std::string& path);

} // namespace mmreg
