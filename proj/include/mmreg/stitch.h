#pragma once

#include "mmreg/volume.h"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mmreg {

/// Sliding-window tiling. Origins sit on multiples of the stride; the last
/// origin per axis is clamped to dims - tile so every voxel is covered.
struct TilePlan
{
    Dims volume_dims;
    Dims tile_dims;
    Dims strides;
    std::vector<std::array<int, 3>> origins;
};

std::vector<int> axis_origins(int extent, int tile, int stride);
TilePlan plan_tiles(Dims dims, Dims tile_dims, Dims strides);

/// Number of tiles covering each voxel.
std::vector<std::uint32_t> coverage_counts(const TilePlan& plan);

Volume extract_tile(const Volume& volume, const std::array<int, 3>& origin, Dims tile_dims);

using TileMapper = std::function<Volume(const Volume&)>;

/// Maps every tile and averages the overlapping results per voxel. With
/// parallel_tiles the mapper is called concurrently and must be thread-safe.
Volume stitch_map(const Volume& volume, const TilePlan& plan, const TileMapper& mapper, bool parallel_tiles = true);

TileMapper identity_mapper();
/// v -> a * v + b
TileMapper affine_mapper(double a, double b);
/// Piecewise-linear lookup through (in, out) pairs, clamped at both ends.
TileMapper lut_mapper(std::vector<std::pair<double, double>> table);
/// Reads "in out" lines.
std::vector<std::pair<double, double>> load_lut(const std::string& path);

} // namespace mmreg
