#pragma once

#include "mmreg/volume.h"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mmreg {

/// Per-voxel displacement in voxel units.
struct DenseField
{
    Dims dims;
    std::vector<Vec3> vectors;

    DenseField() = default;
    explicit DenseField(Dims d, Vec3 fill = {0.0, 0.0, 0.0}) : dims(d), vectors(d.count(), fill) {}

    Vec3& at(int x, int y, int z) { return vectors[linear_index(dims, x, y, z)]; }
    const Vec3& at(int x, int y, int z) const { return vectors[linear_index(dims, x, y, z)]; }

    /// Trilinear sample at a continuous voxel position, clamp-to-edge.
    Vec3 sample(double x, double y, double z) const;

    /// Largest per-voxel Euclidean norm.
    double max_norm() const;
};

/// Regular lattice of control-point displacements. Node i sits at voxel
/// coordinate (i - 1) * spacing_vox along each axis, so there is one extra
/// node layer outside each face of the volume.
struct ControlGrid
{
    int spacing_vox = 8;
    Dims grid_dims;
    std::vector<Vec3> displacements;

    ControlGrid() = default;
    /// Zero grid covering a volume of the given dims.
    ControlGrid(Dims volume_dims, int spacing);

    Vec3& node(int i, int j, int k) { return displacements[linear_index(grid_dims, i, j, k)]; }
    const Vec3& node(int i, int j, int k) const { return displacements[linear_index(grid_dims, i, j, k)]; }

    /// Voxel coordinate of node index i along any axis.
    double node_position(int i) const { return static_cast<double>(i - 1) * spacing_vox; }

    bool covers(Dims volume_dims) const;
    std::size_t node_count() const { return grid_dims.count(); }
};

/// Grid dims needed to cover volume_dims with the boundary layer.
Dims control_grid_dims(Dims volume_dims, int spacing);

/// Trilinear interpolation of node displacements; exact at nodes.
DenseField interpolate_dense(const ControlGrid& grid, Dims dims);

/// Adjoint of interpolate_dense: scatters a dense per-voxel vector field
/// onto the nodes with the same interpolation weights.
std::vector<Vec3> pullback_to_nodes(const ControlGrid& grid, const DenseField& dense_gradient);

/// output[x] = moving[x + field[x]], clamp-to-edge.
Volume warp(const Volume& moving, const DenseField& field, Interp interp = Interp::trilinear);
LabelVolume warp(const LabelVolume& moving, const DenseField& field);

/// (f o g)[x] = g[x] + f[x + g[x]], f sampled trilinearly.
DenseField compose(const DenseField& f, const DenseField& g);

struct InversionResult
{
    DenseField field;
    int iterations = 0;
    double last_update = 0.0;
    bool converged = false;
};

/// Fixed-point inversion inv <- -field(x + inv(x)). Returns the iterate
/// with the smallest update; non-convergence is reported, not thrown.
InversionResult invert_field(const DenseField& field, int iterations = 20, double tol = 0.01);
DenseField invert(const DenseField& field, int iterations = 20, double tol = 0.01);

/// Replaces each field by the average of itself and the inverse of the other.
std::pair<DenseField, DenseField> inverse_consistency_step(const DenseField& fwd, const DenseField& bwd);

/// Node displacements sampled from a dense field at the node positions
/// (clamp-to-edge outside the volume).
ControlGrid sample_grid(const DenseField& field, int spacing);

/// Resamples a coarse-level grid onto a grid for a volume twice as fine,
/// doubling the displacements.
ControlGrid upsample_grid(const ControlGrid& coarse, Dims coarse_dims, Dims fine_dims, int fine_spacing);

DenseField load_mha_field(const std::string& path);
void save_mha(const DenseField& field, const std::string& path, Vec3 spacing = {1.0, 1.0, 1.0},
              Vec3 origin = {0.0, 0.0, 0.0});

} // namespace mmreg
