#include "mmreg/transform.h"

#include "mmreg/mha_io.h"
#include "mmreg/parallel.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mmreg {

namespace {

void check_same_dims(Dims a, Dims b, const char* what)
{
    if (a != b) throw std::invalid_argument(std::string(what) + ": dims mismatch " + to_string(a) + " vs " + to_string(b));
}

struct Tap
{
    int i0;
    double w1;
};

// Linear interpolation taps of node index for each voxel along one axis.
std::vector<Tap> node_taps(int voxels, int spacing, int nodes)
{
    std::vector<Tap> taps(static_cast<std::size_t>(voxels));
    for (int p = 0; p < voxels; ++p) {
        const int q = p + spacing; // node 0 sits at -spacing
        int i0 = q / spacing;
        double w1 = static_cast<double>(q % spacing) / spacing;
        if (i0 >= nodes - 1) {
            i0 = nodes - 2;
            w1 = 1.0;
        }
        taps[static_cast<std::size_t>(p)] = {i0, w1};
    }
    return taps;
}

inline Vec3 lerp(const Vec3& a, const Vec3& b, double w)
{
    return {a[0] + (b[0] - a[0]) * w, a[1] + (b[1] - a[1]) * w, a[2] + (b[2] - a[2]) * w};
}

inline void axpy(Vec3& acc, double w, const Vec3& v)
{
    acc[0] += w * v[0];
    acc[1] += w * v[1];
    acc[2] += w * v[2];
}

// Interpolates `in` (extents n) along `axis` onto `out_len` voxels.
std::vector<Vec3> interp_axis(const std::vector<Vec3>& in, std::array<int, 3> n, int axis, const std::vector<Tap>& taps)
{
    std::array<int, 3> m = n;
    m[static_cast<std::size_t>(axis)] = static_cast<int>(taps.size());
    std::vector<Vec3> out(static_cast<std::size_t>(m[0]) * m[1] * m[2]);
    const Dims din{n[0], n[1], n[2]}, dout{m[0], m[1], m[2]};
    parallel_for(m[2], [&](int z) {
        for (int y = 0; y < m[1]; ++y) {
            for (int x = 0; x < m[0]; ++x) {
                std::array<int, 3> p{x, y, z};
                const Tap t = taps[static_cast<std::size_t>(p[static_cast<std::size_t>(axis)])];
                std::array<int, 3> a = p, b = p;
                a[static_cast<std::size_t>(axis)] = t.i0;
                b[static_cast<std::size_t>(axis)] = t.i0 + 1;
                out[linear_index(dout, x, y, z)] = lerp(in[linear_index(din, a[0], a[1], a[2])],
                                                        in[linear_index(din, b[0], b[1], b[2])], t.w1);
            }
        }
    });
    return out;
}

// Transpose of interp_axis: scatters voxels back onto `nodes` entries.
std::vector<Vec3> scatter_axis(const std::vector<Vec3>& in, std::array<int, 3> n, int axis, const std::vector<Tap>& taps,
                               int nodes)
{
    std::array<int, 3> m = n;
    m[static_cast<std::size_t>(axis)] = nodes;
    std::vector<Vec3> out(static_cast<std::size_t>(m[0]) * m[1] * m[2], Vec3{0.0, 0.0, 0.0});
    const Dims din{n[0], n[1], n[2]}, dout{m[0], m[1], m[2]};
    // Lines along `axis` are independent; iterate over the two other axes.
    const int a1 = axis == 0 ? 1 : 0;
    const int a2 = axis == 2 ? 1 : 2;
    parallel_for(n[static_cast<std::size_t>(a2)], [&](int c2) {
        for (int c1 = 0; c1 < n[static_cast<std::size_t>(a1)]; ++c1) {
            std::array<int, 3> p{};
            p[static_cast<std::size_t>(a1)] = c1;
            p[static_cast<std::size_t>(a2)] = c2;
            for (int v = 0; v < n[static_cast<std::size_t>(axis)]; ++v) {
                p[static_cast<std::size_t>(axis)] = v;
                const Vec3& g = in[linear_index(din, p[0], p[1], p[2])];
                const Tap t = taps[static_cast<std::size_t>(v)];
                std::array<int, 3> q = p;
                q[static_cast<std::size_t>(axis)] = t.i0;
                axpy(out[linear_index(dout, q[0], q[1], q[2])], 1.0 - t.w1, g);
                q[static_cast<std::size_t>(axis)] = t.i0 + 1;
                axpy(out[linear_index(dout, q[0], q[1], q[2])], t.w1, g);
            }
        }
    });
    return out;
}

} // namespace

Vec3 DenseField::sample(double x, double y, double z) const
{
    auto weights = [](double p, int n, int& i0, int& i1, double& w) {
        if (p <= 0.0) {
            i0 = i1 = 0;
            w = 0.0;
        }
        else if (p >= n - 1) {
            i0 = i1 = n - 1;
            w = 0.0;
        }
        else {
            i0 = static_cast<int>(std::floor(p));
            i1 = i0 + 1;
            w = p - i0;
        }
    };
    int x0, x1, y0, y1, z0, z1;
    double wx, wy, wz;
    weights(x, dims.x, x0, x1, wx);
    weights(y, dims.y, y0, y1, wy);
    weights(z, dims.z, z0, z1, wz);
    const Vec3 c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), wx);
    const Vec3 c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), wx);
    const Vec3 c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), wx);
    const Vec3 c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), wx);
    return lerp(lerp(c00, c10, wy), lerp(c01, c11, wy), wz);
}

double DenseField::max_norm() const
{
    double m = 0.0;
    for (const auto& v : vectors) m = std::max(m, std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));
    return m;
}

Dims control_grid_dims(Dims volume_dims, int spacing)
{
    if (spacing < 1) throw std::invalid_argument("control point spacing must be positive");
    auto axis = [&](int n) { return (n - 1 + spacing - 1) / spacing + 3; };
    return {axis(volume_dims.x), axis(volume_dims.y), axis(volume_dims.z)};
}

ControlGrid::ControlGrid(Dims volume_dims, int spacing)
    : spacing_vox(spacing), grid_dims(control_grid_dims(volume_dims, spacing)),
      displacements(grid_dims.count(), Vec3{0.0, 0.0, 0.0})
{}

bool ControlGrid::covers(Dims d) const
{
    for (int a = 0; a < 3; ++a) {
        if ((grid_dims[a] - 1) * spacing_vox < d[a]) return false;
        // the first interior node must sit at voxel 0
        if (grid_dims[a] < control_grid_dims(d, spacing_vox)[a]) return false;
    }
    return displacements.size() == grid_dims.count();
}

DenseField interpolate_dense(const ControlGrid& grid, Dims dims)
{
    if (!grid.covers(dims)) {
        throw std::invalid_argument("control grid " + to_string(grid.grid_dims) + " does not cover volume " + to_string(dims));
    }
    const Dims g = grid.grid_dims;
    auto a = interp_axis(grid.displacements, {g.x, g.y, g.z}, 2, node_taps(dims.z, grid.spacing_vox, g.z));
    auto b = interp_axis(a, {g.x, g.y, dims.z}, 1, node_taps(dims.y, grid.spacing_vox, g.y));
    DenseField out;
    out.dims = dims;
    out.vectors = interp_axis(b, {g.x, dims.y, dims.z}, 0, node_taps(dims.x, grid.spacing_vox, g.x));
    return out;
}

std::vector<Vec3> pullback_to_nodes(const ControlGrid& grid, const DenseField& dense_gradient)
{
    const Dims d = dense_gradient.dims;
    if (!grid.covers(d)) throw std::invalid_argument("control grid does not cover the gradient field");
    const Dims g = grid.grid_dims;
    auto a = scatter_axis(dense_gradient.vectors, {d.x, d.y, d.z}, 0, node_taps(d.x, grid.spacing_vox, g.x), g.x);
    auto b = scatter_axis(a, {g.x, d.y, d.z}, 1, node_taps(d.y, grid.spacing_vox, g.y), g.y);
    return scatter_axis(b, {g.x, g.y, d.z}, 2, node_taps(d.z, grid.spacing_vox, g.z), g.z);
}

Volume warp(const Volume& moving, const DenseField& field, Interp interp)
{
    check_same_dims(moving.dims, field.dims, "warp");
    Volume out(moving.dims, moving.spacing, moving.origin);
    const Dims d = moving.dims;
    parallel_for(d.z, [&](int z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                const Vec3& u = field.at(x, y, z);
                const double px = x + u[0], py = y + u[1], pz = z + u[2];
                out.at(x, y, z) = interp == Interp::nearest ? sample_nearest(moving, px, py, pz)
                                                            : static_cast<float>(sample_trilinear(moving, px, py, pz));
            }
        }
    });
    return out;
}

LabelVolume warp(const LabelVolume& moving, const DenseField& field)
{
    check_same_dims(moving.dims, field.dims, "warp");
    LabelVolume out(moving.dims, moving.spacing, moving.origin);
    out.label_names = moving.label_names;
    const Dims d = moving.dims;
    parallel_for(d.z, [&](int z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                const Vec3& u = field.at(x, y, z);
                const int sx = clamp_index(static_cast<int>(std::lround(x + u[0])), d.x);
                const int sy = clamp_index(static_cast<int>(std::lround(y + u[1])), d.y);
                const int sz = clamp_index(static_cast<int>(std::lround(z + u[2])), d.z);
                out.at(x, y, z) = moving.at(sx, sy, sz);
            }
        }
    });
    return out;
}

DenseField compose(const DenseField& f, const DenseField& g)
{
    check_same_dims(f.dims, g.dims, "compose");
    DenseField out(g.dims);
    const Dims d = g.dims;
    parallel_for(d.z, [&](int z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                const Vec3& u = g.at(x, y, z);
                const Vec3 v = f.sample(x + u[0], y + u[1], z + u[2]);
                out.at(x, y, z) = {u[0] + v[0], u[1] + v[1], u[2] + v[2]};
            }
        }
    });
    return out;
}

InversionResult invert_field(const DenseField& field, int iterations, double tol)
{
    const Dims d = field.dims;
    InversionResult best{DenseField(d), 0, std::numeric_limits<double>::infinity(), false};
    DenseField inv(d);
    DenseField next(d);
    for (int it = 1; it <= iterations; ++it) {
        std::vector<double> slice_max(static_cast<std::size_t>(d.z), 0.0);
        parallel_for(d.z, [&](int z) {
            double m = 0.0;
            for (int y = 0; y < d.y; ++y) {
                for (int x = 0; x < d.x; ++x) {
                    const Vec3& u = inv.at(x, y, z);
                    const Vec3 v = field.sample(x + u[0], y + u[1], z + u[2]);
                    const Vec3 n{-v[0], -v[1], -v[2]};
                    const double dx = n[0] - u[0], dy = n[1] - u[1], dz = n[2] - u[2];
                    m = std::max(m, std::sqrt(dx * dx + dy * dy + dz * dz));
                    next.at(x, y, z) = n;
                }
            }
            slice_max[static_cast<std::size_t>(z)] = m;
        });
        std::swap(inv, next);
        const double update = *std::max_element(slice_max.begin(), slice_max.end());
        if (update <= best.last_update) best = {inv, it, update, false};
        if (update < tol) {
            best.converged = true;
            break;
        }
    }
    return best;
}

DenseField invert(const DenseField& field, int iterations, double tol)
{
    return invert_field(field, iterations, tol).field;
}

std::pair<DenseField, DenseField> inverse_consistency_step(const DenseField& fwd, const DenseField& bwd)
{
    check_same_dims(fwd.dims, bwd.dims, "inverse_consistency_step");
    const DenseField inv_bwd = invert(bwd);
    const DenseField inv_fwd = invert(fwd);
    DenseField f(fwd.dims), b(bwd.dims);
    for (std::size_t i = 0; i < fwd.vectors.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            f.vectors[i][static_cast<std::size_t>(c)] = 0.5 * fwd.vectors[i][static_cast<std::size_t>(c)]
                + 0.5 * inv_bwd.vectors[i][static_cast<std::size_t>(c)];
            b.vectors[i][static_cast<std::size_t>(c)] = 0.5 * bwd.vectors[i][static_cast<std::size_t>(c)]
                + 0.5 * inv_fwd.vectors[i][static_cast<std::size_t>(c)];
        }
    }
    return {std::move(f), std::move(b)};
}

ControlGrid sample_grid(const DenseField& field, int spacing)
{
    ControlGrid grid(field.dims, spacing);
    const Dims g = grid.grid_dims;
    for (int k = 0; k < g.z; ++k) {
        for (int j = 0; j < g.y; ++j) {
            for (int i = 0; i < g.x; ++i) {
                grid.node(i, j, k) = field.sample(grid.node_position(i), grid.node_position(j), grid.node_position(k));
            }
        }
    }
    return grid;
}

namespace {

Vec3 evaluate_grid(const ControlGrid& grid, double x, double y, double z)
{
    const Dims g = grid.grid_dims;
    auto tap = [&](double p, int n) {
        double u = std::clamp(p / grid.spacing_vox + 1.0, 0.0, static_cast<double>(n - 1));
        int i0 = std::min(static_cast<int>(std::floor(u)), n - 2);
        return Tap{i0, u - i0};
    };
    const Tap tx = tap(x, g.x), ty = tap(y, g.y), tz = tap(z, g.z);
    auto n = [&](int a, int b, int c) { return grid.node(tx.i0 + a, ty.i0 + b, tz.i0 + c); };
    const Vec3 c00 = lerp(n(0, 0, 0), n(1, 0, 0), tx.w1);
    const Vec3 c10 = lerp(n(0, 1, 0), n(1, 1, 0), tx.w1);
    const Vec3 c01 = lerp(n(0, 0, 1), n(1, 0, 1), tx.w1);
    const Vec3 c11 = lerp(n(0, 1, 1), n(1, 1, 1), tx.w1);
    return lerp(lerp(c00, c10, ty.w1), lerp(c01, c11, ty.w1), tz.w1);
}

} // namespace

ControlGrid upsample_grid(const ControlGrid& coarse, Dims coarse_dims, Dims fine_dims, int fine_spacing)
{
    if (!coarse.covers(coarse_dims)) throw std::invalid_argument("coarse grid does not cover its volume");
    ControlGrid fine(fine_dims, fine_spacing);
    const Dims g = fine.grid_dims;
    for (int k = 0; k < g.z; ++k) {
        for (int j = 0; j < g.y; ++j) {
            for (int i = 0; i < g.x; ++i) {
                const Vec3 v = evaluate_grid(coarse, 0.5 * fine.node_position(i), 0.5 * fine.node_position(j),
                                             0.5 * fine.node_position(k));
                fine.node(i, j, k) = {2.0 * v[0], 2.0 * v[1], 2.0 * v[2]};
            }
        }
    }
    return fine;
}

DenseField load_mha_field(const std::string& path)
{
    const MhaImage img = read_mha(path);
    if (img.channels != 3) throw MhaError("'" + path + "' is not a 3-channel displacement field");
    DenseField f(img.dims);
    for (std::size_t i = 0; i < f.vectors.size(); ++i) {
        f.vectors[i] = {img.values[3 * i], img.values[3 * i + 1], img.values[3 * i + 2]};
    }
    return f;
}

void save_mha(const DenseField& field, const std::string& path, Vec3 spacing, Vec3 origin)
{
    MhaImage img{field.dims, spacing, origin, ElementType::float32, 3, {}};
    img.values.reserve(field.vectors.size() * 3);
    for (const auto& v : field.vectors) img.values.insert(img.values.end(), v.begin(), v.end());
    write_mha(path, img);
}

} // namespace mmreg
