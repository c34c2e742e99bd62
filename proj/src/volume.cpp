#include "mmreg/volume.h"

#include "mmreg/parallel.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmreg {

std::string to_string(const Dims& d)
{
    return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

Volume::Volume(Dims d, Vec3 sp, Vec3 org, float fill) : dims(d), spacing(sp), origin(org), data(d.count(), fill) {}

void Volume::validate() const
{
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) {
        throw std::invalid_argument("volume dims must be positive, got " + to_string(dims));
    }
    if (data.size() != dims.count()) {
        throw std::invalid_argument("volume data length " + std::to_string(data.size())
                                    + " does not match dims " + to_string(dims));
    }
    for (double s : spacing) {
        if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("volume spacing must be positive");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw std::invalid_argument("non-finite voxel value at index " + std::to_string(i));
        }
    }
}

LabelVolume::LabelVolume(Dims d, Vec3 sp, Vec3 org) : dims(d), spacing(sp), origin(org), data(d.count(), 0) {}

void LabelVolume::validate() const
{
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) {
        throw std::invalid_argument("label dims must be positive, got " + to_string(dims));
    }
    if (data.size() != dims.count()) throw std::invalid_argument("label data length does not match dims");
    for (double s : spacing) {
        if (!(s > 0.0)) throw std::invalid_argument("label spacing must be positive");
    }
}

namespace {

struct AxisWeights
{
    int i0;
    int i1;
    double w1;
};

inline AxisWeights axis_weights(double p, int n)
{
    if (p <= 0.0) return {0, 0, 0.0};
    if (p >= n - 1) return {n - 1, n - 1, 0.0};
    const int i0 = static_cast<int>(std::floor(p));
    return {i0, std::min(i0 + 1, n - 1), p - i0};
}

} // namespace

double sample_trilinear(const Volume& v, double x, double y, double z)
{
    const AxisWeights ax = axis_weights(x, v.dims.x);
    const AxisWeights ay = axis_weights(y, v.dims.y);
    const AxisWeights az = axis_weights(z, v.dims.z);
    auto val = [&](int i, int j, int k) { return static_cast<double>(v.at(i, j, k)); };
    const double c00 = val(ax.i0, ay.i0, az.i0) * (1 - ax.w1) + val(ax.i1, ay.i0, az.i0) * ax.w1;
    const double c10 = val(ax.i0, ay.i1, az.i0) * (1 - ax.w1) + val(ax.i1, ay.i1, az.i0) * ax.w1;
    const double c01 = val(ax.i0, ay.i0, az.i1) * (1 - ax.w1) + val(ax.i1, ay.i0, az.i1) * ax.w1;
    const double c11 = val(ax.i0, ay.i1, az.i1) * (1 - ax.w1) + val(ax.i1, ay.i1, az.i1) * ax.w1;
    const double c0 = c00 * (1 - ay.w1) + c10 * ay.w1;
    const double c1 = c01 * (1 - ay.w1) + c11 * ay.w1;
    return c0 * (1 - az.w1) + c1 * az.w1;
}

double sample_trilinear_grad(const Volume& v, double x, double y, double z, Vec3& grad)
{
    // Outside the domain the clamped sample is constant along that axis.
    const AxisWeights ax = axis_weights(x, v.dims.x);
    const AxisWeights ay = axis_weights(y, v.dims.y);
    const AxisWeights az = axis_weights(z, v.dims.z);
    const bool inx = x > 0.0 && x < v.dims.x - 1;
    const bool iny = y > 0.0 && y < v.dims.y - 1;
    const bool inz = z > 0.0 && z < v.dims.z - 1;
    auto val = [&](int i, int j, int k) { return static_cast<double>(v.at(i, j, k)); };
    const double v000 = val(ax.i0, ay.i0, az.i0), v100 = val(ax.i1, ay.i0, az.i0);
    const double v010 = val(ax.i0, ay.i1, az.i0), v110 = val(ax.i1, ay.i1, az.i0);
    const double v001 = val(ax.i0, ay.i0, az.i1), v101 = val(ax.i1, ay.i0, az.i1);
    const double v011 = val(ax.i0, ay.i1, az.i1), v111 = val(ax.i1, ay.i1, az.i1);
    const double fx = ax.w1, fy = ay.w1, fz = az.w1;

    const double c00 = v000 * (1 - fx) + v100 * fx;
    const double c10 = v010 * (1 - fx) + v110 * fx;
    const double c01 = v001 * (1 - fx) + v101 * fx;
    const double c11 = v011 * (1 - fx) + v111 * fx;
    const double c0 = c00 * (1 - fy) + c10 * fy;
    const double c1 = c01 * (1 - fy) + c11 * fy;

    const double dx0 = (v100 - v000) * (1 - fy) + (v110 - v010) * fy;
    const double dx1 = (v101 - v001) * (1 - fy) + (v111 - v011) * fy;
    grad[0] = inx ? dx0 * (1 - fz) + dx1 * fz : 0.0;
    grad[1] = iny ? (c10 - c00) * (1 - fz) + (c11 - c01) * fz : 0.0;
    grad[2] = inz ? c1 - c0 : 0.0;
    return c0 * (1 - fz) + c1 * fz;
}

float sample_nearest(const Volume& v, double x, double y, double z)
{
    return v.at_clamped(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)),
                        static_cast<int>(std::lround(z)));
}

namespace {

Dims resampled_dims(const Dims& d, const Vec3& spacing, double t)
{
    auto axis = [&](int n, double s) { return std::max(1, static_cast<int>(std::lround(n * s / t))); };
    return {axis(d.x, spacing[0]), axis(d.y, spacing[1]), axis(d.z, spacing[2])};
}

} // namespace

Volume resample_isotropic(const Volume& v, double target_spacing_mm, Interp interp)
{
    if (!(target_spacing_mm > 0.0)) throw std::invalid_argument("target spacing must be positive");
    const Dims out_dims = resampled_dims(v.dims, v.spacing, target_spacing_mm);
    Volume out(out_dims, {target_spacing_mm, target_spacing_mm, target_spacing_mm}, v.origin);
    const Vec3 scale{target_spacing_mm / v.spacing[0], target_spacing_mm / v.spacing[1],
                     target_spacing_mm / v.spacing[2]};
    parallel_for(out_dims.z, [&](int z) {
        for (int y = 0; y < out_dims.y; ++y) {
            for (int x = 0; x < out_dims.x; ++x) {
                const double px = x * scale[0], py = y * scale[1], pz = z * scale[2];
                out.at(x, y, z) = interp == Interp::nearest ? sample_nearest(v, px, py, pz)
                                                            : static_cast<float>(sample_trilinear(v, px, py, pz));
            }
        }
    });
    return out;
}

LabelVolume resample_isotropic(const LabelVolume& v, double target_spacing_mm)
{
    if (!(target_spacing_mm > 0.0)) throw std::invalid_argument("target spacing must be positive");
    const Dims out_dims = resampled_dims(v.dims, v.spacing, target_spacing_mm);
    LabelVolume out(out_dims, {target_spacing_mm, target_spacing_mm, target_spacing_mm}, v.origin);
    out.label_names = v.label_names;
    const Vec3 scale{target_spacing_mm / v.spacing[0], target_spacing_mm / v.spacing[1],
                     target_spacing_mm / v.spacing[2]};
    for (int z = 0; z < out_dims.z; ++z) {
        for (int y = 0; y < out_dims.y; ++y) {
            for (int x = 0; x < out_dims.x; ++x) {
                const int sx = clamp_index(static_cast<int>(std::lround(x * scale[0])), v.dims.x);
                const int sy = clamp_index(static_cast<int>(std::lround(y * scale[1])), v.dims.y);
                const int sz = clamp_index(static_cast<int>(std::lround(z * scale[2])), v.dims.z);
                out.at(x, y, z) = v.at(sx, sy, sz);
            }
        }
    }
    return out;
}

std::pair<float, float> min_max(const Volume& v)
{
    if (v.data.empty()) throw std::invalid_argument("empty volume");
    const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
    return {*lo, *hi};
}

Volume rescale_intensity(const Volume& v, double lo, double hi)
{
    if (!(hi > lo)) throw std::invalid_argument("rescale_intensity requires hi > lo");
    const auto [mn, mx] = min_max(v);
    Volume out = v;
    if (mx == mn) {
        std::fill(out.data.begin(), out.data.end(), static_cast<float>(lo));
        return out;
    }
    const double scale = (hi - lo) / (static_cast<double>(mx) - mn);
    for (auto& value : out.data) value = static_cast<float>(lo + (value - static_cast<double>(mn)) * scale);
    return out;
}

Volume gaussian_smooth(const Volume& v, double sigma_vox)
{
    if (!(sigma_vox > 0.0)) throw std::invalid_argument("smoothing sigma must be positive");
    std::array<double, 5> kernel{};
    double norm = 0.0;
    for (int i = -2; i <= 2; ++i) {
        kernel[static_cast<std::size_t>(i + 2)] = std::exp(-0.5 * i * i / (sigma_vox * sigma_vox));
        norm += kernel[static_cast<std::size_t>(i + 2)];
    }
    for (auto& k : kernel) k /= norm;

    const Dims d = v.dims;
    std::vector<double> a(v.data.begin(), v.data.end());
    std::vector<double> b(a.size());
    const std::array<int, 3> n{d.x, d.y, d.z};
    for (int axis = 0; axis < 3; ++axis) {
        parallel_for(d.z, [&](int z) {
            for (int y = 0; y < d.y; ++y) {
                for (int x = 0; x < d.x; ++x) {
                    std::array<int, 3> p{x, y, z};
                    double acc = 0.0;
                    for (int t = -2; t <= 2; ++t) {
                        std::array<int, 3> q = p;
                        q[static_cast<std::size_t>(axis)] = clamp_index(p[static_cast<std::size_t>(axis)] + t,
                                                                        n[static_cast<std::size_t>(axis)]);
                        acc += kernel[static_cast<std::size_t>(t + 2)] * a[linear_index(d, q[0], q[1], q[2])];
                    }
                    b[linear_index(d, x, y, z)] = acc;
                }
            }
        });
        std::swap(a, b);
    }
    Volume out(d, v.spacing, v.origin);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = static_cast<float>(a[i]);
    return out;
}

Dims pyramid_dims(Dims d, int level)
{
    for (int l = 0; l < level; ++l) d = {(d.x + 1) / 2, (d.y + 1) / 2, (d.z + 1) / 2};
    return d;
}

std::vector<Volume> gaussian_pyramid(const Volume& v, int levels)
{
    if (levels < 1) throw std::invalid_argument("pyramid needs at least one level");
    const Dims coarsest = pyramid_dims(v.dims, levels - 1);
    if (coarsest.x < 4 || coarsest.y < 4 || coarsest.z < 4) {
        throw std::invalid_argument("pyramid with " + std::to_string(levels) + " levels shrinks "
                                    + to_string(v.dims) + " below 4 voxels per axis");
    }
    std::vector<Volume> out;
    out.reserve(static_cast<std::size_t>(levels));
    out.push_back(v);
    for (int l = 1; l < levels; ++l) {
        const Volume smooth = gaussian_smooth(out.back(), 1.0);
        const Dims nd = pyramid_dims(smooth.dims, 1);
        const Vec3& sp = smooth.spacing;
        Volume next(nd, {sp[0] * 2, sp[1] * 2, sp[2] * 2}, smooth.origin);
        for (int z = 0; z < nd.z; ++z) {
            for (int y = 0; y < nd.y; ++y) {
                for (int x = 0; x < nd.x; ++x) next.at(x, y, z) = smooth.at(2 * x, 2 * y, 2 * z);
            }
        }
        out.push_back(std::move(next));
    }
    return out;
}

} // namespace mmreg
