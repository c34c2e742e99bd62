#include "mmreg/mind.h"

#include "mmreg/mha_io.h"
#include "mmreg/parallel.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmreg {

std::vector<Offset3> six_neighborhood()
{
    return {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
}

int MindParams::patch_half_size() const { return static_cast<int>(std::ceil(1.5 * sigma)); }

void MindParams::validate() const
{
    if (!(sigma > 0.0)) throw std::invalid_argument("MIND sigma must be positive");
    if (neighborhood.empty()) throw std::invalid_argument("MIND neighborhood is empty");
    for (const auto& r : neighborhood) {
        if (r == Offset3{0, 0, 0}) throw std::invalid_argument("MIND neighborhood contains the zero offset");
    }
}

namespace {

std::vector<double> gaussian_taps(const MindParams& params)
{
    const int h = params.patch_half_size();
    std::vector<double> g(static_cast<std::size_t>(2 * h + 1));
    double norm = 0.0;
    for (int j = -h; j <= h; ++j) {
        g[static_cast<std::size_t>(j + h)] = std::exp(-0.5 * j * j / (params.sigma * params.sigma));
        norm += g[static_cast<std::size_t>(j + h)];
    }
    for (auto& w : g) w /= norm;
    return g;
}

// Clamp-to-edge convolution along `axis` (out = taps * in), or its adjoint
// (a scatter of in through the same taps). Along y and z whole x-rows are
// combined so the inner loop is contiguous.
void convolve_axis(Dims d, const std::vector<double>& in, std::vector<double>& out, std::span<const double> taps, int axis,
                   bool adjoint)
{
    const int h = static_cast<int>(taps.size() / 2);
    const int n = d[axis];
    const std::size_t row = static_cast<std::size_t>(d.x);
    if (axis == 0) {
        parallel_for(d.z, [&](int z) {
            for (int y = 0; y < d.y; ++y) {
                const double* src = in.data() + linear_index(d, 0, y, z);
                double* dst = out.data() + linear_index(d, 0, y, z);
                if (adjoint) {
                    std::fill(dst, dst + n, 0.0);
                    for (int k = 0; k < n; ++k) {
                        for (int j = -h; j <= h; ++j) dst[clamp_index(k + j, n)] += taps[static_cast<std::size_t>(j + h)] * src[k];
                    }
                }
                else {
                    for (int k = 0; k < n; ++k) {
                        double acc = 0.0;
                        for (int j = -h; j <= h; ++j) acc += taps[static_cast<std::size_t>(j + h)] * src[clamp_index(k + j, n)];
                        dst[k] = acc;
                    }
                }
            }
        });
        return;
    }
    const int outer = axis == 1 ? d.z : d.y;
    parallel_for(outer, [&](int o) {
        auto row_at = [&](int k) { return axis == 1 ? linear_index(d, 0, k, o) : linear_index(d, 0, o, k); };
        if (adjoint) {
            for (int k = 0; k < n; ++k) std::fill_n(out.data() + row_at(k), row, 0.0);
        }
        for (int k = 0; k < n; ++k) {
            if (adjoint) {
                const double* src = in.data() + row_at(k);
                for (int j = -h; j <= h; ++j) {
                    const double t = taps[static_cast<std::size_t>(j + h)];
                    double* dst = out.data() + row_at(clamp_index(k + j, n));
                    for (std::size_t x = 0; x < row; ++x) dst[x] += t * src[x];
                }
            }
            else {
                double* dst = out.data() + row_at(k);
                std::fill_n(dst, row, 0.0);
                for (int j = -h; j <= h; ++j) {
                    const double t = taps[static_cast<std::size_t>(j + h)];
                    const double* src = in.data() + row_at(clamp_index(k + j, n));
                    for (std::size_t x = 0; x < row; ++x) dst[x] += t * src[x];
                }
            }
        }
    });
}

// Patch distance for every voxel and one offset: squared differences
// convolved separably with the normalized Gaussian, clamp-to-edge.
void patch_distance_map(Dims d, std::span<const double> img, const Offset3& r, std::span<const double> taps,
                        std::vector<double>& out, std::vector<double>& tmp)
{
    out.resize(d.count());
    tmp.resize(d.count());
    parallel_for(d.z, [&](int z) {
        const int zr = clamp_index(z + r[2], d.z);
        for (int y = 0; y < d.y; ++y) {
            const int yr = clamp_index(y + r[1], d.y);
            const double* a = img.data() + linear_index(d, 0, y, z);
            const double* b = img.data() + linear_index(d, 0, yr, zr);
            double* o = out.data() + linear_index(d, 0, y, z);
            for (int x = 0; x < d.x; ++x) {
                const double diff = a[x] - b[clamp_index(x + r[0], d.x)];
                o[x] = diff * diff;
            }
        }
    });
    convolve_axis(d, out, tmp, taps, 0, false);
    convolve_axis(d, tmp, out, taps, 1, false);
    convolve_axis(d, out, tmp, taps, 2, false);
    std::swap(out, tmp);
}

} // namespace

double patch_distance(const Volume& volume, const Offset3& x, const Offset3& r, const MindParams& params)
{
    params.validate();
    const auto taps = gaussian_taps(params);
    const int h = params.patch_half_size();
    const Dims& d = volume.dims;
    double acc = 0.0;
    for (int k = -h; k <= h; ++k) {
        for (int j = -h; j <= h; ++j) {
            for (int i = -h; i <= h; ++i) {
                const int px = clamp_index(x[0] + i, d.x), py = clamp_index(x[1] + j, d.y), pz = clamp_index(x[2] + k, d.z);
                const double diff = static_cast<double>(volume.at(px, py, pz)) - volume.at_clamped(px + r[0], py + r[1], pz + r[2]);
                acc += taps[static_cast<std::size_t>(i + h)] * taps[static_cast<std::size_t>(j + h)]
                    * taps[static_cast<std::size_t>(k + h)] * diff * diff;
            }
        }
    }
    return acc;
}

namespace {

struct MindIntermediates
{
    std::vector<std::vector<double>> dist; ///< per neighbourhood offset
    std::vector<std::vector<double>> six;  ///< six-neighbourhood maps (empty when shared)
    std::vector<double> var;
    double mean_v = 0.0;
};

MindField compute_mind_impl(Dims dims, Vec3 spacing, std::span<const double> values, const MindParams& params,
                            MindIntermediates& im)
{
    params.validate();
    if (values.size() != dims.count()) throw std::invalid_argument("MIND input length does not match dims");
    const int min_extent = 2 * params.patch_half_size() + 1;
    if (dims.x < min_extent || dims.y < min_extent || dims.z < min_extent) {
        throw std::invalid_argument("volume " + to_string(dims) + " is smaller than the MIND patch");
    }
    const auto taps = gaussian_taps(params);
    const std::size_t n = dims.count();
    const auto channels = static_cast<int>(params.neighborhood.size());
    const auto six = six_neighborhood();
    const bool shared = params.neighborhood == six;

    auto& dist = im.dist;
    dist.assign(params.neighborhood.size(), {});
    std::vector<double> tmp;
    for (std::size_t c = 0; c < params.neighborhood.size(); ++c) {
        patch_distance_map(dims, values, params.neighborhood[c], taps, dist[c], tmp);
    }

    // v(x): mean patch distance over the six-neighbourhood.
    auto& var = im.var;
    var.assign(n, 0.0);
    const auto& six_maps = shared ? dist : im.six;
    if (!shared) {
        im.six.assign(6, {});
        for (std::size_t k = 0; k < 6; ++k) patch_distance_map(dims, values, six[k], taps, im.six[k], tmp);
    }
    parallel_for(dims.z, [&](int z) {
        const std::size_t begin = static_cast<std::size_t>(z) * dims.x * dims.y;
        const std::size_t end = begin + static_cast<std::size_t>(dims.x) * dims.y;
        for (std::size_t i = begin; i < end; ++i) {
            double s = 0.0;
            for (const auto& dc : six_maps) s += dc[i];
            var[i] = s / 6.0;
        }
    });

    const double mean_v = parallel_sum(dims.z, [&](int z) {
        const std::size_t begin = static_cast<std::size_t>(z) * dims.x * dims.y;
        const std::size_t end = begin + static_cast<std::size_t>(dims.x) * dims.y;
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) s += var[i];
        return s;
    }) / static_cast<double>(n);
    im.mean_v = mean_v;

    MindField field{dims, spacing, channels, std::vector<double>(n * static_cast<std::size_t>(channels), 1.0)};
    if (!(mean_v > 0.0)) return field; // every patch distance is zero

    const double v_lo = 1e-6 * mean_v, v_hi = 1e6 * mean_v;
    parallel_for(dims.z, [&](int z) {
        const std::size_t begin = static_cast<std::size_t>(z) * dims.x * dims.y;
        const std::size_t end = begin + static_cast<std::size_t>(dims.x) * dims.y;
        for (std::size_t i = begin; i < end; ++i) {
            const double v = std::clamp(var[i], v_lo, v_hi);
            double d_min = dist[0][i];
            for (const auto& dc : dist) d_min = std::min(d_min, dc[i]);
            double* s = &field.data[i * static_cast<std::size_t>(channels)];
            // Dividing by n = max_i exp(-d_i / v) is the shift by d_min.
            for (int c = 0; c < channels; ++c) s[c] = std::exp(-(dist[static_cast<std::size_t>(c)][i] - d_min) / v);
        }
    });
    return field;
}

// Accumulates d(loss)/d(values) given d(loss)/d(smoothed patch distance map)
// for offset r.
void patch_distance_backward(Dims d, std::span<const double> values, const Offset3& r, std::span<const double> taps,
                             std::vector<double> g_map, std::vector<double>& g_values)
{
    std::vector<double> tmp(g_map.size());
    convolve_axis(d, g_map, tmp, taps, 2, true);
    convolve_axis(d, tmp, g_map, taps, 1, true);
    convolve_axis(d, g_map, tmp, taps, 0, true);
    // sequential scatter: clamped neighbours may coincide
    for (int z = 0; z < d.z; ++z) {
        const int zr = clamp_index(z + r[2], d.z);
        for (int y = 0; y < d.y; ++y) {
            const int yr = clamp_index(y + r[1], d.y);
            for (int x = 0; x < d.x; ++x) {
                const std::size_t i = linear_index(d, x, y, z);
                if (tmp[i] == 0.0) continue;
                const std::size_t j = linear_index(d, clamp_index(x + r[0], d.x), yr, zr);
                const double g = 2.0 * (values[i] - values[j]) * tmp[i];
                g_values[i] += g;
                g_values[j] -= g;
            }
        }
    }
}

} // namespace

MindField compute_mind(Dims dims, Vec3 spacing, std::span<const double> values, const MindParams& params)
{
    MindIntermediates im;
    return compute_mind_impl(dims, spacing, values, params, im);
}

double mind_total_backward(const MindField& reference, Dims dims, std::span<const double> values, const MindParams& params,
                           std::vector<double>& grad_values)
{
    MindIntermediates im;
    const MindField w = compute_mind_impl(dims, reference.spacing, values, params, im);
    const double total = mind_total(reference, w);
    const std::size_t n = dims.count();
    grad_values.assign(n, 0.0);
    if (!(im.mean_v > 0.0)) return total; // descriptor is constant 1 locally

    const int ch = w.channels;
    const auto chs = static_cast<std::size_t>(ch);
    const bool shared = im.six.empty();
    std::vector<std::vector<double>> g_dist(chs, std::vector<double>(n, 0.0));
    std::vector<double> g_var(n, 0.0);
    const double v_lo = 1e-6 * im.mean_v, v_hi = 1e6 * im.mean_v;
    parallel_for(dims.z, [&](int z) {
        const std::size_t begin = static_cast<std::size_t>(z) * dims.x * dims.y;
        const std::size_t end = begin + static_cast<std::size_t>(dims.x) * dims.y;
        std::vector<double> gs(chs);
        for (std::size_t i = begin; i < end; ++i) {
            double e = 0.0;
            for (int c = 0; c < ch; ++c) e += std::abs(w.at(i, c) - reference.at(i, c));
            e /= ch;
            if (e == 0.0) continue;
            std::size_t m = 0;
            for (std::size_t c = 1; c < chs; ++c) {
                if (im.dist[c][i] < im.dist[m][i]) m = c;
            }
            const double d_min = im.dist[m][i];
            const double v = std::clamp(im.var[i], v_lo, v_hi);
            double sum_gss = 0.0, gv = 0.0;
            for (std::size_t c = 0; c < chs; ++c) {
                const double diff = w.at(i, static_cast<int>(c)) - reference.at(i, static_cast<int>(c));
                const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                const double gss = 2.0 * e / ch * sign * w.at(i, static_cast<int>(c));
                sum_gss += gss;
                g_dist[c][i] -= gss / v;
                gv += gss * (im.dist[c][i] - d_min) / (v * v);
            }
            g_dist[m][i] += sum_gss / v;
            if (im.var[i] > v_lo && im.var[i] < v_hi) g_var[i] = gv / 6.0;
        }
    });

    const auto taps = gaussian_taps(params);
    const auto six = six_neighborhood();
    if (shared) {
        for (std::size_t c = 0; c < chs; ++c) {
            for (std::size_t i = 0; i < n; ++i) g_dist[c][i] += g_var[i];
            patch_distance_backward(dims, values, params.neighborhood[c], taps, std::move(g_dist[c]), grad_values);
        }
    }
    else {
        for (std::size_t c = 0; c < chs; ++c) {
            patch_distance_backward(dims, values, params.neighborhood[c], taps, std::move(g_dist[c]), grad_values);
        }
        for (std::size_t k = 0; k < 6; ++k) patch_distance_backward(dims, values, six[k], taps, g_var, grad_values);
    }
    return total;
}

MindField compute_mind(const Volume& volume, const MindParams& params)
{
    std::vector<double> values(volume.data.begin(), volume.data.end());
    return compute_mind(volume.dims, volume.spacing, values, params);
}

namespace {

void check_compatible(const MindField& a, const MindField& b)
{
    if (a.dims != b.dims || a.channels != b.channels) {
        throw std::invalid_argument("MIND fields differ in dims or channels: " + to_string(a.dims) + "/"
                                    + std::to_string(a.channels) + " vs " + to_string(b.dims) + "/"
                                    + std::to_string(b.channels));
    }
}

} // namespace

double mind_pointwise_dissimilarity(const MindField& a, const MindField& b, std::size_t voxel)
{
    check_compatible(a, b);
    double s = 0.0;
    for (int c = 0; c < a.channels; ++c) s += std::abs(a.at(voxel, c) - b.at(voxel, c));
    return s / a.channels;
}

double mind_total(const MindField& a, const MindField& b)
{
    check_compatible(a, b);
    const Dims d = a.dims;
    const std::size_t slice = static_cast<std::size_t>(d.x) * d.y;
    const auto ch = static_cast<std::size_t>(a.channels);
    return parallel_sum(d.z, [&](int z) {
        double acc = 0.0;
        for (std::size_t i = z * slice; i < (z + 1) * slice; ++i) {
            double s = 0.0;
            for (std::size_t c = 0; c < ch; ++c) s += std::abs(a.data[i * ch + c] - b.data[i * ch + c]);
            s /= a.channels;
            acc += s * s;
        }
        return acc;
    });
}

void save_mha(const MindField& field, const std::string& path)
{
    MhaImage img;
    img.dims = field.dims;
    img.spacing = field.spacing;
    img.channels = field.channels;
    img.values = field.data;
    write_mha(path, img);
}

} // namespace mmreg
