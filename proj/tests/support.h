#pragma once

// Shared helpers for the unit tests: random inputs, temp files and the
// brute-force oracles the library results are checked against.

#include "mmreg/phantom.h"
#include "mmreg/transform.h"
#include "mmreg/volume.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace mmreg::test {

inline Volume noise_volume(Dims d, unsigned seed, double lo = 0.0, double hi = 1.0)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Volume v(d);
    for (auto& x : v.data) x = static_cast<float>(u(rng));
    return v;
}

/// Smooth random texture: a handful of random plane waves.
inline Volume wave_volume(Dims d, unsigned seed)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    struct Wave { double kx, ky, kz, ph, a; };
    std::vector<Wave> waves;
    for (int i = 0; i < 6; ++i) waves.push_back({0.5 * u(rng), 0.5 * u(rng), 0.5 * u(rng), 3.0 * u(rng), 1.0 + 0.5 * u(rng)});
    Volume v(d);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                double s = 2.0;
                for (const auto& w : waves) s += 0.3 * w.a * std::sin(w.kx * x + w.ky * y + w.kz * z + w.ph);
                v.at(x, y, z) = static_cast<float>(s);
            }
    return v;
}

inline Phantom small_phantom(unsigned seed, Dims d = {32, 32, 32})
{
    PhantomSpec spec;
    spec.dims = d;
    spec.seed = seed;
    spec.n_blobs = 24;
    return generate(spec);
}

/// Random smooth field: sinusoids with random phases, max amplitude amp.
inline DenseField smooth_field(Dims d, double amp, unsigned seed)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 6.283185307179586);
    const double p0 = u(rng), p1 = u(rng), p2 = u(rng);
    DenseField f(d);
    const double w = 6.283185307179586 / 24.0;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                f.at(x, y, z) = {amp / std::sqrt(3.0) * std::sin(w * y + p0), amp / std::sqrt(3.0) * std::sin(w * z + p1),
                                 amp / std::sqrt(3.0) * std::sin(w * x + p2)};
    return f;
}

inline ControlGrid random_grid(Dims d, int spacing, double amp, unsigned seed)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-amp, amp);
    ControlGrid g(d, spacing);
    for (auto& n : g.displacements)
        for (auto& c : n) c = u(rng);
    return g;
}

inline std::filesystem::path temp_dir()
{
    auto dir = std::filesystem::temp_directory_path() / "mmreg_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string temp_path(const std::string& name) { return (temp_dir() / name).string(); }

inline void write_bytes(const std::string& path, const std::string& header, const std::vector<unsigned char>& body)
{
    std::ofstream out(path, std::ios::binary);
    out << header;
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
}

// ---- oracles -------------------------------------------------------------

/// Entropy from raw integer counts.
inline double count_entropy(const std::map<long, long>& counts, long total)
{
    double h = 0.0;
    for (const auto& [k, c] : counts) {
        (void)k;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

/// NMI dissimilarity from nearest-bin counts over [min, max] of each image.
inline double counting_nmi(const std::vector<float>& a, const std::vector<float>& b, int bins)
{
    auto bin_of = [bins](const std::vector<float>& v) {
        float lo = v[0], hi = v[0];
        for (float x : v) lo = std::min(lo, x), hi = std::max(hi, x);
        std::vector<long> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            long k = hi > lo ? static_cast<long>((v[i] - lo) / (hi - lo) * bins) : 0;
            out[i] = std::min<long>(k, bins - 1);
        }
        return out;
    };
    const auto ba = bin_of(a), bb = bin_of(b);
    std::map<long, long> ca, cb, cj;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++ca[ba[i]];
        ++cb[bb[i]];
        ++cj[ba[i] * bins + bb[i]];
    }
    const long n = static_cast<long>(a.size());
    return -(count_entropy(ca, n) + count_entropy(cb, n)) / count_entropy(cj, n);
}

/// Direct triple-loop patch distance with clamp-to-edge sampling.
inline double brute_patch_distance(const Volume& v, int x, int y, int z, int rx, int ry, int rz, double sigma)
{
    const int h = static_cast<int>(std::ceil(1.5 * sigma));
    double wsum = 0.0, acc = 0.0;
    for (int k = -h; k <= h; ++k)
        for (int j = -h; j <= h; ++j)
            for (int i = -h; i <= h; ++i) {
                const double w = std::exp(-(i * i + j * j + k * k) / (2.0 * sigma * sigma));
                const double p = v.at_clamped(x + i, y + j, z + k);
                const double q = v.at_clamped(x + i + rx, y + j + ry, z + k + rz);
                wsum += w;
                acc += w * (p - q) * (p - q);
            }
    return acc / wsum;
}

/// Local correlation coefficient squared at one voxel, window truncated at
/// the border.
inline double brute_local_cc2(const Volume& a, const std::vector<double>& b, int x, int y, int z, int r)
{
    const Dims d = a.dims;
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    int n = 0;
    for (int k = std::max(0, z - r); k <= std::min(d.z - 1, z + r); ++k)
        for (int j = std::max(0, y - r); j <= std::min(d.y - 1, y + r); ++j)
            for (int i = std::max(0, x - r); i <= std::min(d.x - 1, x + r); ++i) {
                const double p = a.at(i, j, k), q = b[linear_index(d, i, j, k)];
                sa += p, sb += q, saa += p * p, sbb += q * q, sab += p * q;
                ++n;
            }
    const double va = saa / n - (sa / n) * (sa / n), vb = sbb / n - (sb / n) * (sb / n);
    if (va < 1e-8 || vb < 1e-8) return 0.0;
    const double c = sab / n - (sa / n) * (sb / n);
    return c * c / (va * vb);
}

} // namespace mmreg::test
