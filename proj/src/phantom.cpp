#include "mmreg/phantom.h"

#include "mmreg/parallel.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace mmreg {

namespace {

// Counter-based generator: every draw is a pure function of (seed, stream,
// index), so output never depends on evaluation order or thread count.
std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
{
    const std::uint64_t h = splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
    return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
{
    const double u1 = uniform(seed, stream, 2 * index);
    const double u2 = uniform(seed, stream, 2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

enum Stream : std::uint64_t { blob_stream = 1, noise_stream = 2, field_stream = 3 };

struct Blob
{
    Vec3 center;
    double sigma;
    double amplitude;
};

std::vector<Blob> make_blobs(const PhantomSpec& spec)
{
    std::vector<Blob> blobs;
    const Dims d = spec.dims;
    for (int k = 0; k < spec.n_blobs; ++k) {
        const auto u = [&](int j) { return uniform(spec.seed, blob_stream, static_cast<std::uint64_t>(k) * 8 + j); };
        Blob b;
        for (int a = 0; a < 3; ++a) {
            const double margin = std::min(4.0, 0.25 * (d[a] - 1));
            b.center[static_cast<std::size_t>(a)] = margin + u(a) * (d[a] - 1 - 2 * margin);
        }
        b.sigma = 2.5 + 2.5 * u(3);
        b.amplitude = (u(4) < 0.3 ? -1.0 : 1.0) * (0.4 + 0.6 * u(5));
        blobs.push_back(b);
    }
    return blobs;
}

// Separable Gaussian with a +-3 sigma kernel, clamp-to-edge.
void smooth_component(std::vector<double>& f, Dims d, double sigma)
{
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double ks = 0.0;
    for (int i = -r; i <= r; ++i) ks += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& w : k) w /= ks;
    std::vector<double> tmp(f.size());
    for (int axis = 0; axis < 3; ++axis) {
        parallel_for(d.z, [&](int z) {
            for (int y = 0; y < d.y; ++y) {
                for (int x = 0; x < d.x; ++x) {
                    double s = 0.0;
                    for (int i = -r; i <= r; ++i) {
                        int p[3] = {x, y, z};
                        p[axis] = clamp_index(p[axis] + i, d[axis]);
                        s += k[static_cast<std::size_t>(i + r)] * f[linear_index(d, p[0], p[1], p[2])];
                    }
                    tmp[linear_index(d, x, y, z)] = s;
                }
            }
        });
        f.swap(tmp);
    }
}

} // namespace

void PhantomSpec::validate() const
{
    if (dims.x < 4 || dims.y < 4 || dims.z < 4) throw std::invalid_argument("phantom dims must be at least 4 per axis");
    if (n_blobs < 1) throw std::invalid_argument("phantom needs at least one blob");
    if (n_blobs > 65535) throw std::invalid_argument("too many blobs for 16-bit labels");
    if (deformation.kind != Deformation::Kind::none) {
        if (deformation.amplitude < 0.0 || deformation.length <= 0.0) throw std::invalid_argument("invalid deformation parameters");
        if (!(deformation.amplitude < deformation.length / 4.0)) {
            throw std::invalid_argument("deformation amplitude " + std::to_string(deformation.amplitude)
                                        + " violates the invertibility bound (must be < length/4 = "
                                        + std::to_string(deformation.length / 4.0) + ")");
        }
    }
    if (remap.kind == IntensityRemap::Kind::gamma && !(remap.param > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (remap.kind == IntensityRemap::Kind::inverted_bands && !(remap.param >= 1.0)) {
        throw std::invalid_argument("band count must be >= 1");
    }
}

DenseField phantom_deformation(const PhantomSpec& spec)
{
    spec.validate();
    const Dims d = spec.dims;
    DenseField field(d);
    const double A = spec.deformation.amplitude;
    const double L = spec.deformation.length;
    switch (spec.deformation.kind) {
    case Deformation::Kind::none:
        break;
    case Deformation::Kind::sinusoidal: {
        // Components peak together at coordinates == L/4 (mod L), giving
        // a maximum norm of exactly A.
        const double c = A / std::sqrt(3.0);
        const double w = 2.0 * std::numbers::pi / L;
        parallel_for(d.z, [&](int z) {
            for (int y = 0; y < d.y; ++y) {
                for (int x = 0; x < d.x; ++x) field.at(x, y, z) = {c * std::sin(w * y), c * std::sin(w * z), c * std::sin(w * x)};
            }
        });
        break;
    }
    case Deformation::Kind::random_smooth: {
        std::array<std::vector<double>, 3> comp;
        for (std::size_t a = 0; a < 3; ++a) {
            comp[a].resize(d.count());
            for (std::size_t i = 0; i < d.count(); ++i) comp[a][i] = normal(spec.seed, field_stream, 3 * i + a);
            smooth_component(comp[a], d, L);
        }
        double peak = 0.0;
        for (std::size_t i = 0; i < d.count(); ++i) {
            peak = std::max(peak, std::sqrt(comp[0][i] * comp[0][i] + comp[1][i] * comp[1][i] + comp[2][i] * comp[2][i]));
        }
        const double scale = peak > 0.0 ? A / peak : 0.0;
        for (std::size_t i = 0; i < d.count(); ++i) field.vectors[i] = {scale * comp[0][i], scale * comp[1][i], scale * comp[2][i]};
        break;
    }
    }
    return field;
}

Volume apply_remap(const Volume& v, const IntensityRemap& remap)
{
    if (remap.kind == IntensityRemap::Kind::identity) return v;
    const auto [lo, hi] = min_max(v);
    const double range = hi > lo ? static_cast<double>(hi) - lo : 1.0;
    Volume out = v;
    for (auto& x : out.data) {
        const double n = (static_cast<double>(x) - lo) / range;
        double r = n;
        if (remap.kind == IntensityRemap::Kind::gamma) {
            r = std::pow(n, remap.param);
        }
        else {
            // Triangle wave: every other band runs downhill.
            const double t = std::min(n * remap.param, remap.param - 1e-12);
            const double band = std::floor(t);
            const double frac = t - band;
            r = static_cast<long long>(band) % 2 == 0 ? frac : 1.0 - frac;
        }
        x = static_cast<float>(r);
    }
    return out;
}

Phantom generate(const PhantomSpec& spec)
{
    spec.validate();
    const Dims d = spec.dims;
    const auto blobs = make_blobs(spec);

    Phantom p;
    p.a = Volume(d);
    p.labels_a = LabelVolume(d);
    parallel_for(d.z, [&](int z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                double v = 0.3 + 0.2 * (x / double(d.x) + 0.5 * y / double(d.y) + 0.25 * z / double(d.z));
                double best = 0.0;
                int label = 0;
                for (std::size_t k = 0; k < blobs.size(); ++k) {
                    const auto& b = blobs[k];
                    const double dx = x - b.center[0], dy = y - b.center[1], dz = z - b.center[2];
                    const double r2 = (dx * dx + dy * dy + dz * dz) / (b.sigma * b.sigma);
                    if (r2 > 36.0) continue;
                    const double g = std::exp(-0.5 * r2);
                    v += b.amplitude * g;
                    // core: within 1.2 sigma; overlapping cores go to the strongest blob
                    if (r2 < 1.44 && g > best) {
                        best = g;
                        label = static_cast<int>(k) + 1;
                    }
                }
                p.a.at(x, y, z) = static_cast<float>(v);
                p.labels_a.at(x, y, z) = static_cast<std::uint16_t>(label);
            }
        }
    });

    for (auto l : p.labels_a.data) {
        if (l != 0 && !p.labels_a.label_names.count(l)) p.labels_a.label_names[l] = "blob_" + std::to_string(l);
    }

    const auto [lo, hi] = min_max(p.a);
    const double noise_sigma = 0.02 * (static_cast<double>(hi) - lo);
    for (std::size_t i = 0; i < p.a.data.size(); ++i) {
        p.a.data[i] = static_cast<float>(p.a.data[i] + noise_sigma * normal(spec.seed, noise_stream, i));
    }

    p.truth = phantom_deformation(spec);
    p.b = apply_remap(warp(p.a, p.truth), spec.remap);
    p.labels_b = warp(p.labels_a, p.truth);
    return p;
}

std::string to_string(const PhantomSpec& spec)
{
    std::ostringstream s;
    s.precision(17);
    s << "dims=" << spec.dims.x << 'x' << spec.dims.y << 'x' << spec.dims.z << " seed=" << spec.seed
      << " blobs=" << spec.n_blobs << " deformation=";
    switch (spec.deformation.kind) {
    case Deformation::Kind::none: s << "none"; break;
    case Deformation::Kind::sinusoidal: s << "sinusoidal(" << spec.deformation.amplitude << ',' << spec.deformation.length << ')'; break;
    case Deformation::Kind::random_smooth:
        s << "random_smooth(" << spec.deformation.amplitude << ',' << spec.deformation.length << ')';
        break;
    }
    s << " remap=";
    switch (spec.remap.kind) {
    case IntensityRemap::Kind::identity: s << "identity"; break;
    case IntensityRemap::Kind::gamma: s << "gamma(" << spec.remap.param << ')'; break;
    case IntensityRemap::Kind::inverted_bands: s << "inverted_bands(" << spec.remap.param << ')'; break;
    }
    return s.str();
}

PhantomSpec parse_phantom_spec(const std::string& text, PhantomSpec spec)
{
    std::string t = text;
    std::replace(t.begin(), t.end(), ';', ' ');
    std::istringstream in(t);
    std::string tok;
    auto number = [](const std::string& s, const std::string& what) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        }
        catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || s.empty()) throw std::invalid_argument("bad number '" + s + "' in " + what);
        return v;
    };
    static const std::regex call(R"((\w+)(?:\(([^,()]*)(?:,([^,()]*))?\))?)");
    while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("phantom spec token '" + tok + "' is not key=value");
        const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
        if (key == "dims") {
            std::smatch m;
            static const std::regex dims_re(R"((\d+)x(\d+)x(\d+))");
            if (!std::regex_match(value, m, dims_re)) throw std::invalid_argument("dims must look like 64x64x64");
            spec.dims = {std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3])};
        }
        else if (key == "seed") {
            spec.seed = std::stoull(value, nullptr, 0);
        }
        else if (key == "blobs") {
            spec.n_blobs = static_cast<int>(number(value, "blobs"));
        }
        else if (key == "deformation" || key == "remap") {
            std::smatch m;
            if (!std::regex_match(value, m, call)) throw std::invalid_argument("cannot parse " + key + " '" + value + "'");
            const std::string name = m[1];
            const bool has1 = m[2].matched, has2 = m[3].matched;
            if (key == "deformation") {
                if (name == "none" && !has1) spec.deformation = {};
                else if ((name == "sinusoidal" || name == "random_smooth") && has1 && has2) {
                    spec.deformation.kind = name == "sinusoidal" ? Deformation::Kind::sinusoidal : Deformation::Kind::random_smooth;
                    spec.deformation.amplitude = number(m[2], name);
                    spec.deformation.length = number(m[3], name);
                }
                else {
                    throw std::invalid_argument("unknown deformation '" + value + "'");
                }
            }
            else {
                if (name == "identity" && !has1) spec.remap = {};
                else if ((name == "gamma" || name == "inverted_bands") && has1 && !has2) {
                    spec.remap.kind = name == "gamma" ? IntensityRemap::Kind::gamma : IntensityRemap::Kind::inverted_bands;
                    spec.remap.param = number(m[2], name);
                }
                else {
                    throw std::invalid_argument("unknown remap '" + value + "'");
                }
            }
        }
        else {
            throw std::invalid_argument("unknown phantom spec key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

} // namespace mmreg
