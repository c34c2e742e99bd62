#include "mmreg/stitch.h"

#include "mmreg/parallel.h"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mmreg {

std::vector<int> axis_origins(int extent, int tile, int stride)
{
    if (tile < 1 || stride < 1 || stride > tile) throw std::invalid_argument("stride must lie in [1, tile]");
    if (tile > extent) {
        throw std::invalid_argument("tile " + std::to_string(tile) + " larger than volume extent " + std::to_string(extent));
    }
    std::vector<int> out;
    for (int o = 0; o + tile <= extent; o += stride) out.push_back(o);
    if (out.back() + tile < extent) out.push_back(extent - tile);
    return out;
}

TilePlan plan_tiles(Dims dims, Dims tile_dims, Dims strides)
{
    TilePlan plan{dims, tile_dims, strides, {}};
    const auto xs = axis_origins(dims.x, tile_dims.x, strides.x);
    const auto ys = axis_origins(dims.y, tile_dims.y, strides.y);
    const auto zs = axis_origins(dims.z, tile_dims.z, strides.z);
    for (int z : zs) {
        for (int y : ys) {
            for (int x : xs) plan.origins.push_back({x, y, z});
        }
    }
    return plan;
}

std::vector<std::uint32_t> coverage_counts(const TilePlan& plan)
{
    const Dims d = plan.volume_dims, t = plan.tile_dims;
    std::vector<std::uint32_t> count(d.count(), 0);
    for (const auto& o : plan.origins) {
        for (int z = o[2]; z < o[2] + t.z; ++z) {
            for (int y = o[1]; y < o[1] + t.y; ++y) {
                for (int x = o[0]; x < o[0] + t.x; ++x) ++count[linear_index(d, x, y, z)];
            }
        }
    }
    return count;
}

Volume extract_tile(const Volume& volume, const std::array<int, 3>& origin, Dims tile_dims)
{
    const Vec3 org{volume.origin[0] + origin[0] * volume.spacing[0], volume.origin[1] + origin[1] * volume.spacing[1],
                   volume.origin[2] + origin[2] * volume.spacing[2]};
    Volume tile(tile_dims, volume.spacing, org);
    for (int z = 0; z < tile_dims.z; ++z) {
        for (int y = 0; y < tile_dims.y; ++y) {
            for (int x = 0; x < tile_dims.x; ++x) tile.at(x, y, z) = volume.at(origin[0] + x, origin[1] + y, origin[2] + z);
        }
    }
    return tile;
}

Volume stitch_map(const Volume& volume, const TilePlan& plan, const TileMapper& mapper, bool parallel_tiles)
{
    if (plan.volume_dims != volume.dims) throw std::invalid_argument("tile plan was made for different volume dims");
    const Dims d = volume.dims, t = plan.tile_dims;
    std::vector<double> sum(d.count(), 0.0);
    const auto count = coverage_counts(plan);

    constexpr std::size_t batch = 256;
    std::vector<Volume> mapped;
    for (std::size_t first = 0; first < plan.origins.size(); first += batch) {
        const std::size_t n = std::min(batch, plan.origins.size() - first);
        mapped.assign(n, Volume{});
        auto map_one = [&](int k) {
            const auto& o = plan.origins[first + static_cast<std::size_t>(k)];
            Volume out = mapper(extract_tile(volume, o, t));
            if (out.dims != t || out.data.size() != t.count()) {
                throw std::invalid_argument("mapper returned a " + to_string(out.dims) + " tile, expected " + to_string(t));
            }
            mapped[static_cast<std::size_t>(k)] = std::move(out);
        };
        if (parallel_tiles) parallel_for(static_cast<int>(n), map_one);
        else
            for (int k = 0; k < static_cast<int>(n); ++k) map_one(k);

        for (std::size_t k = 0; k < n; ++k) {
            const auto& o = plan.origins[first + k];
            const Volume& tile = mapped[k];
            for (int z = 0; z < t.z; ++z) {
                for (int y = 0; y < t.y; ++y) {
                    for (int x = 0; x < t.x; ++x) sum[linear_index(d, o[0] + x, o[1] + y, o[2] + z)] += tile.at(x, y, z);
                }
            }
        }
    }

    Volume out(d, volume.spacing, volume.origin);
    for (std::size_t i = 0; i < sum.size(); ++i) out.data[i] = static_cast<float>(sum[i] / count[i]);
    return out;
}

TileMapper identity_mapper()
{
    return [](const Volume& v) { return v; };
}

TileMapper affine_mapper(double a, double b)
{
    return [a, b](const Volume& v) {
        Volume out = v;
        for (auto& x : out.data) x = static_cast<float>(a * x + b);
        return out;
    };
}

TileMapper lut_mapper(std::vector<std::pair<double, double>> table)
{
    if (table.empty()) throw std::invalid_argument("empty lookup table");
    std::sort(table.begin(), table.end());
    return [table = std::move(table)](const Volume& v) {
        Volume out = v;
        for (auto& x : out.data) {
            const double in = x;
            if (in <= table.front().first) {
                x = static_cast<float>(table.front().second);
                continue;
            }
            if (in >= table.back().first) {
                x = static_cast<float>(table.back().second);
                continue;
            }
            const auto hi = std::upper_bound(table.begin(), table.end(), in,
                                             [](double value, const auto& e) { return value < e.first; });
            const auto lo = hi - 1;
            const double w = (in - lo->first) / (hi->first - lo->first);
            x = static_cast<float>(lo->second + w * (hi->second - lo->second));
        }
        return out;
    };
}

std::vector<std::pair<double, double>> load_lut(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lookup table '" + path + "'");
    std::vector<std::pair<double, double>> table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream s(line);
        double a, b;
        if (!(s >> a >> b)) throw std::runtime_error("lookup table line " + std::to_string(line_no) + ": expected 'in out'");
        table.emplace_back(a, b);
    }
    if (table.empty()) throw std::runtime_error("lookup table '" + path + "' is empty");
    return table;
}

} // namespace mmreg
