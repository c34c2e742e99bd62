#include "mmreg/rigid.h"

#include "mmreg/parallel.h"
#include "mmreg/similarity.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mmreg {

namespace {

using Mat3 = std::array<Vec3, 3>;

Mat3 rotation_matrix(const Vec3& r)
{
    const double cx = std::cos(r[0]), sx = std::sin(r[0]);
    const double cy = std::cos(r[1]), sy = std::sin(r[1]);
    const double cz = std::cos(r[2]), sz = std::sin(r[2]);
    // Rz * Ry * Rx
    return {{{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
             {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
             {-sy, cy * sx, cy * cx}}};
}

Vec3 physical_center(const Volume& v)
{
    return {v.origin[0] + 0.5 * (v.dims.x - 1) * v.spacing[0], v.origin[1] + 0.5 * (v.dims.y - 1) * v.spacing[1],
            v.origin[2] + 0.5 * (v.dims.z - 1) * v.spacing[2]};
}

// Moving-image voxel coordinates of every reference voxel under transform.
template <typename Fn>
void for_each_mapped(const Volume& moving, const RigidTransform& t, const Volume& reference, const Vec3& c, Fn&& fn)
{
    const Mat3 R = rotation_matrix(t.rotation_rad);
    const Dims d = reference.dims;
    parallel_for(d.z, [&](int z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                const Vec3 p{reference.origin[0] + x * reference.spacing[0] - c[0],
                             reference.origin[1] + y * reference.spacing[1] - c[1],
                             reference.origin[2] + z * reference.spacing[2] - c[2]};
                Vec3 q{};
                for (std::size_t i = 0; i < 3; ++i) {
                    const double phys = R[i][0] * p[0] + R[i][1] * p[1] + R[i][2] * p[2] + c[i] + t.translation_mm[i];
                    q[i] = (phys - moving.origin[i]) / moving.spacing[i];
                }
                fn(linear_index(d, x, y, z), q);
            }
        }
    });
}

} // namespace

Volume apply_rigid(const Volume& moving, const RigidTransform& transform, const Volume& reference)
{
    Volume out(reference.dims, reference.spacing, reference.origin);
    for_each_mapped(moving, transform, reference, physical_center(reference), [&](std::size_t i, const Vec3& q) {
        out.data[i] = static_cast<float>(sample_trilinear(moving, q[0], q[1], q[2]));
    });
    return out;
}

RigidResult register_rigid(const Volume& fixed, const Volume& moving, const RigidOptions& options)
{
    if (options.iterations < 0 || options.levels < 1) throw std::invalid_argument("invalid rigid options");
    const auto fixed_pyr = gaussian_pyramid(fixed, options.levels);
    const auto moving_pyr = gaussian_pyramid(moving, options.levels);

    // Rotation parameters are scaled so that one unit moves the volume
    // boundary by about one mm.
    const double radius = 0.5 * std::max({fixed.dims.x * fixed.spacing[0], fixed.dims.y * fixed.spacing[1],
                                          fixed.dims.z * fixed.spacing[2]});
    auto to_transform = [&](const std::array<double, 6>& theta) {
        return RigidTransform{{theta[0] / radius, theta[1] / radius, theta[2] / radius}, {theta[3], theta[4], theta[5]}};
    };

    const Vec3 center = physical_center(fixed);
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::array<double, 6> best{};
    double sigma = options.initial_radius_mm;
    RigidResult result;

    for (int level = options.levels - 1; level >= 0; --level) {
        const Volume& f = fixed_pyr[static_cast<std::size_t>(level)];
        const Volume& m = moving_pyr[static_cast<std::size_t>(level)];
        const std::vector<double> fixed_values(f.data.begin(), f.data.end());
        const IntensityRange range_f = percentile_range(std::span<const float>(f.data));
        const IntensityRange range_m = percentile_range(std::span<const float>(m.data));
        std::vector<double> warped(f.dims.count());
        auto cost = [&](const std::array<double, 6>& theta) {
            for_each_mapped(m, to_transform(theta), f, center, [&](std::size_t i, const Vec3& q) {
                warped[i] = sample_trilinear(m, q[0], q[1], q[2]);
            });
            ++result.evaluations;
            return nmi_from_histogram(build_joint_histogram(fixed_values, warped, range_f, range_m, options.bins));
        };

        double best_cost = cost(best);
        const int iters = options.iterations / options.levels + (level == 0 ? options.iterations % options.levels : 0);
        for (int it = 0; it < iters; ++it) {
            std::array<double, 6> trial = best;
            for (auto& t : trial) t += sigma * normal(rng);
            const double c = cost(trial);
            if (c < best_cost) {
                best = trial;
                best_cost = c;
                sigma *= options.growth;
                ++result.accepted;
            }
            else {
                sigma *= options.shrink;
            }
        }
        result.cost = best_cost;
    }
    result.transform = to_transform(best);
    result.resampled = apply_rigid(moving, result.transform, fixed);
    return result;
}

} // namespace mmreg
