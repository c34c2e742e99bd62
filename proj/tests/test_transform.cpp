#include "doctest.h"
#include "support.h"

#include "mmreg/transform.h"

#include <cmath>
#include <random>

using namespace mmreg;

namespace {

double max_diff(const DenseField& a, const DenseField& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.vectors.size(); ++i)
        for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(a.vectors[i][c] - b.vectors[i][c]));
    return m;
}

bool is_constant(const DenseField& f, Vec3 c, double tol)
{
    for (const auto& v : f.vectors)
        for (int a = 0; a < 3; ++a)
            if (std::abs(v[a] - c[a]) > tol) return false;
    return true;
}

} // namespace

TEST_CASE("control grid geometry")
{
    const ControlGrid g({64, 64, 64}, 8);
    CHECK(g.grid_dims == control_grid_dims({64, 64, 64}, 8));
    CHECK(g.covers({64, 64, 64}));
    for (int a = 0; a < 3; ++a) CHECK((g.grid_dims[a] - 1) * 8 >= 64);
    CHECK(g.node_position(0) == -8.0);
    const ControlGrid small({16, 16, 16}, 8);
    CHECK_FALSE(small.covers({64, 64, 64}));
    CHECK_THROWS(interpolate_dense(small, {64, 64, 64}));
    CHECK_THROWS(ControlGrid({8, 8, 8}, 0));
}

TEST_CASE("dense interpolation")
{
    const Dims d{20, 17, 13};
    ControlGrid g(d, 4);
    CHECK(interpolate_dense(g, d).max_norm() == 0.0);

    for (auto& n : g.displacements) n = {2, 0, 0};
    CHECK(is_constant(interpolate_dense(g, d), {2, 0, 0}, 0.0));

    ControlGrid h(d, 4);
    for (int k = 0; k < h.grid_dims.z; ++k)
        for (int j = 0; j < h.grid_dims.y; ++j) h.node(2, j, k) = {4, 0, 0}; // voxel x = 4
    const DenseField f = interpolate_dense(h, d);
    CHECK(f.at(2, 5, 5)[0] == doctest::Approx(2.0));
    CHECK(f.at(6, 5, 5)[0] == doctest::Approx(2.0));
    CHECK(f.at(4, 5, 5)[0] == 4.0);

    // exact at node voxels
    const ControlGrid r = test::random_grid(d, 4, 3.0, 1);
    const DenseField rf = interpolate_dense(r, d);
    for (int k = 1; k < r.grid_dims.z; ++k)
        for (int j = 1; j < r.grid_dims.y; ++j)
            for (int i = 1; i < r.grid_dims.x; ++i) {
                const int x = (i - 1) * 4, y = (j - 1) * 4, z = (k - 1) * 4;
                if (x >= d.x || y >= d.y || z >= d.z) continue;
                CHECK(rf.at(x, y, z) == r.node(i, j, k));
            }
}

TEST_CASE("pullback is the adjoint of interpolation")
{
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Dims d{23, 19, 17};
    for (int trial = 0; trial < 20; ++trial) {
        const int spacing = 3 + trial % 6;
        const ControlGrid p = test::random_grid(d, spacing, 1.0, static_cast<unsigned>(trial + 1));
        DenseField g(d);
        for (auto& v : g.vectors) v = {u(rng), u(rng), u(rng)};
        const auto pb = pullback_to_nodes(p, g);
        const DenseField ip = interpolate_dense(p, d);
        double lhs = 0.0, rhs = 0.0, scale = 0.0;
        for (std::size_t n = 0; n < pb.size(); ++n)
            for (int a = 0; a < 3; ++a) lhs += pb[n][a] * p.displacements[n][a];
        for (std::size_t i = 0; i < g.vectors.size(); ++i)
            for (int a = 0; a < 3; ++a) {
                rhs += g.vectors[i][a] * ip.vectors[i][a];
                scale += std::abs(g.vectors[i][a] * ip.vectors[i][a]);
            }
        CHECK(std::abs(lhs - rhs) <= 1e-9 * scale);
    }
}

TEST_CASE("warp")
{
    const Volume v = test::noise_volume({9, 8, 7}, 2);
    CHECK(warp(v, DenseField(v.dims)) == v);

    const Volume s = warp(v, DenseField(v.dims, {1, 0, 0}));
    for (int z = 0; z < 7; ++z)
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) CHECK(s.at(x, y, z) == v.at(x + 1, y, z));
            CHECK(s.at(8, y, z) == v.at(8, y, z)); // clamped edge
        }

    const Volume h = warp(v, DenseField(v.dims, {0.5, 0, 0}));
    for (int x = 0; x < 8; ++x) CHECK(h.at(x, 3, 3) == doctest::Approx(0.5 * (v.at(x, 3, 3) + v.at(x + 1, 3, 3))).epsilon(1e-6));

    const Volume n = warp(v, DenseField(v.dims, {0.4, 1.6, 0}), Interp::nearest);
    CHECK(n.at(2, 2, 2) == v.at(2, 4, 2));

    LabelVolume l(v.dims);
    l.at(3, 3, 3) = 5;
    const LabelVolume lw = warp(l, DenseField(v.dims, {1, 0, 0}));
    CHECK(lw.at(2, 3, 3) == 5);
    CHECK(lw.at(3, 3, 3) == 0);

    CHECK_THROWS(warp(v, DenseField({9, 8, 6})));
}

TEST_CASE("composition")
{
    const Dims d{16, 16, 16};
    const DenseField zero(d), g = test::smooth_field(d, 2.0, 1), f = test::smooth_field(d, 1.5, 2);
    CHECK(max_diff(compose(zero, g), g) == 0.0);
    CHECK(max_diff(compose(f, zero), f) == 0.0);
    CHECK(is_constant(compose(DenseField(d, {1, 2, 3}), DenseField(d, {0.5, -1, 2})), {1.5, 1, 5}, 1e-12));
    CHECK_THROWS(compose(zero, DenseField({16, 16, 15})));

    const DenseField h = test::smooth_field(d, 0.5, 3);
    // associativity within interpolation tolerance, away from the clamped border
    const DenseField l = compose(compose(f, g), h), r = compose(f, compose(g, h));
    double m = 0.0;
    for (int z = 4; z < 12; ++z)
        for (int y = 4; y < 12; ++y)
            for (int x = 4; x < 12; ++x)
                for (int a = 0; a < 3; ++a) m = std::max(m, std::abs(l.at(x, y, z)[a] - r.at(x, y, z)[a]));
    CHECK(m < 0.1);
}

TEST_CASE("inversion")
{
    const Dims d{32, 32, 32};
    CHECK(invert(DenseField(d)).max_norm() == 0.0);
    CHECK(is_constant(invert(DenseField(d, {1.5, -2, 0.25})), {-1.5, 2, -0.25}, 1e-12));

    const DenseField f = test::smooth_field(d, 2.0, 5);
    const InversionResult r = invert_field(f, 20, 0.01);
    CHECK(r.iterations <= 20);
    CHECK(compose(f, r.field).max_norm() < 0.1);
}

TEST_CASE("inverse consistency step")
{
    const Dims d{24, 24, 24};
    auto [a, b] = inverse_consistency_step(DenseField(d), DenseField(d));
    CHECK(a.max_norm() == 0.0);
    CHECK(b.max_norm() == 0.0);

    auto [c1, c2] = inverse_consistency_step(DenseField(d, {1, -2, 0.5}), DenseField(d, {-1, 2, -0.5}));
    CHECK(is_constant(c1, {1, -2, 0.5}, 1e-12));
    CHECK(is_constant(c2, {-1, 2, -0.5}, 1e-12));

    const DenseField fwd = test::smooth_field(d, 1.5, 7);
    DenseField bwd = invert(fwd);
    const DenseField noise = test::smooth_field(d, 0.6, 8);
    for (std::size_t i = 0; i < bwd.vectors.size(); ++i)
        for (int k = 0; k < 3; ++k) bwd.vectors[i][k] += noise.vectors[i][k];
    const double before = compose(fwd, bwd).max_norm();
    auto [f2, b2] = inverse_consistency_step(fwd, bwd);
    CHECK(compose(f2, b2).max_norm() <= before + 1e-6);
}

TEST_CASE("grid sampling and upsampling")
{
    const Dims coarse{16, 16, 16}, fine{32, 32, 32};
    ControlGrid g(coarse, 4);
    for (auto& n : g.displacements) n = {1, -0.5, 2};
    const ControlGrid u = upsample_grid(g, coarse, fine, 4);
    CHECK(u.covers(fine));
    for (const auto& n : u.displacements) CHECK(n == Vec3{2, -1, 4});

    const DenseField f = test::smooth_field(fine, 1.0, 2);
    const ControlGrid s = sample_grid(f, 4);
    CHECK(s.covers(fine));
    CHECK(s.node(2, 3, 4) == f.at(4, 8, 12));
}
