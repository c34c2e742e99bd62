#include "doctest.h"
#include "support.h"

#include "mmreg/eval.h"
#include "mmreg/parallel.h"
#include "mmreg/registration.h"

#include <cmath>
#include <random>
#include <sstream>

using namespace mmreg;

namespace {

struct Rel
{
    double num = 0.0, den = 0.0;
    void add(double a, double fd)
    {
        num += (a - fd) * (a - fd);
        den += fd * fd;
    }
    double value() const { return std::sqrt(num / den); }
};

double regularizer_fd_error(Regularizer kind, unsigned seed)
{
    const ControlGrid g = test::random_grid({30, 26, 22}, 4, 1.5, seed);
    const RegularizerValue r = regularize(g, kind);
    std::mt19937 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, g.node_count() - 1);
    Rel rel;
    for (int k = 0; k < 50; ++k) {
        const std::size_t n = pick(rng);
        const int a = k % 3;
        ControlGrid up = g, dn = g;
        up.displacements[n][a] += 0.01;
        dn.displacements[n][a] -= 0.01;
        rel.add(r.gradient[n][a], (regularize(up, kind).value - regularize(dn, kind).value) / 0.02);
    }
    return rel.value();
}

double cost_fd_error(Measure measure, int nodes)
{
    const Phantom p = test::small_phantom(3);
    const Volume w = test::wave_volume(p.a.dims, 2);
    RegistrationConfig c;
    c.measure = measure;
    c.lambda = 0.01;
    c.spacing_vox = 4;
    const ControlGrid g = test::random_grid(p.a.dims, 4, 0.7, 5);
    const auto [v, grad] = total_cost(w, p.a, g, c);
    std::mt19937 rng(2);
    std::uniform_int_distribution<std::size_t> pick(0, g.node_count() - 1);
    Rel rel;
    for (int k = 0; k < nodes; ++k) {
        const std::size_t n = pick(rng);
        const int a = k % 3;
        ControlGrid up = g, dn = g;
        up.displacements[n][a] += 0.01;
        dn.displacements[n][a] -= 0.01;
        rel.add(grad[n][a], (total_cost(w, p.a, up, c).first - total_cost(w, p.a, dn, c).first) / 0.02);
    }
    return rel.value();
}

double max_node_difference(const ControlGrid& g)
{
    double m = 0.0;
    const Dims d = g.grid_dims;
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i)
                for (int a = 0; a < 3; ++a) {
                    const double v = g.node(i, j, k)[a];
                    if (i + 1 < d.x) m = std::max(m, std::abs(g.node(i + 1, j, k)[a] - v));
                    if (j + 1 < d.y) m = std::max(m, std::abs(g.node(i, j + 1, k)[a] - v));
                    if (k + 1 < d.z) m = std::max(m, std::abs(g.node(i, j, k + 1)[a] - v));
                }
    return m;
}

RegistrationConfig quick(Measure m)
{
    RegistrationConfig c;
    c.measure = m;
    c.lambda = 1e-5;
    c.spacing_vox = 4;
    c.levels = 2;
    c.max_iters_per_level = 30;
    return c;
}

} // namespace

TEST_CASE("config parsing and validation")
{
    CHECK(parse_measure("nmi") == Measure::nmi);
    CHECK(parse_measure("nmi+mind") == Measure::nmi_mind);
    CHECK(parse_measure("lncc") == Measure::lncc);
    CHECK_THROWS(parse_measure("mattes"));
    CHECK(parse_regularizer("l2") == Regularizer::l2);
    RegistrationConfig c;
    CHECK_NOTHROW(c.validate());
    c.lambda = -1;
    CHECK_THROWS(c.validate());
    c = {};
    c.levels = 0;
    CHECK_THROWS(c.validate());
    c = {};
    c.combine.beta = 1.2;
    CHECK_THROWS(c.validate());
}

TEST_CASE("regularizer values")
{
    const Dims d{16, 16, 16};
    ControlGrid g(d, 4);
    for (auto& n : g.displacements) n = {1.0, 2.0, -3.0};
    CHECK(regularizer_tv(g).value == doctest::Approx(0.0));
    CHECK(regularizer_l2(g).value == 0.0);

    // one node raised by 1 along x: six forward differences of 1 in L2
    ControlGrid h(d, 4);
    h.node(2, 2, 2) = {1, 0, 0};
    CHECK(regularizer_l2(h).value == doctest::Approx(6.0));
    CHECK(regularizer_tv(h).value > 0.0);
}

TEST_CASE("regularizer gradients match central differences")
{
    CHECK(regularizer_fd_error(Regularizer::tv, 1) < 1e-5);
    CHECK(regularizer_fd_error(Regularizer::l2, 2) < 1e-6);
}

TEST_CASE("total cost gradient matches central differences")
{
    CHECK(cost_fd_error(Measure::nmi, 20) < 1e-3);
    CHECK(cost_fd_error(Measure::lncc, 20) < 1e-3);
    CHECK(cost_fd_error(Measure::mind, 20) < 5e-2);
}

TEST_CASE("descent step decreases the cost")
{
    const Phantom p = test::small_phantom(4);
    PhantomSpec s;
    s.dims = {32, 32, 32};
    s.n_blobs = 24;
    s.seed = 4;
    s.deformation = {Deformation::Kind::sinusoidal, 2.0, 16.0};
    const Phantom q = generate(s);
    const RegistrationConfig c = quick(Measure::lncc);
    const CostFunction cost(make_dissimilarity(q.b, q.a, DenseField(q.a.dims), c), q.a.dims, c.lambda, c.regularizer);
    ControlGrid g(q.a.dims, 4);
    std::vector<Vec3> grad;
    double v = cost.evaluate(g, &grad);
    const double start = v;
    double move = 1.0;
    for (int i = 0; i < 5; ++i) {
        const double before = v;
        REQUIRE(descent_step(cost, g, v, grad, &move, 1));
        CHECK(v < before);
        CHECK(move <= 1.0);
    }
    CHECK(v < start);
    (void)p;
}

TEST_CASE("registration of an image to itself stays near identity")
{
    const Phantom p = test::small_phantom(11);
    for (Measure m : {Measure::nmi, Measure::lncc, Measure::mind, Measure::nmi_mind}) {
        CAPTURE(to_string(m));
        const RegistrationResult r = register_deformable(p.a, p.a, quick(m));
        double mx = 0.0;
        for (const auto& n : r.grid.displacements) mx = std::max(mx, std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]));
        CHECK(mx < 0.25);
        // already aligned: the NMI probe step cannot move, so s falls back to 1
        if (m == Measure::nmi_mind)
            for (const auto& t : r.levels) CHECK((t.scale_fallback ? t.scale == 1.0 : t.scale > 0.0));
    }
}

TEST_CASE("accepted costs never increase")
{
    PhantomSpec s;
    s.dims = {32, 32, 32};
    s.n_blobs = 24;
    s.deformation = {Deformation::Kind::sinusoidal, 2.0, 16.0};
    const Phantom p = generate(s);
    const RegistrationResult r = register_deformable(p.b, p.a, quick(Measure::nmi));
    REQUIRE(r.levels.size() == 2);
    for (const auto& level : r.levels) {
        const auto& c = level.forward.costs;
        for (std::size_t i = 1; i < c.size(); ++i) CHECK(c[i] < c[i - 1]);
    }
    CHECK(endpoint_error(r.field(), p.truth).mean < endpoint_error(DenseField(p.a.dims), p.truth).mean);

    std::ostringstream rep;
    write_report(rep, r);
    CHECK(rep.str().find("level.0.cost_trace=") != std::string::npos);
    CHECK(rep.str().find("measure=nmi\n") != std::string::npos);
}

TEST_CASE("huge lambda flattens the grid")
{
    PhantomSpec s;
    s.dims = {32, 32, 32};
    s.n_blobs = 24;
    s.deformation = {Deformation::Kind::sinusoidal, 2.0, 16.0};
    const Phantom p = generate(s);
    RegistrationConfig c = quick(Measure::nmi);
    c.lambda = 1e6;
    const RegistrationResult r = register_deformable(p.b, p.a, c);
    CHECK(max_node_difference(r.grid) < 1e-2);
}

TEST_CASE("both images constant is rejected")
{
    const Volume c({16, 16, 16}, {1, 1, 1}, {0, 0, 0}, 1.0f);
    CHECK_THROWS_AS(register_deformable(c, c, quick(Measure::nmi)), std::invalid_argument);
}

TEST_CASE("results do not depend on the thread count")
{
    PhantomSpec s;
    s.dims = {32, 32, 32};
    s.n_blobs = 24;
    s.deformation = {Deformation::Kind::sinusoidal, 2.0, 16.0};
    s.remap = {IntensityRemap::Kind::inverted_bands, 4};
    const Phantom p = generate(s);
    RegistrationConfig c = quick(Measure::nmi_mind);
    c.max_iters_per_level = 8;
    const int saved = num_threads();
    set_num_threads(1);
    const RegistrationResult one = register_deformable(p.b, p.a, c);
    set_num_threads(4);
    const RegistrationResult four = register_deformable(p.b, p.a, c);
    set_num_threads(saved);
    CHECK(one.grid.displacements == four.grid.displacements);
    CHECK(one.final_dissimilarity == four.final_dissimilarity);
}

TEST_CASE("grid search")
{
    PhantomSpec s;
    s.dims = {32, 32, 32};
    s.n_blobs = 24;
    s.deformation = {Deformation::Kind::sinusoidal, 2.0, 16.0};
    const Phantom p = generate(s);
    RegistrationConfig base = quick(Measure::nmi);
    base.max_iters_per_level = 10;

    const auto one = grid_search(p.b, p.a, base, {1e-5}, {4}, {2});
    REQUIRE(one.size() == 1);
    CHECK(one[0].ok);
    const RegistrationResult direct = register_deformable(p.b, p.a, base);
    CHECK(one[0].final_dissimilarity == direct.final_dissimilarity);
    CHECK(one[0].score == direct.final_dissimilarity);

    // over-regularised cell ranks last
    const auto two = grid_search(p.b, p.a, base, {1e3, 1e-5}, {4}, {2});
    REQUIRE(two.size() == 2);
    CHECK(two[0].lambda == 1e-5);
    CHECK(two[0].score < two[1].score);

    // the full published lists enumerate 75 cells (no iterations to keep it quick)
    base.max_iters_per_level = 0;
    const auto all = grid_search(p.b, p.a, base, {0.0125, 0.025, 0.05, 0.1, 0.2}, {8, 10, 12, 14, 16}, {2, 3, 4});
    CHECK(all.size() == 75);
    std::ostringstream csv;
    write_grid_search_csv(csv, all);
    int lines = 0;
    for (char ch : csv.str()) lines += ch == '\n';
    CHECK(lines == 76);

    // ties break on (lambda, spacing, levels)
    for (std::size_t i = 1; i < all.size(); ++i) {
        if (all[i].ok && all[i - 1].ok && all[i].score == all[i - 1].score) {
            CHECK(std::tie(all[i - 1].lambda, all[i - 1].spacing_vox, all[i - 1].levels) <
                  std::tie(all[i].lambda, all[i].spacing_vox, all[i].levels));
        }
    }
    CHECK_THROWS(grid_search(p.b, p.a, base, {}, {4}, {2}));
}
