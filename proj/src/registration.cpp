#include "mmreg/registration.h"

#include "mmreg/parallel.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mmreg {

std::string to_string(Measure m)
{
    switch (m) {
    case Measure::nmi: return "nmi";
    case Measure::mind: return "mind";
    case Measure::nmi_mind: return "nmi+mind";
    case Measure::lncc: return "lncc";
    }
    return "?";
}

std::string to_string(Regularizer r) { return r == Regularizer::tv ? "tv" : "l2"; }

Measure parse_measure(const std::string& s)
{
    if (s == "nmi") return Measure::nmi;
    if (s == "mind") return Measure::mind;
    if (s == "nmi+mind" || s == "nmi_mind") return Measure::nmi_mind;
    if (s == "lncc") return Measure::lncc;
    throw std::invalid_argument("unknown measure '" + s + "'");
}

Regularizer parse_regularizer(const std::string& s)
{
    if (s == "tv") return Regularizer::tv;
    if (s == "l2") return Regularizer::l2;
    throw std::invalid_argument("unknown regularizer '" + s + "'");
}

void RegistrationConfig::validate() const
{
    combine.validate();
    mind.validate();
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    if (levels < 1) throw std::invalid_argument("levels must be at least 1");
    if (spacing_vox < 2) throw std::invalid_argument("control point spacing must be at least 2 voxels");
    if (max_iters_per_level < 0) throw std::invalid_argument("max_iters_per_level must be non-negative");
    if (every_n_iterations < 0) throw std::invalid_argument("every_n_iterations must be non-negative");
    if (bins < 2) throw std::invalid_argument("bins must be at least 2");
    if (lncc_radius < 1) throw std::invalid_argument("lncc radius must be at least 1");
    if (gradient_smoothing < 0) throw std::invalid_argument("gradient_smoothing must be non-negative");
}

// ---------------------------------------------------------------------------
// Regularizers

namespace {

template <typename Term>
RegularizerValue forward_difference_sum(const ControlGrid& grid, Term&& term)
{
    const Dims g = grid.grid_dims;
    RegularizerValue r;
    r.gradient.assign(grid.displacements.size(), Vec3{0.0, 0.0, 0.0});
    for (int k = 0; k < g.z; ++k) {
        for (int j = 0; j < g.y; ++j) {
            for (int i = 0; i < g.x; ++i) {
                const std::size_t self = linear_index(g, i, j, k);
                std::array<std::size_t, 3> nb{};
                std::array<bool, 3> has{i + 1 < g.x, j + 1 < g.y, k + 1 < g.z};
                if (has[0]) nb[0] = linear_index(g, i + 1, j, k);
                if (has[1]) nb[1] = linear_index(g, i, j + 1, k);
                if (has[2]) nb[2] = linear_index(g, i, j, k + 1);
                std::array<Vec3, 3> diff{};
                for (std::size_t a = 0; a < 3; ++a) {
                    if (!has[a]) continue;
                    for (std::size_t c = 0; c < 3; ++c) {
                        diff[a][c] = grid.displacements[nb[a]][c] - grid.displacements[self][c];
                    }
                }
                // term returns value and d(value)/d(diff) per axis/component
                std::array<Vec3, 3> d_diff{};
                r.value += term(diff, has, d_diff);
                for (std::size_t a = 0; a < 3; ++a) {
                    if (!has[a]) continue;
                    for (std::size_t c = 0; c < 3; ++c) {
                        r.gradient[nb[a]][c] += d_diff[a][c];
                        r.gradient[self][c] -= d_diff[a][c];
                    }
                }
            }
        }
    }
    return r;
}

constexpr double tv_epsilon = 0.01;

} // namespace

RegularizerValue regularizer_tv(const ControlGrid& grid)
{
    return forward_difference_sum(grid, [](const std::array<Vec3, 3>& diff, const std::array<bool, 3>& has,
                                           std::array<Vec3, 3>& d_diff) {
        double s = tv_epsilon * tv_epsilon;
        for (std::size_t a = 0; a < 3; ++a) {
            if (!has[a]) continue;
            for (double v : diff[a]) s += v * v;
        }
        const double root = std::sqrt(s);
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t c = 0; c < 3; ++c) d_diff[a][c] = has[a] ? diff[a][c] / root : 0.0;
        }
        return root - tv_epsilon;
    });
}

RegularizerValue regularizer_l2(const ControlGrid& grid)
{
    return forward_difference_sum(grid, [](const std::array<Vec3, 3>& diff, const std::array<bool, 3>& has,
                                           std::array<Vec3, 3>& d_diff) {
        double s = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t c = 0; c < 3; ++c) {
                if (!has[a]) continue;
                s += diff[a][c] * diff[a][c];
                d_diff[a][c] = 2.0 * diff[a][c];
            }
        }
        return s;
    });
}

RegularizerValue regularize(const ControlGrid& grid, Regularizer kind)
{
    return kind == Regularizer::tv ? regularizer_tv(grid) : regularizer_l2(grid);
}

// ---------------------------------------------------------------------------
// Cost

CostFunction::CostFunction(std::shared_ptr<const Dissimilarity> term, Dims dims, double lambda, Regularizer regularizer)
    : term_(std::move(term)), dims_(dims), lambda_(lambda), regularizer_(regularizer)
{
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
}

double CostFunction::dissimilarity(const ControlGrid& grid) const { return term_->value(interpolate_dense(grid, dims_)); }

double CostFunction::evaluate(const ControlGrid& grid, std::vector<Vec3>* gradient) const
{
    const DenseField field = interpolate_dense(grid, dims_);
    double value = 0.0;
    if (gradient) {
        DenseField dense_grad;
        value = term_->value_and_gradient(field, dense_grad);
        *gradient = pullback_to_nodes(grid, dense_grad);
    }
    else {
        value = term_->value(field);
    }
    if (lambda_ > 0.0) {
        const RegularizerValue r = regularize(grid, regularizer_);
        value += lambda_ * r.value;
        if (gradient) {
            for (std::size_t i = 0; i < gradient->size(); ++i) {
                for (std::size_t c = 0; c < 3; ++c) (*gradient)[i][c] += lambda_ * r.gradient[i][c];
            }
        }
    }
    return value;
}

std::shared_ptr<const Dissimilarity> make_dissimilarity(const Volume& fixed, const Volume& moving,
                                                        const DenseField& init, const RegistrationConfig& config,
                                                        double scale)
{
    switch (config.measure) {
    case Measure::nmi: return std::make_shared<NmiMetric>(NmiMetric::from_percentiles(fixed, moving, init, config.bins));
    case Measure::mind: return std::make_shared<MindMetric>(fixed, moving, config.mind);
    case Measure::lncc: return std::make_shared<LnccMetric>(fixed, moving, config.lncc_radius);
    case Measure::nmi_mind: {
        auto nmi = std::make_shared<NmiMetric>(NmiMetric::from_percentiles(fixed, moving, init, config.bins));
        auto mind = std::make_shared<MindMetric>(fixed, moving, config.mind);
        return std::make_shared<CombinedMetric>(nmi, mind, config.combine.beta, scale);
    }
    }
    throw std::invalid_argument("unknown measure");
}

std::pair<double, std::vector<Vec3>> total_cost(const Volume& fixed, const Volume& moving, const ControlGrid& grid,
                                                const RegistrationConfig& config, double scale)
{
    config.validate();
    const DenseField init(fixed.dims);
    const CostFunction cost(make_dissimilarity(fixed, moving, init, config, scale), fixed.dims, config.lambda,
                            config.regularizer);
    std::vector<Vec3> g;
    const double v = cost.evaluate(grid, &g);
    return {v, std::move(g)};
}

// ---------------------------------------------------------------------------
// Optimizer

std::vector<Vec3> smooth_direction(const ControlGrid& grid, const std::vector<Vec3>& gradient, int passes)
{
    const Dims g = grid.grid_dims;
    std::vector<Vec3> cur = gradient, tmp(gradient.size());
    for (int p = 0; p < passes; ++p) {
        for (int axis = 0; axis < 3; ++axis) {
            const int n = g[axis];
            for (int k = 0; k < g.z; ++k) {
                for (int j = 0; j < g.y; ++j) {
                    for (int i = 0; i < g.x; ++i) {
                        int idx[3] = {i, j, k};
                        const int c = idx[axis];
                        const std::size_t self = linear_index(g, i, j, k);
                        Vec3 acc{};
                        for (int o = -1; o <= 1; ++o) {
                            if (c + o < 0 || c + o >= n) continue;
                            int q[3] = {i, j, k};
                            q[axis] = c + o;
                            const double w = o == 0 ? 0.5 : 0.25;
                            const Vec3& v = cur[linear_index(g, q[0], q[1], q[2])];
                            for (std::size_t d = 0; d < 3; ++d) acc[d] += w * v[d];
                        }
                        tmp[self] = acc;
                    }
                }
            }
            cur.swap(tmp);
        }
    }
    return cur;
}

bool descent_step(const CostFunction& cost, ControlGrid& grid, double& value, std::vector<Vec3>& gradient,
                  double* max_move, int smoothing_passes)
{
    constexpr double armijo_c = 1e-4;
    constexpr int max_halvings = 30;
    const std::vector<Vec3> direction =
        smoothing_passes > 0 ? smooth_direction(grid, gradient, smoothing_passes) : gradient;
    double dmax = 0.0, slope = 0.0;
    for (std::size_t i = 0; i < direction.size(); ++i) {
        const auto& d = direction[i];
        dmax = std::max(dmax, std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]));
        slope += d[0] * gradient[i][0] + d[1] * gradient[i][1] + d[2] * gradient[i][2];
    }
    if (!(dmax > 0.0) || !std::isfinite(dmax) || !(slope > 0.0)) return false;
    const double first_move = max_move ? *max_move : 1.0;
    double alpha = first_move / dmax;
    ControlGrid trial = grid;
    for (int h = 0; h <= max_halvings; ++h, alpha *= 0.5) {
        for (std::size_t i = 0; i < grid.displacements.size(); ++i) {
            for (std::size_t c = 0; c < 3; ++c) {
                trial.displacements[i][c] = grid.displacements[i][c] - alpha * direction[i][c];
            }
        }
        // the first trial is usually accepted, so its gradient is kept
        std::vector<Vec3> trial_gradient;
        const double v = cost.evaluate(trial, h == 0 ? &trial_gradient : nullptr);
        if (v <= value - armijo_c * alpha * slope) {
            grid = std::move(trial);
            value = v;
            if (h == 0) gradient = std::move(trial_gradient);
            else cost.evaluate(grid, &gradient);
            // next trial: twice the accepted move, never beyond one voxel
            if (max_move) *max_move = std::min(2.0 * alpha * dmax, 1.0);
            return true;
        }
    }
    return false;
}

namespace {

struct DescentState
{
    const CostFunction* cost;
    ControlGrid grid;
    double value = 0.0;
    std::vector<Vec3> gradient;
    DescentOutcome outcome;
    bool active = true;
    int smoothing = 0;
    double move = 1.0;

    void reset_value()
    {
        value = cost->evaluate(grid, &gradient);
    }

    void step(double step_tol)
    {
        if (!active) return;
        const double before = value;
        if (!descent_step(*cost, grid, value, gradient, &move, smoothing)) {
            active = false;
            outcome.stop_reason = "no_descent";
            return;
        }
        ++outcome.iterations;
        outcome.costs.push_back(value);
        if ((before - value) <= step_tol * std::max(std::abs(before), 1e-12)) {
            active = false;
            outcome.stop_reason = "step_tol";
        }
    }
};

void apply_consistency(ControlGrid& fwd, ControlGrid& bwd, Dims dims)
{
    auto [f, b] = inverse_consistency_step(interpolate_dense(fwd, dims), interpolate_dense(bwd, dims));
    fwd = sample_grid(f, fwd.spacing_vox);
    bwd = sample_grid(b, bwd.spacing_vox);
}

double resolve_scale(const Volume& fixed, const Volume& moving, const ControlGrid& grid, const RegistrationConfig& config,
                     bool& fallback)
{
    if (config.combine.strategy == ScaleStrategy::fixed) return config.combine.fixed_s;
    const DenseField init = interpolate_dense(grid, fixed.dims);
    auto nmi = std::make_shared<NmiMetric>(NmiMetric::from_percentiles(fixed, moving, init, config.bins));
    const MindMetric mind(fixed, moving, config.mind);
    // probe state: one descent step on the NMI cost alone
    const CostFunction nmi_cost(nmi, fixed.dims, config.lambda, config.regularizer);
    ControlGrid probe = grid;
    std::vector<Vec3> g;
    double v = nmi_cost.evaluate(probe, &g);
    descent_step(nmi_cost, probe, v, g);
    try {
        return combine_scale(*nmi, mind, init, interpolate_dense(probe, fixed.dims), config.combine);
    }
    catch (const DegenerateScaleError&) {
        // nothing to balance against: the NMI step did not move
        fallback = true;
        return 1.0;
    }
}

} // namespace

std::optional<DenseField> RegistrationResult::backward_field() const
{
    if (!backward) return std::nullopt;
    return interpolate_dense(*backward, dims);
}

RegistrationResult register_deformable(const Volume& fixed, const Volume& moving, const RegistrationConfig& config)
{
    const auto t0 = std::chrono::steady_clock::now();
    config.validate();
    if (fixed.dims != moving.dims) {
        throw std::invalid_argument("fixed " + to_string(fixed.dims) + " and moving " + to_string(moving.dims)
                                    + " must share dims (resample first)");
    }
    const auto [fmin, fmax] = min_max(fixed);
    const auto [mmin, mmax] = min_max(moving);
    if (fmin == fmax && mmin == mmax) throw std::invalid_argument("both images are constant; nothing to register");

    const auto fixed_pyr = gaussian_pyramid(fixed, config.levels);
    const auto moving_pyr = gaussian_pyramid(moving, config.levels);

    RegistrationResult result;
    result.config = config;
    result.dims = fixed.dims;
    ControlGrid fwd, bwd;
    Dims prev_dims;
    for (int level = config.levels - 1; level >= 0; --level) {
        const Volume& f = fixed_pyr[static_cast<std::size_t>(level)];
        const Volume& m = moving_pyr[static_cast<std::size_t>(level)];
        if (level == config.levels - 1) {
            fwd = ControlGrid(f.dims, config.spacing_vox);
            bwd = fwd;
        }
        else {
            fwd = upsample_grid(fwd, prev_dims, f.dims, config.spacing_vox);
            bwd = upsample_grid(bwd, prev_dims, f.dims, config.spacing_vox);
        }
        prev_dims = f.dims;

        LevelTrace trace;
        trace.level = level;
        trace.dims = f.dims;
        trace.spacing_vox = config.spacing_vox;
        if (config.measure == Measure::nmi_mind) trace.scale = resolve_scale(f, m, fwd, config, trace.scale_fallback);
        const auto term_f = make_dissimilarity(f, m, interpolate_dense(fwd, f.dims), config, trace.scale);
        const CostFunction cost_f(term_f, f.dims, config.lambda, config.regularizer);
        DescentState sf{&cost_f, fwd, 0.0, {}, {}, true, config.gradient_smoothing};
        sf.reset_value();
        sf.outcome.costs.push_back(sf.value);

        std::optional<CostFunction> cost_b;
        DescentState sb{nullptr, bwd, 0.0, {}, {}, false, config.gradient_smoothing};
        if (config.symmetric) {
            double scale_b = trace.scale;
            if (config.measure == Measure::nmi_mind) scale_b = resolve_scale(m, f, bwd, config, trace.scale_fallback);
            cost_b.emplace(make_dissimilarity(m, f, interpolate_dense(bwd, f.dims), config, scale_b), f.dims, config.lambda,
                           config.regularizer);
            sb.cost = &*cost_b;
            sb.active = true;
            sb.reset_value();
            sb.outcome.costs.push_back(sb.value);
        }

        for (int it = 1; it <= config.max_iters_per_level; ++it) {
            sf.step(config.step_tol);
            if (config.symmetric) {
                sb.step(config.step_tol);
                if (config.every_n_iterations > 0 && it % config.every_n_iterations == 0 && (sf.active || sb.active)) {
                    apply_consistency(sf.grid, sb.grid, f.dims);
                    sf.reset_value();
                    sb.reset_value();
                    trace.consistency_steps.push_back(it);
                }
            }
            if (!sf.active && !sb.active) break;
        }
        if (sf.outcome.stop_reason.empty()) sf.outcome.stop_reason = "max_iters";
        if (config.symmetric) {
            if (sb.outcome.stop_reason.empty()) sb.outcome.stop_reason = "max_iters";
            apply_consistency(sf.grid, sb.grid, f.dims);
            trace.consistency_steps.push_back(-1);
        }
        fwd = std::move(sf.grid);
        bwd = std::move(sb.grid);
        trace.forward = std::move(sf.outcome);
        trace.backward = std::move(sb.outcome);
        if (level == 0) result.final_dissimilarity = cost_f.dissimilarity(fwd);
        result.levels.push_back(std::move(trace));
    }
    result.grid = std::move(fwd);
    if (config.symmetric) result.backward = std::move(bwd);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Grid search

std::vector<GridSearchCell> grid_search(const Volume& fixed, const Volume& moving, const RegistrationConfig& base,
                                        const std::vector<double>& lambdas, const std::vector<int>& spacings,
                                        const std::vector<int>& levels_list, const ScoreFn& score, bool higher_is_better)
{
    if (lambdas.empty() || spacings.empty() || levels_list.empty()) {
        throw std::invalid_argument("grid search needs non-empty parameter lists");
    }
    std::vector<GridSearchCell> cells;
    for (double lambda : lambdas) {
        for (int spacing : spacings) {
            for (int levels : levels_list) {
                GridSearchCell cell{lambda, spacing, levels, false, {}, 0.0, 0.0, 0.0};
                try {
                    RegistrationConfig cfg = base;
                    cfg.lambda = lambda;
                    cfg.spacing_vox = spacing;
                    cfg.levels = levels;
                    const RegistrationResult r = register_deformable(fixed, moving, cfg);
                    cell.final_dissimilarity = r.final_dissimilarity;
                    cell.wall_seconds = r.wall_seconds;
                    cell.score = score ? score(r) : r.final_dissimilarity;
                    cell.ok = std::isfinite(cell.score);
                    if (!cell.ok) cell.error = "non-finite score";
                }
                catch (const std::exception& e) {
                    cell.error = e.what();
                }
                cells.push_back(std::move(cell));
            }
        }
    }
    std::stable_sort(cells.begin(), cells.end(), [&](const GridSearchCell& a, const GridSearchCell& b) {
        if (a.ok != b.ok) return a.ok;
        if (a.ok && a.score != b.score) return higher_is_better ? a.score > b.score : a.score < b.score;
        if (a.lambda != b.lambda) return a.lambda < b.lambda;
        if (a.spacing_vox != b.spacing_vox) return a.spacing_vox < b.spacing_vox;
        return a.levels < b.levels;
    });
    return cells;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string join(const std::vector<double>& v)
{
    std::ostringstream s;
    s.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
    return s.str();
}

} // namespace

void write_report(std::ostream& out, const RegistrationResult& r)
{
    const RegistrationConfig& c = r.config;
    const auto old = out.precision(17);
    out << "measure=" << to_string(c.measure) << '\n'
        << "beta=" << c.combine.beta << '\n'
        << "scale_strategy=" << to_string(c.combine.strategy) << '\n'
        << "fixed_s=" << c.combine.fixed_s << '\n'
        << "scale_resolution=once_per_level\n"
        << "lambda=" << c.lambda << '\n'
        << "regularizer=" << to_string(c.regularizer) << '\n'
        << "spacing_vox=" << c.spacing_vox << '\n'
        << "levels=" << c.levels << '\n'
        << "max_iters_per_level=" << c.max_iters_per_level << '\n'
        << "step_tol=" << c.step_tol << '\n'
        << "symmetric=" << (c.symmetric ? 1 : 0) << '\n'
        << "every_n_iterations=" << c.every_n_iterations << '\n'
        << "bins=" << c.bins << '\n'
        << "lncc_radius=" << c.lncc_radius << '\n'
        << "mind_sigma=" << c.mind.sigma << '\n'
        << "gradient_smoothing=" << c.gradient_smoothing << '\n'
        << "optimizer=steepest_descent_armijo\n"
        << "dims=" << to_string(r.dims) << '\n';
    for (const auto& t : r.levels) {
        const std::string p = "level." + std::to_string(t.level) + ".";
        out << p << "dims=" << to_string(t.dims) << '\n'
            << p << "spacing_vox=" << t.spacing_vox << '\n'
            << p << "scale=" << t.scale << '\n'
            << p << "scale_fallback=" << (t.scale_fallback ? 1 : 0) << '\n'
            << p << "iterations=" << t.forward.iterations << '\n'
            << p << "stop=" << t.forward.stop_reason << '\n'
            << p << "cost_trace=" << join(t.forward.costs) << '\n';
        if (c.symmetric) {
            out << p << "backward_iterations=" << t.backward.iterations << '\n'
                << p << "backward_cost_trace=" << join(t.backward.costs) << '\n'
                << p << "consistency_steps=" << t.consistency_steps.size() << '\n';
        }
    }
    out << "final_dissimilarity=" << r.final_dissimilarity << '\n' << "wall_seconds=" << r.wall_seconds << '\n';
    out.precision(old);
}

void write_grid_search_csv(std::ostream& out, const std::vector<GridSearchCell>& cells)
{
    const auto old = out.precision(17);
    out << "rank,lambda,spacing,levels,status,score,final_dissimilarity,wall_seconds,error\n";
    int rank = 1;
    for (const auto& c : cells) {
        std::string err = c.error;
        std::replace(err.begin(), err.end(), ',', ';');
        out << rank++ << ',' << c.lambda << ',' << c.spacing_vox << ',' << c.levels << ',' << (c.ok ? "ok" : "failed") << ','
            << c.score << ',' << c.final_dissimilarity << ',' << c.wall_seconds << ',' << err << '\n';
    }
    out.precision(old);
}

} // namespace mmreg
