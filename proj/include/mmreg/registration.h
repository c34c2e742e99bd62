#pragma once

#include "mmreg/similarity.h"
#include "mmreg/transform.h"
#include "mmreg/volume.h"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mmreg {

enum class Measure { nmi, mind, nmi_mind, lncc };
enum class Regularizer { tv, l2 };

std::string to_string(Measure m);
std::string to_string(Regularizer r);
Measure parse_measure(const std::string& s);
Regularizer parse_regularizer(const std::string& s);

struct RegistrationConfig
{
    Measure measure = Measure::nmi;
    /// beta, scale strategy and fixed_s for the combined measure
    CombineParams combine;
    double lambda = 1e-5;
    Regularizer regularizer = Regularizer::tv;
    int spacing_vox = 4;
    int levels = 3;
    int max_iters_per_level = 100;
    /// relative cost change below which a level stops
    double step_tol = 1e-5;
    bool symmetric = false;
    /// inverse-consistency averaging period in symmetric mode (0: only at
    /// the end of each level)
    int every_n_iterations = 0;
    int bins = 100;
    int lncc_radius = 3;
    /// binomial [1 2 1]/4 passes applied per grid axis to the node gradient
    /// before each step (0: plain steepest descent)
    int gradient_smoothing = 1;
    MindParams mind;

    void validate() const;
};

/// Node displacement differences are taken forward along each axis.
struct RegularizerValue
{
    double value = 0.0;
    std::vector<Vec3> gradient;
};

/// Smoothed isotropic total variation with epsilon 0.01 voxel.
RegularizerValue regularizer_tv(const ControlGrid& grid);
/// Sum of squared forward differences.
RegularizerValue regularizer_l2(const ControlGrid& grid);
RegularizerValue regularize(const ControlGrid& grid, Regularizer kind);

/// F(k) = E(field(k)) + lambda * R(k); gradient with respect to the nodes.
class CostFunction
{
public:
    CostFunction(std::shared_ptr<const Dissimilarity> term, Dims dims, double lambda, Regularizer regularizer);

    double evaluate(const ControlGrid& grid, std::vector<Vec3>* gradient = nullptr) const;
    double dissimilarity(const ControlGrid& grid) const;
    const Dissimilarity& term() const { return *term_; }

private:
    std::shared_ptr<const Dissimilarity> term_;
    Dims dims_;
    double lambda_;
    Regularizer regularizer_;
};

/// Builds the configured dissimilarity for one image pair. `scale` is the
/// already resolved combination scale (ignored unless measure is nmi_mind).
std::shared_ptr<const Dissimilarity> make_dissimilarity(const Volume& fixed, const Volume& moving,
                                                        const DenseField& init, const RegistrationConfig& config,
                                                        double scale = 1.0);

std::pair<double, std::vector<Vec3>> total_cost(const Volume& fixed, const Volume& moving, const ControlGrid& grid,
                                                const RegistrationConfig& config, double scale = 1.0);

struct DescentOutcome
{
    std::vector<double> costs; ///< accepted costs, starting with the initial one
    int iterations = 0;
    std::string stop_reason;
};

/// One descent step with Armijo backtracking (c = 1e-4, halving). The first
/// trial moves the largest node by *max_move voxels (1 when null); on
/// success *max_move becomes min(2 * accepted move, 1). The direction is the
/// node gradient after `smoothing_passes` binomial passes, a positive
/// semi-definite filter, so it stays a descent direction. Returns false when
/// no decrease was found.
bool descent_step(const CostFunction& cost, ControlGrid& grid, double& value, std::vector<Vec3>& gradient,
                  double* max_move = nullptr, int smoothing_passes = 0);

/// Binomial smoothing of node vectors with zero padding outside the grid.
std::vector<Vec3> smooth_direction(const ControlGrid& grid, const std::vector<Vec3>& gradient, int passes);

struct LevelTrace
{
    int level = 0;
    Dims dims;
    int spacing_vox = 0;
    double scale = 1.0;
    bool scale_fallback = false; // probe was degenerate (already at an NMI optimum); s = 1 used
    DescentOutcome forward;
    DescentOutcome backward;
    std::vector<int> consistency_steps;
};

struct RegistrationResult
{
    ControlGrid grid;
    std::optional<ControlGrid> backward;
    Dims dims;
    std::vector<LevelTrace> levels;
    double final_dissimilarity = 0.0;
    double wall_seconds = 0.0;
    RegistrationConfig config;

    DenseField field() const { return interpolate_dense(grid, dims); }
    std::optional<DenseField> backward_field() const;
};

/// Coarse-to-fine gradient descent on the control grid.
RegistrationResult register_deformable(const Volume& fixed, const Volume& moving, const RegistrationConfig& config);

struct GridSearchCell
{
    double lambda = 0.0;
    int spacing_vox = 0;
    int levels = 0;
    bool ok = false;
    std::string error;
    double score = 0.0;
    double final_dissimilarity = 0.0;
    double wall_seconds = 0.0;
};

using ScoreFn = std::function<double(const RegistrationResult&)>;

/// Runs every (lambda, spacing, levels) combination and ranks by score
/// (ascending unless higher_is_better); failed cells come last, ties break
/// lexicographically on (lambda, spacing, levels).
std::vector<GridSearchCell> grid_search(const Volume& fixed, const Volume& moving, const RegistrationConfig& base,
                                        const std::vector<double>& lambdas, const std::vector<int>& spacings,
                                        const std::vector<int>& levels_list, const ScoreFn& score = {},
                                        bool higher_is_better = false);

/// key=value run report.
void write_report(std::ostream& out, const RegistrationResult& result);
void write_grid_search_csv(std::ostream& out, const std::vector<GridSearchCell>& cells);

} // namespace mmreg
