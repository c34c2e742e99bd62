#pragma once

#include "mmreg/mind.h"
#include "mmreg/transform.h"
#include "mmreg/volume.h"

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmreg {

struct IntensityRange
{
    double lo = 0.0;
    double hi = 1.0;
};

/// Linearly interpolated percentiles (q in [0, 100]) of the values.
IntensityRange percentile_range(std::span<const float> values, double q_lo = 0.5, double q_hi = 99.5);
IntensityRange percentile_range(std::span<const double> values, double q_lo = 0.5, double q_hi = 99.5);

/// Continuous bin coordinate in [0, bins - 1]; values outside the range land
/// on the end bins, a degenerate range maps everything to bin 0.
double bin_position(double value, const IntensityRange& range, int bins);

/// Normalized joint intensity histogram (fixed along rows, moving along
/// columns). Each sample spreads its mass over the two adjacent bins per
/// axis by linear fraction; the two 2-bin kernels are joined by their
/// monotone coupling, so identical images give a diagonal table.
struct JointHistogram
{
    int bins = 100;
    IntensityRange range_f;
    IntensityRange range_m;
    std::vector<double> joint;
    std::vector<double> marginal_f;
    std::vector<double> marginal_m;

    double at(int a, int b) const
    {
        return joint[static_cast<std::size_t>(a) * static_cast<std::size_t>(bins) + static_cast<std::size_t>(b)];
    }
};

/// Ranges come from the 0.5 / 99.5 percentiles of each image.
JointHistogram build_joint_histogram(const Volume& fixed, const Volume& warped_moving, int bins = 100);
JointHistogram build_joint_histogram(std::span<const double> fixed, std::span<const double> moving,
                                     const IntensityRange& range_f, const IntensityRange& range_m, int bins = 100);

/// -sum p ln p over p > 0.
double entropy(std::span<const double> p);

/// -(H_f + H_m) / H_fm; throws when the joint entropy vanishes.
double nmi_from_histogram(const JointHistogram& h);

double nmi_dissimilarity(const Volume& fixed, const Volume& warped_moving, int bins = 100);

/// Interface shared by every registration dissimilarity. Gradients are with
/// respect to the dense displacement at each voxel (voxel units).
class Dissimilarity
{
public:
    virtual ~Dissimilarity() = default;
    virtual double value(const DenseField& field) const = 0;
    virtual double value_and_gradient(const DenseField& field, DenseField& gradient) const = 0;
};

/// Moving image sampled at x + field[x] in double precision, optionally
/// with the image gradient at each sample.
void warp_samples(const Volume& moving, const DenseField& field, std::vector<double>& values,
                  std::vector<Vec3>* gradients = nullptr);

class NmiMetric final : public Dissimilarity
{
public:
    NmiMetric(const Volume& fixed, const Volume& moving, IntensityRange fixed_range, IntensityRange moving_range,
              int bins = 100);

    /// Fixed range from the fixed image, moving range from the moving image
    /// warped by `init` (the state at which optimisation starts).
    static NmiMetric from_percentiles(const Volume& fixed, const Volume& moving, const DenseField& init, int bins = 100);

    double value(const DenseField& field) const override;
    double value_and_gradient(const DenseField& field, DenseField& gradient) const override;

    JointHistogram histogram(const DenseField& field) const;
    const IntensityRange& fixed_range() const { return range_f_; }
    const IntensityRange& moving_range() const { return range_m_; }

private:
    const Volume* moving_;
    Dims dims_;
    int bins_;
    IntensityRange range_f_;
    IntensityRange range_m_;
    std::vector<double> fixed_values_;
    void check(const DenseField& field) const;
};

/// Analytic gradient of the NMI dissimilarity; ranges as in from_percentiles.
DenseField nmi_gradient(const Volume& fixed, const Volume& moving, const DenseField& field, int bins = 100);

class MindMetric final : public Dissimilarity
{
public:
    MindMetric(const Volume& fixed, const Volume& moving, MindParams params = {});

    double value(const DenseField& field) const override;
    /// Fixed descriptors are constants; the warped descriptor is
    /// differentiated exactly through the descriptor pipeline.
    double value_and_gradient(const DenseField& field, DenseField& gradient) const override;

    const MindField& fixed_descriptor() const { return fixed_field_; }
    MindField warped_descriptor(const DenseField& field) const;

private:
    const Volume* moving_;
    MindParams params_;
    MindField fixed_field_;
};

double mind_dissimilarity(const Volume& fixed, const Volume& moving, const DenseField& field, const MindParams& params = {});
DenseField mind_gradient(const Volume& fixed, const Volume& moving, const DenseField& field, const MindParams& params = {});

/// One minus the mean squared local correlation over (2r+1)^3 windows
/// truncated at the volume border. Windows whose local variance falls
/// below 1e-8 in either image contribute correlation 0.
class LnccMetric final : public Dissimilarity
{
public:
    LnccMetric(const Volume& fixed, const Volume& moving, int window_radius = 3);

    double value(const DenseField& field) const override;
    double value_and_gradient(const DenseField& field, DenseField& gradient) const override;

    /// Direct evaluation on an already warped intensity buffer.
    double value_of(std::span<const double> warped) const;

private:
    const Volume* moving_;
    Dims dims_;
    int radius_;
    std::vector<double> fixed_values_;
    double evaluate(std::span<const double> warped, std::vector<double>* d_warped) const;
};

double lncc_dissimilarity(const Volume& fixed, const Volume& warped_moving, int window_radius = 3);

enum class ScaleStrategy { fixed, initial_gradient, dissimilarity_change };

std::string to_string(ScaleStrategy s);

struct CombineParams
{
    double beta = 0.8;
    ScaleStrategy strategy = ScaleStrategy::initial_gradient;
    double fixed_s = 1.0;

    void validate() const;
};

class DegenerateScaleError : public std::runtime_error
{
public:
    DegenerateScaleError() : std::runtime_error("degenerate scale probe") {}
};

/// Scale s putting the MIND term in the range of the NMI term.
/// fixed: params.fixed_s; initial_gradient: ratio of dense gradient norms
/// at `probe`; dissimilarity_change: ratio of value changes between `init`
/// and `probe`.
double combine_scale(const NmiMetric& nmi, const MindMetric& mind, const DenseField& init, const DenseField& probe,
                     const CombineParams& params);

/// Convenience form: zero initial state, probe given as a control grid.
double combine_scale(const Volume& fixed, const Volume& moving, const ControlGrid& probe, const CombineParams& params);

/// beta * E_NMI + (1 - beta) * s * E_MIND
class CombinedMetric final : public Dissimilarity
{
public:
    CombinedMetric(std::shared_ptr<const NmiMetric> nmi, std::shared_ptr<const MindMetric> mind, double beta, double s);

    double value(const DenseField& field) const override;
    double value_and_gradient(const DenseField& field, DenseField& gradient) const override;

    double beta() const { return beta_; }
    double scale() const { return s_; }

private:
    std::shared_ptr<const NmiMetric> nmi_;
    std::shared_ptr<const MindMetric> mind_;
    double beta_;
    double s_;
};

double combined_dissimilarity(const Volume& fixed, const Volume& moving, const DenseField& field, double beta, double s,
                              const MindParams& params = {});

} // namespace mmreg
