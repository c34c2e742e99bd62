#include "mmreg/similarity.h"

#include "mmreg/parallel.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmreg {

namespace {

template <typename T>
IntensityRange percentiles_impl(std::span<const T> values, double q_lo, double q_hi)
{
    if (values.empty()) throw std::invalid_argument("percentile of an empty image");
    std::vector<double> v(values.begin(), values.end());
    auto pick = [&](double q) {
        const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
        const auto k = static_cast<std::size_t>(std::floor(pos));
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
        const double a = v[k];
        if (k + 1 >= v.size()) return a;
        const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(k) + 1, v.end());
        return a + (b - a) * (pos - static_cast<double>(k));
    };
    const double lo = pick(q_lo);
    const double hi = pick(q_hi);
    return {lo, hi};
}

// Slices are grouped into a thread-count independent number of chunks.
constexpr int histogram_chunks = 8;

struct BinTap
{
    int i0;
    double frac;
};

inline BinTap bin_tap(double t, int bins)
{
    int i0 = static_cast<int>(std::floor(t));
    if (i0 >= bins - 1) i0 = bins - 2;
    if (i0 < 0) i0 = 0;
    return {i0, t - i0};
}

// Monotone coupling of (1-f, f) on rows a0, a0+1 with (1-g, g) on columns
// b0, b0+1.
inline void accumulate(double* joint, int bins, BinTap a, BinTap b, double w)
{
    const double f = a.frac, g = b.frac;
    double* row0 = joint + static_cast<std::size_t>(a.i0) * static_cast<std::size_t>(bins);
    double* row1 = row0 + bins;
    row0[b.i0] += w * std::min(1.0 - f, 1.0 - g);
    row0[b.i0 + 1] += w * std::max(0.0, g - f);
    row1[b.i0] += w * std::max(0.0, f - g);
    row1[b.i0 + 1] += w * std::min(f, g);
}

double dims_check_count(Dims d, std::size_t n)
{
    if (d.count() != n) throw std::invalid_argument("buffer length does not match dims");
    return static_cast<double>(n);
}

void check_field(Dims image, const DenseField& field, const char* who)
{
    if (image != field.dims) {
        throw std::invalid_argument(std::string(who) + ": field dims " + to_string(field.dims) + " do not match image "
                                    + to_string(image));
    }
}

} // namespace

IntensityRange percentile_range(std::span<const float> values, double q_lo, double q_hi)
{
    return percentiles_impl(values, q_lo, q_hi);
}

IntensityRange percentile_range(std::span<const double> values, double q_lo, double q_hi)
{
    return percentiles_impl(values, q_lo, q_hi);
}

double bin_position(double value, const IntensityRange& range, int bins)
{
    if (!(range.hi > range.lo)) return 0.0;
    const double c = std::clamp(value, range.lo, range.hi);
    return (c - range.lo) / (range.hi - range.lo) * (bins - 1);
}

JointHistogram build_joint_histogram(std::span<const double> fixed, std::span<const double> moving,
                                     const IntensityRange& range_f, const IntensityRange& range_m, int bins)
{
    if (fixed.size() != moving.size()) throw std::invalid_argument("joint histogram: dims mismatch");
    if (bins < 2) throw std::invalid_argument("joint histogram needs at least 2 bins");
    if (fixed.empty()) throw std::invalid_argument("joint histogram of empty images");
    const std::size_t n = fixed.size();
    const auto table = static_cast<std::size_t>(bins) * static_cast<std::size_t>(bins);
    const int chunks = static_cast<int>(std::min<std::size_t>(histogram_chunks, n));
    std::vector<std::vector<double>> partial(static_cast<std::size_t>(chunks));
    parallel_for(chunks, [&](int c) {
        auto& p = partial[static_cast<std::size_t>(c)];
        p.assign(table, 0.0);
        const std::size_t begin = n * static_cast<std::size_t>(c) / static_cast<std::size_t>(chunks);
        const std::size_t end = n * static_cast<std::size_t>(c + 1) / static_cast<std::size_t>(chunks);
        for (std::size_t i = begin; i < end; ++i) {
            accumulate(p.data(), bins, bin_tap(bin_position(fixed[i], range_f, bins), bins),
                       bin_tap(bin_position(moving[i], range_m, bins), bins), 1.0);
        }
    });
    JointHistogram h;
    h.bins = bins;
    h.range_f = range_f;
    h.range_m = range_m;
    h.joint.assign(table, 0.0);
    for (const auto& p : partial) {
        for (std::size_t k = 0; k < table; ++k) h.joint[k] += p[k];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& v : h.joint) v *= inv_n;
    h.marginal_f.assign(static_cast<std::size_t>(bins), 0.0);
    h.marginal_m.assign(static_cast<std::size_t>(bins), 0.0);
    for (int a = 0; a < bins; ++a) {
        for (int b = 0; b < bins; ++b) {
            h.marginal_f[static_cast<std::size_t>(a)] += h.at(a, b);
            h.marginal_m[static_cast<std::size_t>(b)] += h.at(a, b);
        }
    }
    return h;
}

JointHistogram build_joint_histogram(const Volume& fixed, const Volume& warped_moving, int bins)
{
    if (fixed.dims != warped_moving.dims) {
        throw std::invalid_argument("joint histogram: dims mismatch " + to_string(fixed.dims) + " vs "
                                    + to_string(warped_moving.dims));
    }
    const std::vector<double> f(fixed.data.begin(), fixed.data.end());
    const std::vector<double> m(warped_moving.data.begin(), warped_moving.data.end());
    return build_joint_histogram(f, m, percentile_range(std::span<const float>(fixed.data)),
                                 percentile_range(std::span<const float>(warped_moving.data)), bins);
}

double entropy(std::span<const double> p)
{
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

double nmi_from_histogram(const JointHistogram& h)
{
    const double hj = entropy(h.joint);
    if (!(hj > 0.0)) throw std::invalid_argument("NMI undefined: both images are constant");
    return -(entropy(h.marginal_f) + entropy(h.marginal_m)) / hj;
}

double nmi_dissimilarity(const Volume& fixed, const Volume& warped_moving, int bins)
{
    return nmi_from_histogram(build_joint_histogram(fixed, warped_moving, bins));
}

void warp_samples(const Volume& moving, const DenseField& field, std::vector<double>& values, std::vector<Vec3>* gradients)
{
    check_field(moving.dims, field, "warp_samples");
    const Dims d = moving.dims;
    values.resize(d.count());
    if (gradients) gradients->resize(d.count());
    parallel_for(d.z, [&](int z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                const std::size_t i = linear_index(d, x, y, z);
                const Vec3& u = field.vectors[i];
                if (gradients) values[i] = sample_trilinear_grad(moving, x + u[0], y + u[1], z + u[2], (*gradients)[i]);
                else values[i] = sample_trilinear(moving, x + u[0], y + u[1], z + u[2]);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// NMI

NmiMetric::NmiMetric(const Volume& fixed, const Volume& moving, IntensityRange fixed_range, IntensityRange moving_range,
                     int bins)
    : moving_(&moving), dims_(fixed.dims), bins_(bins), range_f_(fixed_range), range_m_(moving_range),
      fixed_values_(fixed.data.begin(), fixed.data.end())
{
    if (fixed.dims != moving.dims) {
        throw std::invalid_argument("NMI: fixed " + to_string(fixed.dims) + " and moving " + to_string(moving.dims)
                                    + " differ in dims");
    }
    if (bins < 2) throw std::invalid_argument("NMI needs at least 2 bins");
}

NmiMetric NmiMetric::from_percentiles(const Volume& fixed, const Volume& moving, const DenseField& init, int bins)
{
    std::vector<double> warped;
    warp_samples(moving, init, warped);
    return NmiMetric(fixed, moving, percentile_range(std::span<const float>(fixed.data)),
                     percentile_range(std::span<const double>(warped)), bins);
}

void NmiMetric::check(const DenseField& field) const { check_field(dims_, field, "NMI"); }

JointHistogram NmiMetric::histogram(const DenseField& field) const
{
    check(field);
    std::vector<double> warped;
    warp_samples(*moving_, field, warped);
    return build_joint_histogram(fixed_values_, warped, range_f_, range_m_, bins_);
}

double NmiMetric::value(const DenseField& field) const { return nmi_from_histogram(histogram(field)); }

double NmiMetric::value_and_gradient(const DenseField& field, DenseField& gradient) const
{
    check(field);
    std::vector<double> warped;
    std::vector<Vec3> image_grad;
    warp_samples(*moving_, field, warped, &image_grad);
    const JointHistogram h = build_joint_histogram(fixed_values_, warped, range_f_, range_m_, bins_);

    const double n = static_cast<double>(warped.size());
    const double hf = entropy(h.marginal_f);
    const double hm = entropy(h.marginal_m);
    const double hj = entropy(h.joint);
    if (!(hj > 0.0)) throw std::invalid_argument("NMI undefined: both images are constant");
    const double value = -(hf + hm) / hj;

    // dE/dp(a,b) for a unit of moving-axis mass entering cell (a,b); zero
    // probabilities are replaced by 1/(2N) before the logarithm.
    const double floor_p = 1.0 / (2.0 * n);
    auto safe_log = [&](double p) { return std::log(p > 0.0 ? p : floor_p); };
    const auto B = static_cast<std::size_t>(bins_);
    std::vector<double> cell(B * B);
    for (std::size_t b = 0; b < B; ++b) {
        const double dm = (safe_log(h.marginal_m[b]) + 1.0) / hj;
        for (std::size_t a = 0; a < B; ++a) {
            cell[a * B + b] = -(hf + hm) / (hj * hj) * (safe_log(h.joint[a * B + b]) + 1.0) + dm;
        }
    }

    const double dt_dw = range_m_.hi > range_m_.lo ? (bins_ - 1) / (range_m_.hi - range_m_.lo) : 0.0;
    gradient = DenseField(dims_);
    parallel_for(dims_.z, [&](int z) {
        const std::size_t slice = static_cast<std::size_t>(dims_.x) * static_cast<std::size_t>(dims_.y);
        for (std::size_t i = static_cast<std::size_t>(z) * slice; i < (static_cast<std::size_t>(z) + 1) * slice; ++i) {
            const double w = warped[i];
            if (!(w > range_m_.lo && w < range_m_.hi)) continue; // clamped: no dependence
            const BinTap a = bin_tap(bin_position(fixed_values_[i], range_f_, bins_), bins_);
            const BinTap b = bin_tap(bin_position(w, range_m_, bins_), bins_);
            const double* r0 = &cell[static_cast<std::size_t>(a.i0) * B + static_cast<std::size_t>(b.i0)];
            const double* r1 = r0 + B;
            // Raising g moves mass along row a0 when g > f, along row a0+1
            // when g < f; at the kink both one-sided slopes are averaged.
            const double up = r0[1] - r0[0];
            const double down = r1[1] - r1[0];
            double de_dt;
            if (b.frac > a.frac) de_dt = up;
            else if (b.frac < a.frac) de_dt = down;
            else de_dt = 0.5 * (up + down);
            const double s = de_dt * dt_dw / n;
            const Vec3& g = image_grad[i];
            gradient.vectors[i] = {s * g[0], s * g[1], s * g[2]};
        }
    });
    return value;
}

DenseField nmi_gradient(const Volume& fixed, const Volume& moving, const DenseField& field, int bins)
{
    const NmiMetric metric = NmiMetric::from_percentiles(fixed, moving, field, bins);
    DenseField g;
    metric.value_and_gradient(field, g);
    return g;
}

// ---------------------------------------------------------------------------
// MIND

MindMetric::MindMetric(const Volume& fixed, const Volume& moving, MindParams params)
    : moving_(&moving), params_(std::move(params)), fixed_field_(compute_mind(fixed, params_))
{
    if (fixed.dims != moving.dims) throw std::invalid_argument("MIND: fixed and moving differ in dims");
}

MindField MindMetric::warped_descriptor(const DenseField& field) const
{
    check_field(fixed_field_.dims, field, "MIND");
    std::vector<double> warped;
    warp_samples(*moving_, field, warped);
    return compute_mind(moving_->dims, moving_->spacing, warped, params_);
}

double MindMetric::value(const DenseField& field) const { return mind_total(fixed_field_, warped_descriptor(field)); }

double MindMetric::value_and_gradient(const DenseField& field, DenseField& gradient) const
{
    check_field(fixed_field_.dims, field, "MIND");
    std::vector<double> warped;
    std::vector<Vec3> spatial;
    warp_samples(*moving_, field, warped, &spatial);
    std::vector<double> g_values;
    const double value = mind_total_backward(fixed_field_, moving_->dims, warped, params_, g_values);
    gradient = DenseField(field.dims);
    for (std::size_t i = 0; i < g_values.size(); ++i) {
        for (std::size_t a = 0; a < 3; ++a) gradient.vectors[i][a] = g_values[i] * spatial[i][a];
    }
    return value;
}

double mind_dissimilarity(const Volume& fixed, const Volume& moving, const DenseField& field, const MindParams& params)
{
    return MindMetric(fixed, moving, params).value(field);
}

DenseField mind_gradient(const Volume& fixed, const Volume& moving, const DenseField& field, const MindParams& params)
{
    DenseField g;
    MindMetric(fixed, moving, params).value_and_gradient(field, g);
    return g;
}

// ---------------------------------------------------------------------------
// LNCC

namespace {

// Sums over (2r+1)^3 boxes truncated at the border, in place.
void box_sum(std::vector<double>& v, Dims d, int r)
{
    std::vector<double> line, prefix;
    const std::array<int, 3> n{d.x, d.y, d.z};
    for (int axis = 0; axis < 3; ++axis) {
        const int len = n[static_cast<std::size_t>(axis)];
        const int a1 = axis == 0 ? 1 : 0;
        const int a2 = axis == 2 ? 1 : 2;
        parallel_for(n[static_cast<std::size_t>(a2)], [&](int c2) {
            std::vector<double> pre(static_cast<std::size_t>(len) + 1);
            for (int c1 = 0; c1 < n[static_cast<std::size_t>(a1)]; ++c1) {
                std::array<int, 3> p{};
                p[static_cast<std::size_t>(a1)] = c1;
                p[static_cast<std::size_t>(a2)] = c2;
                pre[0] = 0.0;
                for (int k = 0; k < len; ++k) {
                    p[static_cast<std::size_t>(axis)] = k;
                    pre[static_cast<std::size_t>(k) + 1] = pre[static_cast<std::size_t>(k)] + v[linear_index(d, p[0], p[1], p[2])];
                }
                for (int k = 0; k < len; ++k) {
                    p[static_cast<std::size_t>(axis)] = k;
                    const int lo = std::max(0, k - r), hi = std::min(len, k + r + 1);
                    v[linear_index(d, p[0], p[1], p[2])] = pre[static_cast<std::size_t>(hi)] - pre[static_cast<std::size_t>(lo)];
                }
            }
        });
    }
}

} // namespace

LnccMetric::LnccMetric(const Volume& fixed, const Volume& moving, int window_radius)
    : moving_(&moving), dims_(fixed.dims), radius_(window_radius), fixed_values_(fixed.data.begin(), fixed.data.end())
{
    if (window_radius < 1) throw std::invalid_argument("LNCC window radius must be at least 1");
    if (fixed.dims != moving.dims) throw std::invalid_argument("LNCC: fixed and moving differ in dims");
}

double LnccMetric::evaluate(std::span<const double> m, std::vector<double>* d_warped) const
{
    const std::size_t n = dims_.count();
    const double count_total = dims_check_count(dims_, m.size());
    const auto& f = fixed_values_;
    std::vector<double> sf(f), sm(m.begin(), m.end()), sff(n), smm(n), sfm(n), cnt(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        sff[i] = f[i] * f[i];
        smm[i] = m[i] * m[i];
        sfm[i] = f[i] * m[i];
    }
    for (auto* v : {&sf, &sm, &sff, &smm, &sfm, &cnt}) box_sum(*v, dims_, radius_);

    constexpr double min_var = 1e-8;
    std::vector<double> cc(n, 0.0);
    std::vector<double> k1, k2, k3, k4;
    if (d_warped) {
        k1.assign(n, 0.0);
        k2.assign(n, 0.0);
        k3.assign(n, 0.0);
        k4.assign(n, 0.0);
    }
    parallel_for(dims_.z, [&](int z) {
        const std::size_t slice = static_cast<std::size_t>(dims_.x) * static_cast<std::size_t>(dims_.y);
        for (std::size_t i = static_cast<std::size_t>(z) * slice; i < (static_cast<std::size_t>(z) + 1) * slice; ++i) {
            const double c = cnt[i];
            const double mf = sf[i] / c, mm = sm[i] / c;
            const double vf = sff[i] - sf[i] * mf;
            const double vm = smm[i] - sm[i] * mm;
            const double cov = sfm[i] - sf[i] * mm;
            if (vf / c < min_var || vm / c < min_var) continue;
            cc[i] = cov * cov / (vf * vm);
            if (d_warped) {
                const double a = cov / (vf * vm);
                const double b = cov / vm;
                k1[i] = a;
                k2[i] = a * mf;
                k3[i] = a * b;
                k4[i] = a * b * mm;
            }
        }
    });
    const double mean_cc = parallel_sum(dims_.z, [&](int z) {
        const std::size_t slice = static_cast<std::size_t>(dims_.x) * static_cast<std::size_t>(dims_.y);
        double s = 0.0;
        for (std::size_t i = static_cast<std::size_t>(z) * slice; i < (static_cast<std::size_t>(z) + 1) * slice; ++i) s += cc[i];
        return s;
    }) / count_total;

    if (d_warped) {
        for (auto* v : {&k1, &k2, &k3, &k4}) box_sum(*v, dims_, radius_);
        d_warped->resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            (*d_warped)[i] = -2.0 / count_total * (f[i] * k1[i] - k2[i] - m[i] * k3[i] + k4[i]);
        }
    }
    return 1.0 - mean_cc;
}

double LnccMetric::value_of(std::span<const double> warped) const { return evaluate(warped, nullptr); }

double LnccMetric::value(const DenseField& field) const
{
    check_field(dims_, field, "LNCC");
    std::vector<double> warped;
    warp_samples(*moving_, field, warped);
    return evaluate(warped, nullptr);
}

double LnccMetric::value_and_gradient(const DenseField& field, DenseField& gradient) const
{
    check_field(dims_, field, "LNCC");
    std::vector<double> warped;
    std::vector<Vec3> image_grad;
    warp_samples(*moving_, field, warped, &image_grad);
    std::vector<double> dw;
    const double value = evaluate(warped, &dw);
    gradient = DenseField(dims_);
    for (std::size_t i = 0; i < dw.size(); ++i) {
        const Vec3& g = image_grad[i];
        gradient.vectors[i] = {dw[i] * g[0], dw[i] * g[1], dw[i] * g[2]};
    }
    return value;
}

double lncc_dissimilarity(const Volume& fixed, const Volume& warped_moving, int window_radius)
{
    const LnccMetric metric(fixed, warped_moving, window_radius);
    const std::vector<double> m(warped_moving.data.begin(), warped_moving.data.end());
    return metric.value_of(m);
}

// ---------------------------------------------------------------------------
// NMI + MIND

std::string to_string(ScaleStrategy s)
{
    switch (s) {
    case ScaleStrategy::fixed: return "fixed";
    case ScaleStrategy::initial_gradient: return "initial_gradient";
    case ScaleStrategy::dissimilarity_change: return "dissimilarity_change";
    }
    return "?";
}

void CombineParams::validate() const
{
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
    if (!(fixed_s > 0.0)) throw std::invalid_argument("fixed scale must be positive");
}

namespace {

double l2_norm(const DenseField& f)
{
    const std::size_t slice = static_cast<std::size_t>(f.dims.x) * static_cast<std::size_t>(f.dims.y);
    return std::sqrt(parallel_sum(f.dims.z, [&](int z) {
        double s = 0.0;
        for (std::size_t i = static_cast<std::size_t>(z) * slice; i < (static_cast<std::size_t>(z) + 1) * slice; ++i) {
            const Vec3& v = f.vectors[i];
            s += v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        }
        return s;
    }));
}

} // namespace

double combine_scale(const NmiMetric& nmi, const MindMetric& mind, const DenseField& init, const DenseField& probe,
                     const CombineParams& params)
{
    params.validate();
    constexpr double tiny = 1e-12;
    double s = 0.0;
    switch (params.strategy) {
    case ScaleStrategy::fixed: return params.fixed_s;
    case ScaleStrategy::initial_gradient: {
        DenseField gn, gm;
        nmi.value_and_gradient(probe, gn);
        mind.value_and_gradient(probe, gm);
        const double den = l2_norm(gm);
        if (den < tiny) throw DegenerateScaleError();
        s = l2_norm(gn) / den;
        break;
    }
    case ScaleStrategy::dissimilarity_change: {
        const double den = std::abs(mind.value(init) - mind.value(probe));
        if (den < tiny) throw DegenerateScaleError();
        s = std::abs(nmi.value(init) - nmi.value(probe)) / den;
        break;
    }
    }
    if (!(s > 0.0) || !std::isfinite(s)) throw DegenerateScaleError();
    return s;
}

double combine_scale(const Volume& fixed, const Volume& moving, const ControlGrid& probe, const CombineParams& params)
{
    const DenseField init(fixed.dims);
    const DenseField probe_field = interpolate_dense(probe, fixed.dims);
    const NmiMetric nmi = NmiMetric::from_percentiles(fixed, moving, init);
    const MindMetric mind(fixed, moving);
    return combine_scale(nmi, mind, init, probe_field, params);
}

CombinedMetric::CombinedMetric(std::shared_ptr<const NmiMetric> nmi, std::shared_ptr<const MindMetric> mind, double beta,
                               double s)
    : nmi_(std::move(nmi)), mind_(std::move(mind)), beta_(beta), s_(s)
{
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
    if (!(s > 0.0)) throw std::invalid_argument("combination scale must be positive");
}

double CombinedMetric::value(const DenseField& field) const
{
    return beta_ * nmi_->value(field) + (1.0 - beta_) * s_ * mind_->value(field);
}

double CombinedMetric::value_and_gradient(const DenseField& field, DenseField& gradient) const
{
    DenseField gn, gm;
    const double en = nmi_->value_and_gradient(field, gn);
    const double em = mind_->value_and_gradient(field, gm);
    gradient = DenseField(field.dims);
    const double wm = (1.0 - beta_) * s_;
    for (std::size_t i = 0; i < gradient.vectors.size(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) gradient.vectors[i][c] = beta_ * gn.vectors[i][c] + wm * gm.vectors[i][c];
    }
    return beta_ * en + wm * em;
}

double combined_dissimilarity(const Volume& fixed, const Volume& moving, const DenseField& field, double beta, double s,
                              const MindParams& params)
{
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
    if (!(s > 0.0)) throw std::invalid_argument("combination scale must be positive");
    const double e_nmi = nmi_dissimilarity(fixed, warp(moving, field));
    const double e_mind = mind_dissimilarity(fixed, moving, field, params);
    return beta * e_nmi + (1.0 - beta) * s * e_mind;
}

} // namespace mmreg
