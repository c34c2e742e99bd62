#include "mmreg/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace mmreg {

DiceReport dice(const LabelVolume& a, const LabelVolume& b)
{
    if (a.dims != b.dims) throw std::invalid_argument("dice: dims mismatch " + to_string(a.dims) + " vs " + to_string(b.dims));
    std::map<int, std::size_t> count_a, count_b, both;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const int la = a.data[i], lb = b.data[i];
        if (la > 0) ++count_a[la];
        if (lb > 0) ++count_b[lb];
        if (la > 0 && la == lb) ++both[la];
    }
    std::set<int> labels;
    for (const auto& [l, n] : count_a) labels.insert(l);
    for (const auto& [l, n] : count_b) labels.insert(l);

    DiceReport report;
    double sum = 0.0;
    for (int l : labels) {
        const double na = count_a.count(l) ? static_cast<double>(count_a[l]) : 0.0;
        const double nb = count_b.count(l) ? static_cast<double>(count_b[l]) : 0.0;
        const double inter = both.count(l) ? static_cast<double>(both[l]) : 0.0;
        if (na == 0.0 || nb == 0.0) report.one_sided.push_back(l);
        const double d = 2.0 * inter / (na + nb);
        report.per_label[l] = d;
        sum += d;
        if (auto it = a.label_names.find(l); it != a.label_names.end()) report.names[l] = it->second;
        else if (auto jt = b.label_names.find(l); jt != b.label_names.end()) report.names[l] = jt->second;
    }
    report.mean = labels.empty() ? 0.0 : sum / static_cast<double>(labels.size());
    return report;
}

LabelVolume propagate_labels(const LabelVolume& labels, const DenseField& field)
{
    if (labels.dims != field.dims) {
        throw std::invalid_argument("propagate_labels: dims mismatch " + to_string(labels.dims) + " vs " + to_string(field.dims));
    }
    return warp(labels, field);
}

std::map<int, double> label_volumes_cm3(const LabelVolume& labels)
{
    const double voxel_cm3 = labels.spacing[0] * labels.spacing[1] * labels.spacing[2] / 1000.0;
    std::map<int, std::size_t> counts;
    for (auto l : labels.data) {
        if (l > 0) ++counts[l];
    }
    std::map<int, double> out;
    for (const auto& [l, n] : counts) out[l] = static_cast<double>(n) * voxel_cm3;
    return out;
}

namespace {

std::map<int, double> group_means(const std::vector<LabelVolume>& group)
{
    std::map<int, std::pair<double, int>> acc;
    for (const auto& v : group) {
        for (const auto& [l, cm3] : label_volumes_cm3(v)) {
            acc[l].first += cm3;
            acc[l].second += 1;
        }
    }
    std::map<int, double> out;
    for (const auto& [l, s] : acc) out[l] = s.first / s.second;
    return out;
}

} // namespace

std::vector<LabelVolumeStat> volume_stats(const std::vector<LabelVolume>& group_a,
                                          const std::vector<LabelVolume>& group_b)
{
    const auto ma = group_means(group_a);
    const auto mb = group_means(group_b);
    std::set<int> labels;
    for (const auto& [l, v] : ma) labels.insert(l);
    for (const auto& [l, v] : mb) labels.insert(l);
    std::vector<LabelVolumeStat> out;
    for (int l : labels) {
        LabelVolumeStat s;
        s.label = l;
        if (auto it = ma.find(l); it != ma.end()) s.mean_a_cm3 = it->second;
        if (auto it = mb.find(l); it != mb.end()) s.mean_b_cm3 = it->second;
        if (s.mean_a_cm3 && s.mean_b_cm3 && *s.mean_b_cm3 > 0.0) s.ratio_percent = 100.0 * *s.mean_a_cm3 / *s.mean_b_cm3;
        out.push_back(s);
    }
    return out;
}

EndpointError endpoint_error(const DenseField& estimated, const DenseField& truth)
{
    if (estimated.dims != truth.dims) {
        throw std::invalid_argument("endpoint_error: dims mismatch " + to_string(estimated.dims) + " vs " + to_string(truth.dims));
    }
    EndpointError e;
    if (truth.vectors.empty()) return e;
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.vectors.size(); ++i) {
        const auto& a = estimated.vectors[i];
        const auto& b = truth.vectors[i];
        const double n = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
        sum += n;
        e.max = std::max(e.max, n);
    }
    e.mean = sum / static_cast<double>(truth.vectors.size());
    return e;
}

void print_dice_table(std::ostream& os, const DiceReport& report)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-8s %-20s %8s\n", "label", "name", "dice");
    os << buf;
    for (const auto& [l, d] : report.per_label) {
        const auto it = report.names.find(l);
        std::snprintf(buf, sizeof buf, "%-8d %-20s %8.3f\n", l, it == report.names.end() ? "-" : it->second.c_str(), d);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "mean Dice %.3f over %zu labels\n", report.mean, report.per_label.size());
    os << buf;
}

void write_dice_csv(std::ostream& os, const DiceReport& report)
{
    os << "label,name,dice\n";
    char buf[32];
    for (const auto& [l, d] : report.per_label) {
        const auto it = report.names.find(l);
        std::snprintf(buf, sizeof buf, "%.6f", d);
        os << l << ',' << (it == report.names.end() ? "" : it->second) << ',' << buf << '\n';
    }
}

void print_volume_stats(std::ostream& os, const std::vector<LabelVolumeStat>& stats)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-8s %12s %12s %10s\n", "label", "mean_a_cm3", "mean_b_cm3", "ratio_%");
    os << buf;
    auto fmt = [](const std::optional<double>& v, const char* spec) {
        if (!v) return std::string("undefined");
        char b[32];
        std::snprintf(b, sizeof b, spec, *v);
        return std::string(b);
    };
    for (const auto& s : stats) {
        std::snprintf(buf, sizeof buf, "%-8d %12s %12s %10s\n", s.label, fmt(s.mean_a_cm3, "%.4f").c_str(),
                      fmt(s.mean_b_cm3, "%.4f").c_str(), fmt(s.ratio_percent, "%.1f").c_str());
        os << buf;
    }
}

} // namespace mmreg
