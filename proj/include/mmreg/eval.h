#pragma once

#include "mmreg/transform.h"
#include "mmreg/volume.h"

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mmreg {

struct DiceReport
{
    /// Dice per evaluated label (present in at least one input).
    std::map<int, double> per_label;
    /// Mean over evaluated labels; 0 when there are none.
    double mean = 0.0;
    /// Labels found in only one of the inputs (scored 0 and included in the mean).
    std::vector<int> one_sided;
    std::map<int, std::string> names;
};

DiceReport dice(const LabelVolume& a, const LabelVolume& b);

/// Nearest-neighbour warp of a label map.
LabelVolume propagate_labels(const LabelVolume& labels, const DenseField& field);

/// Label -> volume in cm^3.
std::map<int, double> label_volumes_cm3(const LabelVolume& labels);

struct LabelVolumeStat
{
    int label = 0;
    std::optional<double> mean_a_cm3;
    std::optional<double> mean_b_cm3;
    /// 100 * mean_a / mean_b; unset when the label is missing from a group.
    std::optional<double> ratio_percent;
};

/// Per-label mean volumes over each group (averaged over the volumes that
/// contain the label) and their ratio.
std::vector<LabelVolumeStat> volume_stats(const std::vector<LabelVolume>& group_a,
                                          const std::vector<LabelVolume>& group_b);

struct EndpointError
{
    double mean = 0.0;
    double max = 0.0;
};

EndpointError endpoint_error(const DenseField& estimated, const DenseField& truth);

void print_dice_table(std::ostream& os, const DiceReport& report);
void write_dice_csv(std::ostream& os, const DiceReport& report);
void print_volume_stats(std::ostream& os, const std::vector<LabelVolumeStat>& stats);

} // namespace mmreg
