#pragma once

#include "mmreg/volume.h"

#include <stdexcept>
#include <string>
#include <vector>

namespace mmreg {

/// Raised for malformed or unsupported MetaImage content and for I/O failures.
class MhaError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

enum class ElementType { uchar, int16, uint16, float32 };

std::string element_type_name(ElementType t);

/// Decoded MetaImage with embedded data. Values are widened to double;
/// channels are the fastest-varying dimension.
struct MhaImage
{
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    ElementType element_type = ElementType::float32;
    int channels = 1;
    std::vector<double> values;
};

MhaImage read_mha(const std::string& path);
void write_mha(const std::string& path, const MhaImage& image);

/// Any supported element type, widened to float.
Volume load_mha_volume(const std::string& path);

/// Integer element types only; negative values are rejected.
LabelVolume load_mha_labels(const std::string& path);

/// Volumes are stored as MET_FLOAT so the round trip is exact.
void save_mha(const Volume& volume, const std::string& path);

/// Labels are stored as MET_UCHAR when every value fits, else MET_USHORT.
void save_mha(const LabelVolume& labels, const std::string& path);

} // namespace mmreg
