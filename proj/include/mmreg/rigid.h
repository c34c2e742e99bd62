#pragma once

#include "mmreg/volume.h"

#include <cstdint>

namespace mmreg {

/// Rotation (radians, applied x then y then z) about the fixed volume's
/// physical centre, followed by a translation in mm. Maps fixed-space
/// points into the moving image.
struct RigidTransform
{
    Vec3 rotation_rad{0.0, 0.0, 0.0};
    Vec3 translation_mm{0.0, 0.0, 0.0};
};

/// Moving image resampled on the reference grid: out(p) = moving(T(p)).
Volume apply_rigid(const Volume& moving, const RigidTransform& transform, const Volume& reference);

struct RigidOptions
{
    int iterations = 600;
    std::uint64_t seed = 0x5EED;
    /// pyramid levels; iterations are split evenly across them
    int levels = 2;
    /// initial mutation radius in mm (rotations are scaled by the volume radius)
    double initial_radius_mm = 2.0;
    double growth = 1.05;
    double shrink = 0.98;
    int bins = 100;
};

struct RigidResult
{
    RigidTransform transform;
    Volume resampled;
    double cost = 0.0;
    int evaluations = 0;
    int accepted = 0;
};

/// (1+1) evolution strategy minimising the NMI dissimilarity.
RigidResult register_rigid(const Volume& fixed, const Volume& moving, const RigidOptions& options = {});

} // namespace mmreg
