"""Multi-modal deformable registration of 3D volumes.

Volumes are numpy arrays indexed [z, y, x]; displacement fields have shape
(z, y, x, 3) with components (dx, dy, dz) in voxels.
"""

from ._mmreg import (
    LabelVolume,
    MhaError,
    Volume,
    __version__,
    combined,
    dice,
    endpoint_error,
    lncc,
    load_field,
    load_labels,
    load_volume,
    mind,
    mind_descriptor,
    nmi,
    phantom,
    register,
    register_rigid,
    save_labels,
    save_volume,
    set_threads,
    stitch,
    warp,
    warp_labels,
)

__all__ = [
    "LabelVolume", "MhaError", "Volume", "__version__", "combined", "dice", "endpoint_error", "lncc",
    "load_field", "load_labels", "load_volume", "mind", "mind_descriptor", "nmi", "phantom", "register",
    "register_rigid", "save_labels", "save_volume", "set_threads", "stitch", "warp", "warp_labels",
]
