"""Regularised velocity fields: mollification, pass-through and vortex blobs."""
from .blob import (
    DEFAULT_CELL_CAP,
    BlobDiscretization,
    BlobField,
    build_blob_lattice,
    radial_bump_vorticity,
    smallest_feasible_eps,
)
from .bounds import BoundsTable, blob_vorticity_error, box_grid, measure_bounds, verify_bounds
from .kernels import (
    MollifierKernel,
    biot_savart,
    biot_savart_split,
    gauss_legendre,
    mollified_biot_savart,
    mollified_biot_savart_grad,
    mollifier_kernel,
)
from .mollify import (
    ApproxField,
    MollifiedField,
    PassthroughField,
    ProfileTableField,
    RegularizationParams,
    SwirlTableField,
    as_field,
    mollify_field,
    passthrough,
    regularize,
)


def blob_velocity(blob, x):
    """``sum_i Gamma_i K_eps(x - alpha_i)`` at the points ``x``."""
    return blob.velocity(x)
