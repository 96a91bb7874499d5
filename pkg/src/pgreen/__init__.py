"""Green's functions of periodic elliptic operators near a spectral edge."""

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

from .band import (
    BandSurface,
    EdgeCertificate,
    band_gradient,
    band_grid,
    band_hessian,
    certify,
    edge_shift,
    locate_edge,
    quadratic_residual_exponent,
    solve_fiber,
)
from .errors import *  # noqa: F401,F403
from .floquet import (
    BlochMatrix,
    LatticeSamples,
    PlaneWaveBasis,
    TorusFunction,
    assemble_bloch,
    assemble_d2k,
    assemble_dk,
    floquet_transform,
    inverse_floquet,
)
from .green import (
    AsymptoticModel,
    GreenEvaluation,
    QuadratureSpec,
    SweepResult,
    asymptotic_leading,
    bloch_branch,
    eta_cutoff,
    fitted_exponent,
    free_kernel_quadrature,
    full_green,
    full_green_many,
    newtonian_constant,
    newtonian_potential,
    ratio_sweep,
    reduced_green,
    unit_ball_volume,
)
from .operator import (
    FourierField,
    PeriodicOperator,
    build_operator,
    catalog,
    load_operator,
    separable_operator,
    shift_and_flip,
    validate,
)
from .oracle import SeparableOracle, compare_to_oracle, schrodinger_reference, separable_reference
