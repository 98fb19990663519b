"""Design and validation of freeform refractors for parallel incident light.

A refractor is built as the lower envelope of hyperboloids of revolution
whose foci sit on a receiver surface; each sheet sends the vertical rays
it intercepts to its focus.  The solver picks the semiaxes so that every
focus receives a prescribed share of the source energy, and the remaining
modules check the result by ray tracing, by the Monge-Ampere residual of
smooth surfaces and by the regularity condition on the receiver.
"""

from .domain import ConstantDensity, Disk, ExpressionDensity, GridDensity, Polygon, Rect, make_grid
from .envelope import LegendreTransform, RefractorEnvelope, load_envelope, save_envelope
from .errors import *  # noqa: F401,F403
from .kernels import BACKEND
from .quadrics import (
    ConicSection,
    Eccentricity,
    Ellipsoid,
    Hyperboloid,
    confocal_expand,
    confocal_expand_s,
    contact_conic,
    ellipsoid_eval_grad,
    hyperboloid_derivatives,
    hyperboloid_eval,
    max_semiaxis,
)
from .receiver import (
    GraphReceiver,
    HorizontalPlane,
    ImplicitReceiver,
    SurfacePoint,
    check_visibility,
    paraboloid,
    second_fundamental_form,
    sphere_cap,
    stretch,
    stretch_gradient,
)
from .refraction import cone_floor, refract, refract_from_normal, surface_normal
from .solver import ProblemSpec, SolveReport, check_span, flux, solve

__version__ = "0.1.0"
