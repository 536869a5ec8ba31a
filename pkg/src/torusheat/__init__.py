"""Heat traces and spectral actions of Laplace-type and Dirac operators on flat tori."""

__version__ = "0.1.0"

from .lattice import ConstantMetric, theta, theta_sum, poisson_dual  # noqa: E402
from .fields import FourierField, GaugeField, field_strength, pure_gauge  # noqa: E402
from .clifford import build_gammas, dirac_endomorphism  # noqa: E402
from .duhamel import heat_trace_second_order, form_factor_v, v1, v2, v3  # noqa: E402

__all__ = [
    "__version__",
    "ConstantMetric",
    "theta",
    "theta_sum",
    "poisson_dual",
    "FourierField",
    "GaugeField",
    "field_strength",
    "pure_gauge",
    "build_gammas",
    "dirac_endomorphism",
    "heat_trace_second_order",
    "form_factor_v",
    "v1",
    "v2",
    "v3",
]
