"""Knock-out barrier option pricing under local volatility.

The price of a time-dependent single- or double-barrier knock-out option is
decomposed into the European value minus a barrier premium given by time
integrals of the option's deltas along the barriers.  Those deltas solve a
weakly singular Volterra system of the first kind, discretised here by
product integration; constant-barrier GBM contracts also have a semi-analytic
Laplace-transform route.  One solve prices a whole spot ladder.
"""

from .contracts import (
    BarrierContract,
    Call,
    ConstantBarrier,
    DoubleNoTouch,
    ExponentialBarrier,
    Put,
    Regime,
    SmoothBump,
    validate,
)
from .errors import (
    AssemblyFailure,
    BarrierCrossing,
    ConfigError,
    DeterminantVanishing,
    InversionUnstable,
    NonpositiveBarrier,
    NonpositiveMaturity,
    NumericalError,
    ProfileMismatch,
    QuadratureFailure,
    SingularDiagonal,
    SpotOutsideCorridor,
    UnsupportedConfiguration,
    ValidationError,
)
from .estimator import BarrierOptionPricer
from .european import EuropeanValuator
from .models import CEV, GBM, dkernel_dx, kernel_diag, kernel_q, local_vol
from .pricing import Ladder, PriceResult, delta_at_barrier, ladder, price
from .volterra import (
    DeltaProfile,
    KernelSystem,
    TimeGrid,
    assemble_double,
    assemble_single,
    smooth_payoff,
    solve,
    solve_double,
    solve_single,
)

__version__ = "0.1.0"

__all__ = [
    "BarrierContract",
    "BarrierOptionPricer",
    "Call",
    "CEV",
    "ConstantBarrier",
    "DeltaProfile",
    "DoubleNoTouch",
    "EuropeanValuator",
    "ExponentialBarrier",
    "GBM",
    "KernelSystem",
    "Ladder",
    "PriceResult",
    "Put",
    "Regime",
    "SmoothBump",
    "TimeGrid",
    "assemble_double",
    "assemble_single",
    "delta_at_barrier",
    "dkernel_dx",
    "kernel_diag",
    "kernel_q",
    "ladder",
    "local_vol",
    "price",
    "smooth_payoff",
    "solve",
    "solve_double",
    "solve_single",
    "validate",
]
