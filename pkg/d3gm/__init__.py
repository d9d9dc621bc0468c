import os
import sys
import logging

__version__ = "0.3.0"

log = logging.getLogger("d3gm")
log.propagate = False
if not log.handlers:
    h = logging.StreamHandler(sys.stdout)
    h.setFormatter(logging.Formatter("[%(levelname)s] D3GM: %(message)s"))
    log.addHandler(h)
log.setLevel(os.environ.get("D3GM_LOG_LEVEL", "INFO").upper())

from .errors import (  # noqa: E402
    D3gmError,
    ValidationError,
    DomainError,
    ConfigError,
    AlignmentError,
    HorizonError,
    NumericError,
    SingularScheduleError,
    SimulationError,
    TrainingError,
)
from .schedules import (  # noqa: E402
    Schedule,
    ScheduleKind,
    CoupledVolatility,
    DecoupledVolatility,
    theta_at,
    theta_bar,
    sigma_at,
)
from .forward import (  # noqa: E402
    ProcessParams,
    Trajectory,
    GaussianMarginal,
    em_step,
    simulate_forward,
    simulate_ensemble,
    marginal,
    stationary_law,
    sample_marginal,
)
from .brownian import BrownianPath, brownian_path  # noqa: E402
