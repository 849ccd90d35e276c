"""
Asynchronous parallel coordinate descent for ``F(x) = f(x) + lam * h(x)``
with a least-squares ``f`` and an L1 or DC-concave sparsity penalty ``h``.

Workers share one iterate, each owning a contiguous slice of coordinates,
and read it without locks. See :func:`run_async` for the solver and
:mod:`asyflexa.bench` for the experiment drivers.
"""

from .engine import (SharedIterate, SolverConfig, StepSchedule, SyncConfig, TauHeuristic, Trace,
                     arock_component_update, asyflexa_component_update,
                     aspcd_component_update, measure_delays, partition_blocks, run_async,
                     run_serial, run_sync_reference)
from .generators import (GeneratedInstance, gen_gondzio, gen_liu_wright, gen_nesterov,
                         gen_nonconvex_sparse)
from .instance_io import load_instance, save_instance
from .kernels import (best_response, best_response_dc, best_response_l1, merit_infinity, nmse,
                      prox_gradient_residual, relative_error, soft_threshold)
from .model import (CompositeProblem, Family, LossMode, QuadraticLoss, Regularizer,
                    lipschitz_constant, objective, partial_gradient, smooth_gradient)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
