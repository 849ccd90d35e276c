"""
Shared-memory asynchronous coordinate solver.

Workers are Python threads running compiled ``nogil`` kernels over the same
numpy buffers. Each worker owns a contiguous range of coordinates and is the
only writer of those cells; every other cell it reads may be stale, and a
gradient evaluation may mix values from different global iterations. The
global update counter and the matrix-free residual are updated with atomic
read-modify-write instructions; nothing on the hot path takes a lock.

Three update rules share the machinery:

``asyflexa``
    relaxed best response ``x_i + gamma (xhat_i - x_i)`` with the proximal
    weight ``tau`` shared among workers and adapted every ``window`` updates.
``arock``
    damped prox-gradient step with a global Lipschitz constant.
``aspcd``
    unit-step coordinate prox-gradient with the coordinate curvature.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, NamedTuple

import numpy as np
from numba import njit

from . import kernels as K
from ._atomics import atomic_add_f64, atomic_add_i64, sched_yield
from .model import CompositeProblem, Family, LossMode, objective

log = logging.getLogger(__name__)

RULES = {"asyflexa": 0, "arock": 1, "aspcd": 2}
ORDERS = {"cyclic": 0, "random": 1}
TRACE_COLUMNS = ("time_s", "k", "objective", "rel_err", "merit", "max_delay", "gamma", "tau")

_PAD = 8  # float64 cells per worker slot, one cache line
_DELAY_BINS = 4096
_GAMMA_TABLE_CAP = 1 << 22  # stepsizes tabulated; beyond this the tail is closed-form


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class StepSchedule:
    """
    Relaxation stepsize.

    ``fixed`` uses ``gamma`` throughout. ``diminishing`` starts at ``gamma``
    and follows ``g <- g (1 - mu g)``; ``floor`` bounds the value actually used
    from below (the recursion itself is not floored).
    """

    kind: str = "diminishing"
    gamma: float = 1.0
    mu: float = 1e-6
    floor: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "diminishing"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.kind == "diminishing":
            if not self.mu > 0 or self.mu * self.gamma >= 1.0:
                raise ValueError("need mu > 0 and mu * gamma0 < 1")
            if self.floor < 0:
                raise ValueError("floor must be nonnegative")

    @classmethod
    def fixed(cls, gamma: float) -> "StepSchedule":
        return cls("fixed", gamma)

    @classmethod
    def diminishing(cls, gamma0: float = 1.0, mu: float = 1e-6, floor: float = 0.0):
        return cls("diminishing", gamma0, mu, floor)

    def sequence(self, length: int) -> np.ndarray:
        """Stepsizes for global iterations ``0 .. length-1``, floor applied."""
        if self.kind == "fixed":
            return np.full(length, self.gamma)
        g = _diminishing_table(self.gamma, self.mu, int(length))
        if self.floor > 0:
            np.maximum(g, self.floor, out=g)
        return g

    def table(self, length: int):
        """
        Unfloored stepsizes for ``min(length, cap)`` iterations plus the
        ``(mu, floor)`` pair the compiled lookup needs past the end.

        Past the table, ``1/g`` is continued by the recursion's expansion to
        second order in ``mu``, which tracks the exact values to a relative
        ``O(mu^2)``.
        """
        length = max(1, min(int(length), _GAMMA_TABLE_CAP))
        if self.kind == "fixed":
            return np.full(1, self.gamma), np.zeros(2)
        return (_diminishing_table(self.gamma, self.mu, length),
                np.array([self.mu, self.floor]))

    def at(self, k: int) -> float:
        g, par = self.table(k + 1)
        return float(_gamma_at(g, par, k))


@njit(nogil=True, cache=True, error_model="numpy")
def _gamma_at(gammas, gpar, k):
    ng = gammas.shape[0]
    if k < ng:
        g = gammas[k]
    elif gpar[0] == 0.0:
        g = gammas[ng - 1]
    else:
        # 1/g gains mu + mu^2 g + O(mu^3) per step; the second term sums to a log
        a = 1.0 / gammas[ng - 1]
        md = gpar[0] * (k - ng + 1)
        g = 1.0 / (a + md + gpar[0] * math.log1p(md / a))
    return max(g, gpar[1])


@njit(cache=True)
def _diminishing_table(g0, mu, length):
    out = np.empty(length)
    g = g0
    for k in range(length):
        out[k] = g
        g = g * (1.0 - mu * g)
    return out


@dataclass(frozen=True)
class TauHeuristic:
    """
    Proximal weight control.

    With ``fixed`` set, tau is that constant (zero is allowed when every
    ``q_i > 0``; it gives exact coordinate minimization). Otherwise it starts at
    ``tau0_scale * max_i q_i`` and every ``window`` global updates (``n`` when
    None) shrinks by ``shrink`` if the objective proxy went down over the
    window, grows by ``grow`` if not, clamped to ``[tau_min, tau_max]`` given
    relative to ``max_i q_i``.
    """

    tau0_scale: float = 0.5
    shrink: float = 0.9
    grow: float = 2.0
    window: int | None = None
    tau_min_rel: float = 1e-8
    tau_max_rel: float = 1e8
    fixed: float | None = None

    def __post_init__(self):
        if not 0 < self.shrink < 1 or not self.grow > 1:
            raise ValueError("need 0 < shrink < 1 < grow")
        if self.fixed is not None and not self.fixed >= 0:
            raise ValueError("fixed tau must be nonnegative")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be positive")

    @property
    def adaptive(self) -> bool:
        return self.fixed is None

    def bounds(self, qmax: float) -> tuple[float, float]:
        qmax = qmax if qmax > 0 else 1.0
        return self.tau_min_rel * qmax, self.tau_max_rel * qmax

    def initial(self, qmax: float) -> float:
        if self.fixed is not None:
            return float(self.fixed)
        lo, hi = self.bounds(qmax)
        return float(min(hi, max(lo, self.tau0_scale * (qmax if qmax > 0 else 1.0))))


def tau_update(tau: float, decreased: bool, heuristic: TauHeuristic, qmax: float) -> float:
    """One adjustment of the proximal weight after a window of updates."""
    lo, hi = heuristic.bounds(qmax)
    if decreased:
        return max(lo, heuristic.shrink * tau)
    return min(hi, heuristic.grow * tau)


@dataclass(frozen=True)
class Partition:
    """Contiguous ownership ranges; worker ``w`` owns ``starts[w]:starts[w+1]``."""

    starts: tuple

    @property
    def P(self) -> int:
        return len(self.starts) - 1

    @property
    def n(self) -> int:
        return self.starts[-1]

    def ranges(self) -> list[range]:
        return [range(a, b) for a, b in zip(self.starts[:-1], self.starts[1:])]

    def owner(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexError(i)
        return int(np.searchsorted(self.starts, i, side="right") - 1)

    def assignment(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for w, r in enumerate(self.ranges()):
            out[r.start:r.stop] = w
        return out


def partition_blocks(n: int, P: int) -> Partition:
    """Balanced contiguous split; the first ``n % P`` ranges get one extra block."""
    if not 1 <= P <= n:
        raise ValueError(f"need 1 <= P <= n, got P={P}, n={n}")
    base, extra = divmod(n, P)
    sizes = [base + (w < extra) for w in range(P)]
    return Partition(tuple(int(s) for s in np.concatenate([[0], np.cumsum(sizes)])))


@dataclass(frozen=True)
class SolverConfig:
    rule: str = "asyflexa"
    threads: int = 1
    schedule: StepSchedule = field(default_factory=StepSchedule)
    tau: TauHeuristic = field(default_factory=TauHeuristic)
    order: str = "cyclic"
    seed: int = 0
    rel_err: float | None = None
    merit: float | None = None
    max_iter: int | None = None
    time_budget_s: float | None = None
    lipschitz: float | None = None
    sample_interval_s: float = 0.005
    merit_tau: float | None = None
    track_delays: bool = False
    log_writes: bool = False
    log_capacity: int = 1024
    yield_when_oversubscribed: bool = True
    sample_merit: bool = True

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.order not in ORDERS:
            raise ValueError(f"unknown order {self.order!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.rule == "arock" and self.lipschitz is None:
            raise ValueError("arock needs a Lipschitz estimate (lipschitz=...)")
        if self.lipschitz is not None and not self.lipschitz > 0:
            raise ValueError("lipschitz must be positive")

    @classmethod
    def from_mapping(cls, d: dict) -> "SolverConfig":
        """Build from a (possibly nested or dotted-key) mapping."""
        d = _nest(d)
        kw: dict[str, Any] = {}
        for key in ("rule", "order"):
            if key in d:
                kw[key] = str(d[key])
        for key in ("threads", "seed", "log_capacity"):
            if key in d:
                kw[key] = int(d[key])
        for key in ("lipschitz", "sample_interval_s", "merit_tau"):
            if key in d:
                kw[key] = float(d[key])
        for key in ("track_delays", "log_writes", "yield_when_oversubscribed", "sample_merit"):
            if key in d:
                kw[key] = _as_bool(d[key])
        sched = d.get("schedule")
        if sched is not None:
            if isinstance(sched, str):
                sched = {"kind": sched}
            sched = dict(sched)
            for k2 in ("gamma", "gamma0"):
                if k2 in sched:
                    sched["gamma"] = float(sched.pop(k2))
            for k2 in ("mu", "floor"):
                if k2 in sched:
                    sched[k2] = float(sched[k2])
            kw["schedule"] = StepSchedule(**sched)
        tau = d.get("tau")
        if tau is not None:
            if not isinstance(tau, dict):
                tau = {"fixed": tau}
            conv = {"window": int, "fixed": float}
            kw["tau"] = TauHeuristic(**{k2: conv.get(k2, float)(v) for k2, v in tau.items()})
        term = d.get("termination", {})
        for key, conv in (("rel_err", float), ("merit", float), ("max_iter", int),
                          ("time_budget_s", float)):
            v = term.get(key, d.get(key))
            if v is not None:
                kw[key] = conv(v)
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "on")
    return bool(v)


def _nest(d: dict) -> dict:
    """Expand dotted keys (``tau.shrink``) into nested dicts."""
    out: dict = {}
    for key, v in d.items():
        *head, last = str(key).split(".")
        cur = out
        for p in head:
            cur = cur.setdefault(p, {})
        if isinstance(v, dict):
            cur.setdefault(last, {}).update(_nest(v))
        else:
            cur[last] = v
    return out


def parse_key_values(text: str) -> dict:
    """``key = value`` lines (``#`` comments); values parsed as JSON when possible."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def read_config_mapping(path) -> dict:
    """Raw settings from a JSON object or a ``key = value`` file, not yet validated."""
    with open(path) as fh:
        text = fh.read()
    return json.loads(text) if text.lstrip().startswith("{") else parse_key_values(text)


def load_config(path) -> SolverConfig:
    return SolverConfig.from_mapping(read_config_mapping(path))


# ---------------------------------------------------------------------------
# shared state


class SharedIterate:
    """
    The cross-worker mutable state: ``x``, the matrix-free residual
    ``A x - b`` and the global update counter ``k``.
    """

    def __init__(self, problem: CompositeProblem, x0=None):
        n = problem.n
        self.x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
        if self.x.shape != (n,):
            raise ValueError("x0 has the wrong shape")
        self.k = np.zeros(1, dtype=np.int64)
        if problem.loss.mode is LossMode.MATRIX_FREE:
            self.residual = np.ascontiguousarray(problem.loss.residual(self.x), dtype=np.float64)
        else:
            self.residual = np.zeros(0)

    def snapshot(self) -> np.ndarray:
        return self.x.copy()


def _problem_pack(problem: CompositeProblem, lipschitz: float | None):
    loss, reg = problem.loss, problem.reg
    if loss.mode is LossMode.GRAM:
        arrays = (loss.gram, loss.atb, loss.gram_diag,
                  np.zeros(1, np.int64), np.zeros(1, np.int64), np.zeros(1))
        use_gram = True
    else:
        indptr, indices, data = loss.csc
        arrays = (np.zeros((1, 1)), loss.atb, loss.gram_diag, indptr, indices, data)
        use_gram = False
    scalars = np.array([loss.curvature, reg.lam, reg.theta, reg.eta,
                        lipschitz if lipschitz is not None else 0.0])
    return use_gram, int(reg.family), arrays, scalars


# ---------------------------------------------------------------------------
# compiled hot path


@njit(nogil=True, cache=True, error_model="numpy")
def _coordinate_step(i, rule, gamma, tau, x, resid, use_gram, fam, pk, sc):
    """
    One component update of coordinate ``i``; writes ``x[i]`` and, in
    matrix-free mode, pushes the change into the residual.

    Returns ``(x_old, xhat, x_new, grad, q, skipped)``.
    """
    gram, atb, diag, indptr, indices, data = pk
    cmul, lam, theta, eta, lip = sc[0], sc[1], sc[2], sc[3], sc[4]
    xt = x[i]
    s = 0.0
    if use_gram:
        row = gram[i]
        for j in range(row.shape[0]):
            s += row[j] * x[j]
        grad = cmul * (s - atb[i])
    else:
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * resid[indices[p]]
        grad = cmul * s
    q = cmul * diag[i]
    geff = grad
    thr = lam
    if fam != K.FAM_L1:
        geff = grad - lam * K.nb_hminus_grad(fam, theta, eta, xt)
        thr = lam * eta
    if rule == 0:
        d = q + tau
        xhat = K.nb_soft_threshold(xt - geff / d, thr / d)
        xnew = xt + gamma * (xhat - xt)
    elif rule == 1:
        xhat = K.nb_soft_threshold(xt - geff / lip, thr / lip)
        xnew = xt - gamma * (xt - xhat)
    else:
        if q <= 0.0:
            return xt, xt, xt, grad, q, True
        xhat = K.nb_soft_threshold(xt - geff / q, thr / q)
        xnew = xhat
    x[i] = xnew
    delta = xnew - xt
    if not use_gram and delta != 0.0:
        for p in range(indptr[i], indptr[i + 1]):
            atomic_add_f64(resid, indices[p], delta * data[p])
    return xt, xhat, xnew, grad, q, False


@njit(nogil=True, cache=True, error_model="numpy")
def _apply_update(i, rule, gamma, tau, x, resid, k, use_gram, fam, pk, sc):
    xt, xhat, xnew, grad, q, skipped = _coordinate_step(
        i, rule, gamma, tau, x, resid, use_gram, fam, pk, sc)
    if not skipped:
        atomic_add_i64(k, 0, 1)
    return xt, xhat, xnew, skipped


@njit(nogil=True, cache=True, error_model="numpy")
def _worker(wid, lo, hi, rule, order, seed, x, resid, k, stop, status,
            use_gram, fam, pk, sc, gammas, gpar, max_iter,
            tau_arr, tau_state, tau_par, proxy,
            track_delays, delay_hist, delay_max,
            log_writes, write_counts, upd_log, upd_count, skipped, yield_sweeps):
    if order == 1:
        np.random.seed(seed + 7919 * wid)
    lam, theta = sc[1], sc[2]
    nbins = delay_hist.shape[1]
    cap = upd_log.shape[1]
    width = hi - lo
    i = lo
    while stop[0] == 0:
        if order == 1:
            i = lo + np.random.randint(width)
        kread = k[0]
        gamma = _gamma_at(gammas, gpar, kread)
        tau = tau_arr[0]
        xt, xhat, xnew, grad, q, skip = _coordinate_step(
            i, rule, gamma, tau, x, resid, use_gram, fam, pk, sc)
        if skip:
            skipped[wid] += 1
        elif not math.isfinite(xnew):
            status[0] = 1
            status[1] = i
            stop[0] = 1
            break
        else:
            d = xnew - xt
            proxy[wid * 8] += grad * d + 0.5 * q * d * d + lam * (
                K.nb_h(fam, theta, xnew) - K.nb_h(fam, theta, xt))
            kc = atomic_add_i64(k, 0, 1)
            if track_delays:
                dl = kc - kread
                if dl > delay_max[wid]:
                    delay_max[wid] = dl
                delay_hist[wid, dl if dl < nbins else nbins - 1] += 1
            if log_writes:
                write_counts[wid, i] += 1
                c = upd_count[wid]
                if c < cap:
                    upd_log[wid, c, 0] = i
                    upd_log[wid, c, 1] = xt
                    upd_log[wid, c, 2] = xhat
                    upd_log[wid, c, 3] = gamma
                    upd_log[wid, c, 4] = xnew
                upd_count[wid] = c + 1
            if kc + 1 >= max_iter:
                stop[0] = 1
            # tau_state: last proxy, next boundary, window, adaptive flag
            if wid == 0 and tau_state[3] > 0.0 and kc + 1 >= tau_state[1]:
                cur = 0.0
                for w in range(proxy.shape[0] // 8):
                    cur += proxy[w * 8]
                t = tau_arr[0]
                if cur < tau_state[0]:
                    t = max(tau_par[2], tau_par[0] * t)
                else:
                    t = min(tau_par[3], tau_par[1] * t)
                tau_arr[0] = t
                tau_state[0] = cur
                tau_state[1] = kc + 1 + tau_state[2]
        i += 1
        if i >= hi:
            i = lo
            if yield_sweeps:
                sched_yield()


# ---------------------------------------------------------------------------
# single component updates (public, single-threaded use)


def _single(shared, problem, i, rule, gamma, tau, lipschitz=None):
    if not 0 <= i < problem.n:
        raise IndexError(i)
    use_gram, fam, pk, sc = _problem_pack(problem, lipschitz)
    _, xhat, xnew, skipped = _apply_update(i, rule, gamma, tau, shared.x, shared.residual,
                                           shared.k, use_gram, fam, pk, sc)
    return xnew


def asyflexa_component_update(shared: SharedIterate, problem: CompositeProblem, i: int,
                              gamma: float, tau: float) -> float:
    """``x_i <- x_i + gamma (xhat_i - x_i)`` from the current (shared) snapshot."""
    if not 0 < gamma <= 1 or not tau > 0:
        raise ValueError("need 0 < gamma <= 1 and tau > 0")
    return _single(shared, problem, i, 0, gamma, tau)


def arock_component_update(shared: SharedIterate, problem: CompositeProblem, i: int,
                           gamma: float, lipschitz: float) -> float:
    if lipschitz is None or not lipschitz > 0:
        raise ValueError("arock needs a positive Lipschitz estimate")
    return _single(shared, problem, i, 1, gamma, 0.0, lipschitz)


def aspcd_component_update(shared: SharedIterate, problem: CompositeProblem, i: int) -> float:
    return _single(shared, problem, i, 2, 1.0, 0.0)


# ---------------------------------------------------------------------------
# trace


@dataclass
class Trace:
    """Telemetry rows plus the run's bookkeeping."""

    rows: list = field(default_factory=list)
    cpu_time: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    reason: str = ""
    k_final: int = 0
    skipped: int = 0
    delay_histogram: np.ndarray | None = None
    write_counts: np.ndarray | None = None
    update_log: np.ndarray | None = None
    tau_final: float = float("nan")

    def append(self, row, cpu):
        self.rows.append(tuple(row))
        self.cpu_time.append(cpu)

    def column(self, name: str) -> np.ndarray:
        j = TRACE_COLUMNS.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))

    def time_to(self, column: str, target: float) -> float | None:
        """First recorded wall time at which ``column <= target``."""
        vals = self.column(column)
        hit = np.nonzero(vals <= target)[0]
        return None if hit.size == 0 else float(self.column("time_s")[hit[0]])

    def to_csv(self, path, cpu_column: bool = False) -> None:
        """Write the rows; ``cpu_column`` appends process CPU seconds as ``cpu_s``."""
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS + (("cpu_s",) if cpu_column else ()))
            for r, c in zip(self.rows, self.cpu_time):
                r = r + (c,) if cpu_column else r
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])

    @property
    def max_delay(self) -> int:
        if self.delay_histogram is None:
            return -1
        nz = np.nonzero(self.delay_histogram)[0]
        return int(nz[-1]) if nz.size else 0


class DelayStats(NamedTuple):
    max: int
    histogram: np.ndarray
    mean: float


def measure_delays(trace: Trace) -> DelayStats:
    """
    Observed staleness of the runs' updates: for each update, the number of
    global updates committed between the start of its read and its own commit.
    """
    if trace.delay_histogram is None:
        raise ValueError("run was made without track_delays=True")
    h = trace.delay_histogram
    total = h.sum()
    mean = float((np.arange(h.size) * h).sum() / total) if total else 0.0
    return DelayStats(trace.max_delay, h.copy(), mean)


# ---------------------------------------------------------------------------
# drivers


def _available_parallelism() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover
        return os.cpu_count() or 1


def run_async(problem: CompositeProblem, config: SolverConfig = SolverConfig(), x0=None,
              shared: SharedIterate | None = None):
    """
    Run the asynchronous solver.

    Returns
    -------
    x : ndarray
        Solution read after all workers have stopped.
    trace : Trace
    """
    n = problem.n
    P = config.threads
    if P > n:
        raise ValueError("more threads than coordinates")
    oversubscribed = P > _available_parallelism()
    if oversubscribed:
        warnings.warn(f"{P} workers on {_available_parallelism()} available cores; "
                      "workers will be time-sliced", RuntimeWarning, stacklevel=2)
    rule = RULES[config.rule]
    lipschitz = config.lipschitz
    if shared is None:
        shared = SharedIterate(problem, x0)
    part = partition_blocks(n, P)
    max_iter = config.max_iter if config.max_iter is not None else 100 * n
    k0 = int(shared.k[0])
    gammas, gpar = config.schedule.table(k0 + max_iter + P + 1)
    if config.rule == "arock" and config.schedule.kind == "diminishing" and config.schedule.floor == 0:
        log.info("arock without a stepsize floor")

    use_gram, fam, pk, sc = _problem_pack(problem, lipschitz)
    q = problem.loss.curvature * problem.loss.gram_diag
    qmax = float(q.max()) if q.size else 1.0
    heur = config.tau
    tau_arr = np.array([heur.initial(qmax)])
    lo_t, hi_t = heur.bounds(qmax)
    window = heur.window if heur.window is not None else n
    tau_state = np.array([np.inf, k0 + window, window, 1.0 if heur.adaptive else 0.0])
    tau_par = np.array([heur.shrink, heur.grow, lo_t, hi_t])
    proxy = np.zeros(P * _PAD)
    stop = np.zeros(1, dtype=np.int64)
    status = np.zeros(4, dtype=np.int64)
    delay_hist = np.zeros((P, _DELAY_BINS if config.track_delays else 1), dtype=np.int64)
    delay_max = np.zeros(P, dtype=np.int64)
    write_counts = np.zeros((P, n) if config.log_writes else (1, 1), dtype=np.int64)
    cap = config.log_capacity if config.log_writes else 0
    upd_log = np.zeros((P, max(cap, 1), 5))
    upd_count = np.zeros(P, dtype=np.int64)
    skipped = np.zeros(P, dtype=np.int64)

    mtau = config.merit_tau if config.merit_tau is not None else K.merit_tau(problem)
    fstar = problem.fstar
    trace = Trace(meta={
        "rule": config.rule, "threads": P, "seed": config.seed, "order": config.order,
        "schedule": asdict(config.schedule), "tau": asdict(config.tau),
        "tau0": float(tau_arr[0]), "max_iter": max_iter, "loss_mode": problem.loss.mode.value,
        "loss_scale": problem.loss.scale, "family": problem.reg.family.name,
        "lam": problem.reg.lam, "theta": problem.reg.theta, "merit_tau": mtau,
        "rel_err_definition": K.RELATIVE_ERROR_DEFINITION, "fstar": fstar,
        "available_parallelism": _available_parallelism(),
        "yield_per_sweep": bool(oversubscribed and config.yield_when_oversubscribed),
        "delay_definition": "global updates committed between read start and commit",
    })

    def sample(t, cpu, xs):
        with np.errstate(all="ignore"):  # divergence is reported through the reason
            F = objective(problem, xs)
            rel = K.relative_error(F, fstar) if fstar is not None else float("nan")
            mer = K.merit_infinity(problem, xs, mtau) if config.sample_merit else float("nan")
        kk = int(shared.k[0])
        g = float(_gamma_at(gammas, gpar, kk))
        md = int(delay_max.max()) if config.track_delays else -1
        row = (t, kk, F, rel, mer, md, g, float(tau_arr[0]))
        if not trace.rows or kk > trace.rows[-1][1]:
            trace.append(row, cpu)
        return F, rel, mer

    args_common = (rule, ORDERS[config.order], config.seed, shared.x, shared.residual,
                   shared.k, stop, status, use_gram, fam, pk, sc, gammas, gpar, k0 + max_iter,
                   tau_arr, tau_state, tau_par, proxy, config.track_delays, delay_hist,
                   delay_max, config.log_writes, write_counts, upd_log, upd_count, skipped,
                   oversubscribed and config.yield_when_oversubscribed)
    threads = [threading.Thread(target=_worker, args=(w, r.start, r.stop) + args_common,
                                daemon=True) for w, r in enumerate(part.ranges())]
    # resolve (compile or load) the specialization before the clock starts
    _worker(0, 0, n, *args_common[:6], np.ones(1, dtype=np.int64), *args_common[7:])

    c0 = time.process_time()
    t0 = time.perf_counter()
    sample(0.0, 0.0, shared.snapshot())
    for th in threads:
        th.start()
    reason = ""
    while True:
        alive = any(th.is_alive() for th in threads)
        if not alive:
            break
        time.sleep(config.sample_interval_s)
        t = time.perf_counter() - t0
        F, rel, mer = sample(t, time.process_time() - c0, shared.snapshot())
        if not math.isfinite(F):
            reason = "nonfinite"
        elif config.rel_err is not None and rel <= config.rel_err:
            reason = "rel_err"
        elif config.merit is not None and mer <= config.merit:
            reason = "merit"
        elif config.time_budget_s is not None and t >= config.time_budget_s:
            reason = "time_budget"
        if reason:
            if reason == "nonfinite" and trace.rows:
                trace.rows.pop()
                trace.cpu_time.pop()
            stop[0] = 1
            break
    for th in threads:
        th.join()
    t_end = time.perf_counter() - t0
    x = shared.snapshot()
    if status[0]:
        reason = "nonfinite"
        log.error("non-finite iterate at coordinate %d; run aborted", status[1])
    elif not reason:
        reason = "max_iter"
    if reason != "nonfinite":
        F, rel, mer = sample(t_end, time.process_time() - c0, x)
        if reason == "max_iter":
            if config.rel_err is not None and rel <= config.rel_err:
                reason = "rel_err"
            elif config.merit is not None and mer <= config.merit:
                reason = "merit"

    trace.reason = reason
    trace.k_final = int(shared.k[0])
    trace.skipped = int(skipped.sum())
    trace.tau_final = float(tau_arr[0])
    if config.track_delays:
        trace.delay_histogram = delay_hist.sum(axis=0)
    if config.log_writes:
        trace.write_counts = write_counts
        trace.update_log = [upd_log[w, :min(cap, upd_count[w])].copy() for w in range(P)]
    trace.meta["wall_time_s"] = t_end
    trace.meta["reason"] = reason
    return x, trace


def run_serial(problem: CompositeProblem, config: SolverConfig = SolverConfig(), x0=None,
               callback=None, every: int | None = None, shared: SharedIterate | None = None):
    """
    Single-threaded run of the same compiled kernel, without a sampler.

    ``callback(k, x)`` is invoked at ``k = 0`` and after every ``every``
    updates (default ``n``); returning True stops the run. Deterministic for a
    fixed config. Returns ``(x, k)``.
    """
    n = problem.n
    every = n if every is None else int(every)
    max_iter = config.max_iter if config.max_iter is not None else 100 * n
    if shared is None:
        shared = SharedIterate(problem, x0)
    k0 = int(shared.k[0])
    use_gram, fam, pk, sc = _problem_pack(problem, config.lipschitz)
    q = problem.loss.curvature * problem.loss.gram_diag
    qmax = float(q.max()) if q.size else 1.0
    heur = config.tau
    window = heur.window if heur.window is not None else n
    lo_t, hi_t = heur.bounds(qmax)
    tau_arr = np.array([heur.initial(qmax)])
    tau_state = np.array([np.inf, k0 + window, window, 1.0 if heur.adaptive else 0.0])
    tau_par = np.array([heur.shrink, heur.grow, lo_t, hi_t])
    gammas, gpar = config.schedule.table(k0 + max_iter + 2)
    stop = np.zeros(1, dtype=np.int64)
    status = np.zeros(4, dtype=np.int64)
    proxy = np.zeros(_PAD)
    i64 = lambda *shape: np.zeros(shape, dtype=np.int64)
    scratch = (config.track_delays and False, i64(1, 1), i64(1), False, i64(1, 1),
               np.zeros((1, 1, 5)), i64(1), i64(1), False)
    rule, order = RULES[config.rule], ORDERS[config.order]
    if callback is not None and callback(k0, shared.x):
        return shared.snapshot(), k0
    chunk = 0
    target = k0
    while target < k0 + max_iter:
        target = min(k0 + max_iter, target + every)
        stop[0] = 0
        # the cyclic cursor restarts at 0 each call, so chunks stay aligned only when every % n == 0
        _worker(0, 0, n, rule, order, config.seed + 104729 * chunk, shared.x, shared.residual,
                shared.k, stop, status, use_gram, fam, pk, sc, gammas, gpar, target,
                tau_arr, tau_state, tau_par, proxy, *scratch)
        chunk += 1
        if status[0]:
            raise FloatingPointError(f"non-finite iterate at coordinate {status[1]}")
        if callback is not None and callback(int(shared.k[0]), shared.x):
            break
    return shared.snapshot(), int(shared.k[0])


class SyncResult(NamedTuple):
    x: np.ndarray
    fstar: float
    converged: bool
    sweeps: int
    history: np.ndarray
    problem: CompositeProblem
    max_delay: int = 0  # every sweep reads the current iterate


@dataclass(frozen=True)
class SyncConfig:
    """
    Jacobi sweeps of the relaxed best response. With ``tau=None`` the
    per-coordinate weights are ``c * q_i`` with ``c`` the largest eigenvalue
    of the Jacobi-scaled Hessian, the smallest multiple of ``diag(q)`` that
    majorizes the loss; a number sets the uniform weight ``q_i + tau``.

    Besides the objective stall test, convergence requires
    ``||M_F(x)||_inf <= stationarity_tol`` (skipped when None): at step
    ``1/L`` the objective can stall well before the iterate settles. The
    tolerance is raised to ``1e3 * eps * ||grad f(0)||_inf`` when that is
    larger, since badly scaled data cannot get below its rounding floor.
    """

    gamma: float = 1.0
    tau: float | None = None
    max_sweeps: int = 200_000
    rtol: float = 1e-12
    patience: int = 10
    record_every: int = 1
    stationarity_tol: float | None = 1e-9


def _diagonal_majorizer(problem: CompositeProblem) -> np.ndarray:
    """``c * q`` with ``c = lambda_max(Q^-1/2 H Q^-1/2)``; zero columns get weight 1."""
    loss = problem.loss
    q = loss.curvature * loss.gram_diag
    pos = q > 0
    if not pos.any():
        return np.ones_like(q)
    s = np.zeros_like(q)
    s[pos] = 1.0 / np.sqrt(q[pos])
    if loss.gram is not None:
        M = loss.curvature * loss.gram * s[:, None] * s[None, :]
        c = float(np.linalg.eigvalsh(M)[-1]) * (1.0 + 1e-12)
    else:
        v = np.random.default_rng(0).standard_normal(q.size) * pos
        v /= np.linalg.norm(v)
        c = 0.0
        for _ in range(300):
            w = s * (loss.curvature * np.asarray(loss.A.T @ (loss.A @ (s * v))).ravel())
            c = float(np.linalg.norm(w))
            if c == 0.0:
                break
            v = w / c
        c *= 1.01  # power iteration approaches from below
    c = max(c, 1.0)
    return np.where(pos, c * q, 1.0)


def run_sync_reference(problem: CompositeProblem, config: SyncConfig = SyncConfig(), x0=None):
    """
    Synchronous reference solve; stops after ``patience`` consecutive sweeps
    with ``|F_{t+1} - F_t| <= rtol * max(1, |F_t|)``.
    """
    loss, reg = problem.loss, problem.reg
    n = problem.n
    q = loss.curvature * loss.gram_diag
    if config.tau is None:
        d = _diagonal_majorizer(problem)
    else:
        d = q + config.tau
        if np.any(d <= 0):
            d = d + 1e-12 * max(1.0, float(q.max()))
    thr = reg.lam * reg.threshold_weight / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    gram = loss.gram
    dense = gram is not None
    A = loss.A
    F = objective(problem, x)
    hist = [F]
    quiet = 0
    converged = False
    best_x, best_F = x.copy(), F
    stol = config.stationarity_tol
    if stol is not None:
        g0 = loss.curvature * float(np.max(np.abs(loss.atb), initial=0.0))
        stol = max(stol, 1e3 * np.finfo(np.float64).eps * g0)
    t = 0
    for t in range(1, config.max_sweeps + 1):
        if dense:
            g = loss.curvature * (gram @ x - loss.atb)
        else:
            g = loss.curvature * np.asarray(A.T @ (A @ x - loss.b)).ravel()
        if reg.family is not Family.L1:
            g = g - reg.lam * K.hminus_gradient(reg, x)
        v = x - g / d
        xhat = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
        x = x + config.gamma * (xhat - x)
        Fn = objective(problem, x)
        if Fn < best_F:
            best_x, best_F = x.copy(), Fn
        if t % config.record_every == 0:
            hist.append(Fn)
        if abs(Fn - F) <= config.rtol * max(1.0, abs(F)):
            quiet += 1
            if quiet >= config.patience and (
                    stol is None
                    or np.max(np.abs(K.prox_gradient_residual(problem, x)), initial=0.0)
                    <= stol):
                converged = True
                F = Fn
                break
        else:
            quiet = 0
        F = Fn
    if converged:
        # the final iterate passed the stationarity test; keep it
        best_x, best_F = x, min(best_F, F)
    else:
        log.warning("sync reference hit the sweep budget (%d sweeps)", config.max_sweeps)
    return SyncResult(best_x, best_F, converged, t, np.array(hist),
                      problem.with_fstar(best_F, fstar_source="sync-reference",
                                         fstar_converged=converged))
