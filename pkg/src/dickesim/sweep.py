"""Annealing-velocity sweeps, onset detection, and power-law fits.

The dynamical-onset point lambda_d of a trajectory is located either as the
post-peak zero crossing of a squeezing measure ("sudden death") or as the
first upward crossing of an order-parameter threshold, both linearly
interpolated between samples.  Across velocities the onsets follow
(lambda_d - lambda_c) ~ upsilon^(2/3) at sufficiently high velocity, which
run_sweep fits per size and criterion.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .model import ModelParams, initial_state, spectral_gap
from .propagation import (IntegratorConfig, RampSchedule, Trajectory,
                          check_truncation_convergence, propagate_lindblad,
                          propagate_unitary)

OP_CRITERIA = ("qubit_op_threshold", "field_op_threshold")
DEATH_CRITERIA = ("qubit_squeezing_death", "field_squeezing_death")
ALL_CRITERIA = OP_CRITERIA + DEATH_CRITERIA

# Column order of the sweep CSV (versioned; do not reorder).
SWEEP_COLUMNS = ("N", "log2_upsilon", "kappa", "criterion", "lambda_d", "censored",
                 "peak_spin_sq", "peak_field_sq", "max_qubit_op", "max_field_op")

SQUEEZING_FLOOR = 1e-4   # below this peak value there is no squeezing event
MIN_PEAK_SAMPLES = 5     # samples above half-max needed to call a peak resolved


@dataclass(frozen=True)
class OnsetEvent:
    """Dynamical-onset instant detected on one trajectory."""

    criterion: str
    lambda_d: float
    interpolated: bool = True
    status: str = "ok"  # "ok" | "censored" | "no_event"

    @property
    def found(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class PowerLawFit:
    """Least-squares fit of log(lambda_d - lambda_c) = exponent*log(upsilon) + log_prefactor."""

    exponent: float
    log_prefactor: float
    r_squared: float
    points_used: int
    upsilon_range: tuple[float, float]


@dataclass(frozen=True)
class SweepConfig:
    """Grid and detection settings for one annealing-velocity sweep."""

    n_list: tuple[int, ...]
    log2_upsilon_list: tuple[float, ...]
    kappa: float = 0.0
    nbar: float = 0.0
    fock_cutoff: int = 48
    onset_criteria: tuple[str, ...] = OP_CRITERIA
    qubit_op_thresh: float = 0.1
    field_op_thresh: float = 0.0123
    lambda_start: float = 0.0
    lambda_end: float = 2.0
    sample_count: int = 401
    epsilon: float = 1.0
    omega: float = 1.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    method: str = "adaptive_rk"
    early_stop_margin: float | None = None  # stop once all OPs pass margin*threshold
    check_truncation: bool = False
    fit_log2_min: float = 0.0  # velocities below this are reported, not fitted
    workers: int = 1

    def __post_init__(self):
        if self.qubit_op_thresh <= 0 or self.field_op_thresh <= 0:
            raise ValueError("thresholds must be positive")
        for c in self.onset_criteria:
            if c not in ALL_CRITERIA:
                raise ValueError(f"unknown onset criterion {c!r}")
        if self.early_stop_margin is not None:
            if self.early_stop_margin <= 1.0:
                raise ValueError("early_stop_margin must exceed 1")
            if any(c in DEATH_CRITERIA for c in self.onset_criteria):
                raise ValueError("early stopping is only safe with OP-threshold criteria")

    def params_for(self, n_qubits: int) -> ModelParams:
        return ModelParams(n_qubits=n_qubits, fock_cutoff=self.fock_cutoff,
                           epsilon=self.epsilon, omega=self.omega,
                           kappa=self.kappa, nbar=self.nbar)

    @property
    def lambda_c(self) -> float:
        return math.sqrt(self.epsilon * self.omega) / 2.0


@dataclass(frozen=True)
class SweepRow:
    n_qubits: int
    log2_upsilon: float
    kappa: float
    criterion: str
    lambda_d: float  # nan when censored / absent / failed
    censored: bool
    peak_spin_sq: float
    peak_field_sq: float
    max_qubit_op: float
    max_field_op: float
    status: str = "ok"  # "ok" | "censored" | "no_event" | "error: ..."


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[SweepRow]
    fits: dict[tuple[int, str], PowerLawFit] = field(default_factory=dict)


def _interp_crossing(x0, x1, y0, y1, target):
    return x0 + (target - y0) * (x1 - x0) / (y1 - y0)


def detect_squeezing_death(traj: Trajectory, subsystem: str) -> OnsetEvent:
    """First post-peak zero crossing of 1 - xi^2 for the chosen subsystem
    ("qubits" or "field"), linearly interpolated."""
    if subsystem not in ("qubits", "field"):
        raise ValueError("subsystem must be 'qubits' or 'field'")
    name = "spin_sq" if subsystem == "qubits" else "field_sq"
    criterion = ("qubit_squeezing_death" if subsystem == "qubits"
                 else "field_squeezing_death")
    vals = traj.values(name)
    lams = traj.lambdas()
    peak = int(np.argmax(vals))
    if vals[peak] < SQUEEZING_FLOOR:
        return OnsetEvent(criterion, math.nan, False, "no_event")
    if int(np.sum(vals > 0.5 * vals[peak])) < MIN_PEAK_SAMPLES:
        raise ValueError(f"{name} peak resolved by fewer than {MIN_PEAK_SAMPLES} "
                         "samples; increase sample_count")
    for i in range(peak + 1, len(vals)):
        if vals[i] <= 0.0 < vals[i - 1]:
            lam_d = _interp_crossing(lams[i - 1], lams[i], vals[i - 1], vals[i], 0.0)
            return OnsetEvent(criterion, float(lam_d), True, "ok")
    return OnsetEvent(criterion, math.nan, False, "censored")


def detect_op_threshold(traj: Trajectory, subsystem: str, threshold: float) -> OnsetEvent:
    """First upward crossing of the scaled order parameter through threshold."""
    if subsystem not in ("qubits", "field"):
        raise ValueError("subsystem must be 'qubits' or 'field'")
    name = "qubit_op" if subsystem == "qubits" else "field_op"
    criterion = ("qubit_op_threshold" if subsystem == "qubits"
                 else "field_op_threshold")
    vals = traj.values(name)
    lams = traj.lambdas()
    if vals[0] >= threshold:
        # already above threshold at the start: no meaningful onset
        return OnsetEvent(criterion, math.nan, False, "no_event")
    for i in range(1, len(vals)):
        if vals[i - 1] < threshold <= vals[i]:
            lam_d = _interp_crossing(lams[i - 1], lams[i], vals[i - 1], vals[i],
                                     threshold)
            return OnsetEvent(criterion, float(lam_d), True, "ok")
    return OnsetEvent(criterion, math.nan, False, "censored")


def fit_power_law(events: list[tuple[float, float]], lambda_c: float) -> PowerLawFit:
    """Fit log(lambda_d - lambda_c) = exponent*log(upsilon) + log_prefactor.

    Points with lambda_d <= lambda_c (the low-velocity regime outside the
    law) are dropped with a warning; at least 3 must survive.
    """
    kept = [(u, l) for (u, l) in events if l > lambda_c]
    dropped = len(events) - len(kept)
    if dropped:
        warnings.warn(f"excluded {dropped} point(s) with lambda_d <= lambda_c "
                      "from the power-law fit", stacklevel=2)
    if len(kept) < 3:
        raise ValueError(f"power-law fit needs at least 3 usable points, got {len(kept)}")
    ups = np.array([u for u, _ in kept], dtype=float)
    lams = np.array([l for _, l in kept], dtype=float)
    slope, intercept, r2 = loglog_fit(ups, lams - lambda_c)
    return PowerLawFit(slope, intercept, r2, len(kept),
                       (float(ups.min()), float(ups.max())))


def loglog_fit(xvals, yvals) -> tuple[float, float, float]:
    """(slope, intercept, r^2) of the least-squares line through
    (log x, log y)."""
    x = np.log(np.asarray(xvals, dtype=float))
    y = np.log(np.asarray(yvals, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _make_stop_event(config: SweepConfig, params: ModelParams, pure: bool):
    """Terminal solver event: fires once every requested OP has passed
    margin * threshold, guaranteeing the crossings are bracketed by samples."""
    margin = config.early_stop_margin
    space = params.space()
    jz_diag = np.repeat(np.arange(space.spin_dim) - space.j, space.fock_dim)
    n_diag = np.tile(np.arange(space.fock_dim, dtype=float), space.spin_dim)
    if pure:
        jz_diag = jz_diag[space.sector_indices]
        n_diag = n_diag[space.sector_indices]
    dim = space.dim
    need_q = "qubit_op_threshold" in config.onset_criteria
    need_f = "field_op_threshold" in config.onset_criteria

    def event(t, y):
        if pure:
            pops = np.abs(y) ** 2
        else:
            pops = y[:: dim + 1].real
        gaps = []
        if need_q:
            qop = float(np.dot(jz_diag, pops)) / params.n_qubits + 0.5
            gaps.append(qop - margin * config.qubit_op_thresh)
        if need_f:
            fop = float(np.dot(n_diag, pops)) / params.n_qubits
            gaps.append(fop - margin * config.field_op_thresh)
        return min(gaps)

    return event


def _run_trajectory(config: SweepConfig, n_qubits: int, log2_upsilon: float) -> Trajectory:
    params = config.params_for(n_qubits)
    schedule = RampSchedule(upsilon=2.0 ** log2_upsilon,
                            lambda_start=config.lambda_start,
                            lambda_end=config.lambda_end,
                            sample_count=config.sample_count)
    integ = IntegratorConfig(rel_tol=config.rel_tol, abs_tol=config.abs_tol,
                             method=config.method)
    pure = config.kappa == 0 and config.nbar == 0
    stop = (_make_stop_event(config, params, pure)
            if config.early_stop_margin is not None else None)
    if pure:
        init = initial_state(params.space(), params)
        return propagate_unitary(init, params, schedule, integ, stop_when=stop)
    init = initial_state(params.space(), params)
    if init.is_pure:
        init = init.to_density()
    return propagate_lindblad(init, params, schedule, integ, stop_when=stop)


def _detect(config: SweepConfig, traj: Trajectory, criterion: str) -> OnsetEvent:
    if criterion == "qubit_op_threshold":
        return detect_op_threshold(traj, "qubits", config.qubit_op_thresh)
    if criterion == "field_op_threshold":
        return detect_op_threshold(traj, "field", config.field_op_thresh)
    if criterion == "qubit_squeezing_death":
        return detect_squeezing_death(traj, "qubits")
    return detect_squeezing_death(traj, "field")


def _sweep_point(config: SweepConfig, n_qubits: int, log2_upsilon: float) -> list[SweepRow]:
    """One (N, upsilon) grid point: propagate once, detect every criterion."""
    common = dict(n_qubits=n_qubits, log2_upsilon=log2_upsilon, kappa=config.kappa)
    try:
        traj = _run_trajectory(config, n_qubits, log2_upsilon)
    except Exception as exc:  # per-point failures never abort the sweep
        return [SweepRow(**common, criterion=c, lambda_d=math.nan, censored=True,
                         peak_spin_sq=math.nan, peak_field_sq=math.nan,
                         max_qubit_op=math.nan, max_field_op=math.nan,
                         status=f"error: {exc}")
                for c in config.onset_criteria]
    peaks = dict(
        peak_spin_sq=float(traj.values("spin_sq").max()),
        peak_field_sq=float(traj.values("field_sq").max()),
        max_qubit_op=float(traj.values("qubit_op").max()),
        max_field_op=float(traj.values("field_op").max()),
    )
    rows = []
    for criterion in config.onset_criteria:
        try:
            ev = _detect(config, traj, criterion)
            rows.append(SweepRow(**common, criterion=criterion, lambda_d=ev.lambda_d,
                                 censored=ev.status == "censored", **peaks,
                                 status=ev.status))
        except Exception as exc:
            rows.append(SweepRow(**common, criterion=criterion, lambda_d=math.nan,
                                 censored=True, **peaks, status=f"error: {exc}"))
    return rows


def run_sweep(config: SweepConfig) -> SweepResult:
    """Run the (N, upsilon) grid, detect onsets, and fit per-(N, criterion)
    power laws over the high-velocity window.

    Points are independent tasks; with workers > 1 they run in separate
    processes.  Rows are sorted canonically so output is identical for any
    worker count.
    """
    tasks = [(n, log2v) for n in config.n_list for log2v in config.log2_upsilon_list]
    if config.check_truncation and tasks:
        slowest = min(config.log2_upsilon_list)
        for n in config.n_list:
            schedule = RampSchedule(upsilon=2.0 ** slowest,
                                    lambda_start=config.lambda_start,
                                    lambda_end=config.lambda_end,
                                    sample_count=config.sample_count)
            report = check_truncation_convergence(config.params_for(n), schedule)
            if not report.converged:
                raise ValueError(
                    f"fock_cutoff={config.fock_cutoff} fails the truncation check "
                    f"for N={n} (tail {report.tail_weight:.2e}, photon shift "
                    f"{report.max_photon_diff:.2e}); try n_max >= {report.recommended_n_max}")

    rows: list[SweepRow] = []
    if config.workers > 1 and len(tasks) > 1:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=ctx) as pool:
            for chunk in pool.map(_sweep_point_star,
                                  [(config, n, lv) for n, lv in tasks]):
                rows.extend(chunk)
    else:
        for n, lv in tasks:
            rows.extend(_sweep_point(config, n, lv))
    rows.sort(key=lambda r: (r.n_qubits, r.log2_upsilon, r.criterion))

    fits: dict[tuple[int, str], PowerLawFit] = {}
    for n in config.n_list:
        for criterion in config.onset_criteria:
            pts = [(2.0 ** r.log2_upsilon, r.lambda_d) for r in rows
                   if r.n_qubits == n and r.criterion == criterion
                   and r.status == "ok" and r.log2_upsilon >= config.fit_log2_min
                   and not math.isnan(r.lambda_d)]
            if len(pts) >= 3:
                try:
                    fits[(n, criterion)] = fit_power_law(pts, config.lambda_c)
                except ValueError:
                    pass
    return SweepResult(config, rows, fits)


def _sweep_point_star(args):
    return _sweep_point(*args)


def gap_scaling_check(n_qubits: int, lambda_values, fock_cutoff: int,
                      epsilon: float = 1.0, omega: float = 1.0,
                      dim_limit: int = 4000) -> PowerLawFit:
    """Fit log(gap) vs log(lambda - lambda_c) from even-sector exact
    diagonalization; the thermodynamic exponent is 1/2 in the ordered phase."""
    params = ModelParams(n_qubits=n_qubits, fock_cutoff=fock_cutoff,
                         epsilon=epsilon, omega=omega)
    lambda_c = params.lambda_c
    lams = np.asarray(list(lambda_values), dtype=float)
    if np.any(lams <= lambda_c):
        raise ValueError("gap scaling needs couplings above lambda_c")
    space = params.space()
    gaps = np.array([spectral_gap(space, params, lam, dim_limit) for lam in lams])
    slope, intercept, r2 = loglog_fit(lams - lambda_c, gaps)
    return PowerLawFit(slope, intercept, r2, len(lams),
                       (float(lams.min() - lambda_c), float(lams.max() - lambda_c)))
