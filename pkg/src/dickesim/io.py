"""File emission: trajectory/sweep CSVs, state snapshots, Wigner grids,
fit reports, and run manifests.

All numeric output is written with 17 significant digits so downstream fits
are never quantization-limited, and data files carry no timestamps, so a
repeated run with the same configuration is byte-identical.  Writers go
through a temp file + rename, and remove partial output on failure.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict

import numpy as np

from .model import QuantumState, HilbertSpace
from .observables import OBSERVABLE_COLUMNS
from .propagation import Trajectory
from .quasiprob import WignerField, SphereGrid
from .sweep import SWEEP_COLUMNS, PowerLawFit, SweepResult


def fmt(x) -> str:
    """Full-precision text form of one number."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _atomic_write(path, write_body) -> None:
    scratch = os.environ.get("DICKESIM_SCRATCH")
    if scratch:
        tmp = os.path.join(scratch, os.path.basename(str(path)) + ".tmp")
    else:
        tmp = f"{path}.tmp"
    try:
        with open(tmp, "w") as fh:
            write_body(fh)
        shutil.move(tmp, path)
    except BaseException:
        for p in (tmp, path):
            try:
                os.remove(p)
            except (FileNotFoundError, IsADirectoryError):
                pass
        raise


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One line per sample with the fixed 10-column observable schema."""

    def body(fh):
        fh.write(",".join(OBSERVABLE_COLUMNS) + "\n")
        for rec in traj.records:
            fh.write(",".join(fmt(v) for v in rec.as_row()) + "\n")

    _atomic_write(path, body)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trajectory CSV keyed by header name."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    data = np.array(rows) if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def write_state_snapshot(state: QuantumState, path) -> None:
    """Textual state format: 'kind spin_dim fock_dim t lambda' header, then
    one 're,im' line per amplitude (density matrices row-major)."""
    st = state.to_full_space() if state.space.is_restricted else state

    def body(fh):
        fh.write(f"{st.kind} {st.space.spin_dim} {st.space.fock_dim} "
                 f"{fmt(st.time)} {fmt(st.lam)}\n")
        for v in np.ravel(st.data):
            fh.write(f"{fmt(v.real)},{fmt(v.imag)}\n")

    _atomic_write(path, body)


def read_state_snapshot(path) -> QuantumState:
    with open(path) as fh:
        kind, spin_dim, fock_dim, t, lam = fh.readline().split()
        spin_dim, fock_dim = int(spin_dim), int(fock_dim)
        vals = np.array([complex(float(a), float(b))
                         for a, b in (line.split(",") for line in fh if line.strip())])
    space = HilbertSpace(spin_dim - 1, fock_dim)
    data = vals if kind == "pure" else vals.reshape(space.dim, space.dim)
    return QuantumState(kind, space, data, time=float(t), lam=float(lam))


def write_sweep_csv(result: SweepResult, path) -> None:
    def body(fh):
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in result.rows:
            fh.write(",".join([
                str(r.n_qubits), fmt(r.log2_upsilon), fmt(r.kappa), r.criterion,
                fmt(r.lambda_d), str(int(r.censored)), fmt(r.peak_spin_sq),
                fmt(r.peak_field_sq), fmt(r.max_qubit_op), fmt(r.max_field_op),
            ]) + "\n")

    _atomic_write(path, body)


def read_sweep_csv(path) -> list[dict]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            row = dict(zip(header, parts))
            for k in ("log2_upsilon", "kappa", "lambda_d", "peak_spin_sq",
                      "peak_field_sq", "max_qubit_op", "max_field_op"):
                row[k] = float(row[k])
            row["N"] = int(row["N"])
            row["censored"] = bool(int(row["censored"]))
            rows.append(row)
    return rows


def fit_to_dict(fit: PowerLawFit) -> dict:
    d = asdict(fit)
    d["upsilon_range"] = list(d["upsilon_range"])
    return d


def write_fit_json(fits: dict, path) -> None:
    """Fit report: {"<N>/<criterion>": {exponent, log_prefactor, ...}}."""
    payload = {f"{n}/{criterion}": fit_to_dict(fit)
               for (n, criterion), fit in sorted(fits.items(), key=lambda kv: str(kv[0]))}
    _atomic_write(path, lambda fh: fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n"))


def write_wigner_csv(wf: WignerField, path) -> None:
    """Long format: one 'x,p,W' line per grid point (row count n_x * n_p)."""

    def body(fh):
        fh.write("x,p,W\n")
        xs, ps = wf.grid.xs, wf.grid.ps
        for i, x in enumerate(xs):
            for j, p in enumerate(ps):
                fh.write(f"{fmt(x)},{fmt(p)},{fmt(wf.values[i, j])}\n")

    _atomic_write(path, body)


def write_wigner_matrix(wf: WignerField, path) -> None:
    """Dense matrix format: a JSON header line with grid metadata, then one
    whitespace-separated row of W per x value."""
    meta = {"x_min": wf.grid.x_min, "x_max": wf.grid.x_max,
            "p_min": wf.grid.p_min, "p_max": wf.grid.p_max,
            "n_x": wf.grid.n_x, "n_p": wf.grid.n_p, "mode": wf.mode}

    def body(fh):
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for row in wf.values:
            fh.write(" ".join(fmt(v) for v in row) + "\n")

    _atomic_write(path, body)


def write_awf_csv(values: np.ndarray, grid: SphereGrid, path) -> None:
    """Long format: one 'theta,phi,W' line per sphere grid point."""

    def body(fh):
        fh.write("theta,phi,W\n")
        for i, th in enumerate(grid.thetas):
            for j, ph in enumerate(grid.phis):
                fh.write(f"{fmt(th)},{fmt(ph)},{fmt(values[i, j])}\n")

    _atomic_write(path, body)


def write_manifest(path, config_dict: dict, version: str, wall_time_s: float,
                   tolerances: dict | None = None, truncation: dict | None = None) -> None:
    """Reproducibility sidecar for one emitted output (timestamp-free except
    wall time, which is excluded from byte-identity guarantees)."""
    payload = {
        "config": config_dict,
        "version": version,
        "wall_time_s": wall_time_s,
        "tolerances_achieved": tolerances or {},
        "truncation": truncation,
    }
    _atomic_write(path, lambda fh: fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n"))
