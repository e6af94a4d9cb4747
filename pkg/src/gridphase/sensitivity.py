"""Magnitude sensitivity blocks dp/dv and dq/dv from data or from a noisy model.

The regression fits ``dp = (dp/dv) dv`` and ``dq = (dq/dv) dv`` row by row
over a window of perturbation samples. It is unbiased only when the angle
perturbations in the window are negligible, which is how
:func:`synthetic_window` generates data.

Randomness goes through :func:`numpy.random.default_rng` (PCG64) with an
explicit seed everywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "PerturbationSample",
    "RankDeficientWindowError",
    "SensitivityEstimate",
    "estimate_from_window",
    "model_plus_noise",
    "read_window_csv",
    "synthetic_window",
    "write_window_csv",
]

METHODS = ("regression", "model_plus_noise")


class RankDeficientWindowError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class PerturbationSample:
    dv: np.ndarray
    dp: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(getattr(self, k), dtype=float)) for k in ("dv", "dp", "dq")]
        if not (arrs[0].shape == arrs[1].shape == arrs[2].shape) or arrs[0].ndim != 1:
            raise ValueError("dv, dp and dq must be vectors of equal length")
        for k, a in zip(("dv", "dp", "dq"), arrs):
            object.__setattr__(self, k, a)

    @property
    def n(self):
        return self.dv.size


@dataclass(frozen=True)
class SensitivityEstimate:
    dp_dv: np.ndarray
    dq_dv: np.ndarray
    window_size: int
    residual_norm: float
    method_tag: str

    def __post_init__(self):
        if self.method_tag not in METHODS:
            raise ValueError(f"method_tag must be one of {METHODS}")

    def to_csv(self, directory, bus_ids=None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        n = self.dp_dv.shape[0]
        labels = list(bus_ids) if bus_ids is not None else list(range(n))
        out = []
        for name in ("dp_dv", "dq_dv"):
            path = directory / f"{name}_estimate.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bus", *labels])
                for lab, row in zip(labels, getattr(self, name)):
                    w.writerow([lab, *(repr(float(x)) for x in row)])
            out.append(path)
        return out


def estimate_from_window(samples, ridge=0.0) -> SensitivityEstimate:
    """Least-squares fit of both magnitude blocks over a sample window.

    With ``ridge > 0`` the normal equations get ``ridge * I`` added, which
    also allows windows shorter than the bus count.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample window")
    n = samples[0].n
    if any(s.n != n for s in samples):
        raise ValueError("samples have inconsistent dimensions")
    X = np.array([s.dv for s in samples])
    Yp = np.array([s.dp for s in samples])
    Yq = np.array([s.dq for s in samples])
    T = len(samples)
    Y = np.hstack([Yp, Yq])
    if ridge == 0:
        rank = np.linalg.matrix_rank(X)
        if rank < n:
            raise RankDeficientWindowError(
                f"window of {T} samples has rank {rank} < {n}; "
                "use a larger window or ridge > 0")
        coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    else:
        coef = np.linalg.solve(X.T @ X + ridge * np.eye(n), X.T @ Y)
    resid = Y - X @ coef
    return SensitivityEstimate(
        dp_dv=coef[:, :n].T.copy(),
        dq_dv=coef[:, n:].T.copy(),
        window_size=T,
        residual_norm=float(np.linalg.norm(resid)),
        method_tag="regression",
    )


def model_plus_noise(blocks, sigma_jac, seed=None) -> SensitivityEstimate:
    """Model magnitude blocks plus i.i.d. Normal(0, sigma_jac^2) entries."""
    if sigma_jac < 0:
        raise ValueError("sigma_jac must be non-negative")
    dp_dv = np.array(blocks.dp_dv, dtype=float)
    dq_dv = np.array(blocks.dq_dv, dtype=float)
    if sigma_jac > 0:
        rng = np.random.default_rng(seed)
        dp_dv = dp_dv + rng.normal(0.0, sigma_jac, dp_dv.shape)
        dq_dv = dq_dv + rng.normal(0.0, sigma_jac, dq_dv.shape)
    return SensitivityEstimate(dp_dv, dq_dv, 0, 0.0, "model_plus_noise")


def synthetic_window(blocks, n_samples, *, scale=1e-3, noise=0.0, seed=None):
    """Magnitude-only perturbation samples around an operating point.

    Each sample draws ``dv ~ Normal(0, scale^2)`` with angles held, maps it
    through the magnitude blocks and adds ``Normal(0, noise^2)`` to the
    injection perturbations.
    """
    rng = np.random.default_rng(seed)
    n = blocks.dp_dv.shape[0]
    out = []
    for _ in range(n_samples):
        dv = rng.normal(0.0, scale, n)
        dp = blocks.dp_dv @ dv + rng.normal(0.0, noise, n)
        dq = blocks.dq_dv @ dv + rng.normal(0.0, noise, n)
        out.append(PerturbationSample(dv, dp, dq))
    return out


def write_window_csv(samples, path, bus_ids=None):
    """Long-format CSV with columns ``t, bus, dv, dp, dq``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", "dv", "dp", "dq"])
        for t, s in enumerate(samples):
            ids = bus_ids if bus_ids is not None else range(s.n)
            for b, dv, dp, dq in zip(ids, s.dv, s.dp, s.dq):
                w.writerow([t, b, repr(float(dv)), repr(float(dp)), repr(float(dq))])


def read_window_csv(path):
    """Inverse of :func:`write_window_csv`; returns ``(samples, bus_ids)``.

    Buses are ordered by first appearance; every time step must list the
    same buses.
    """
    rows = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"t", "bus", "dv", "dp", "dq"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"window CSV lacks columns {sorted(missing)}")
        for rec in reader:
            t = int(rec["t"])
            bus = int(rec["bus"])
            if bus not in order:
                order.append(bus)
            rows.setdefault(t, {})[bus] = (float(rec["dv"]), float(rec["dp"]), float(rec["dq"]))
    samples = []
    for t in sorted(rows):
        step = rows[t]
        if set(step) != set(order):
            raise ValueError(f"time step {t} does not cover every bus")
        arr = np.array([step[b] for b in order])
        samples.append(PerturbationSample(arr[:, 0], arr[:, 1], arr[:, 2]))
    return samples, order
