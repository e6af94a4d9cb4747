"""Angle recovery from magnitude-only measurements.

Given a snapshot ``(v, p, q)`` over a set of buses, the magnitude blocks
``dp/dv``, ``dq/dv`` and observed perturbations ``dp, dq, dv``, the angle
blocks follow from :func:`gridphase.jacobian.phaseless_blocks` and the angle
perturbation solves the stacked problem::

    min_dtheta || [dp - dp/dv dv; dq - dq/dv dv] - [dp/dtheta; dq/dtheta] dtheta ||^2
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .jacobian import phaseless_blocks
from .state import wrap_angle

__all__ = [
    "CurrentPhasors",
    "IllConditionedBlockError",
    "MeasurementSnapshot",
    "RetrievalResult",
    "integrate_angles",
    "recover_currents",
    "retrieve_direct_p",
    "retrieve_direct_q",
    "retrieve_ls",
    "write_angles_csv",
]

PINV_RTOL = 1e-10
COND_LIMIT = 1e12


class IllConditionedBlockError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MeasurementSnapshot:
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    timestamp: float | None = None

    def __post_init__(self):
        v, p, q = (np.atleast_1d(np.asarray(getattr(self, k), dtype=float)) for k in "vpq")
        if not (v.shape == p.shape == q.shape) or v.ndim != 1:
            raise ValueError("v, p and q must be vectors of equal length")
        if not np.all(v > 0):
            raise ValueError("voltage magnitudes must be strictly positive")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def n(self):
        return self.v.size

    @property
    def s(self):
        return self.p + 1j * self.q


@dataclass
class RetrievalResult:
    delta_theta: np.ndarray
    dp_dtheta: np.ndarray
    dq_dtheta: np.ndarray
    residual: float
    method_tag: str = "least_squares"
    rank_deficient: bool = False
    rank: int | None = None

    def to_dict(self):
        return {
            "method": self.method_tag,
            "delta_theta": self.delta_theta.tolist(),
            "residual": self.residual,
            "rank_deficient": self.rank_deficient,
            "rank": self.rank,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _vec(x, n, name):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {x.shape}")
    return x


def _mat(M, n, name):
    M = np.asarray(M, dtype=float)
    if M.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {M.shape}")
    return M


def retrieve_ls(snapshot, dp_dv, dq_dv, dp_obs, dq_obs, dv_obs) -> RetrievalResult:
    """Least-squares angle perturbation with the angle blocks built from data.

    A numerically rank-deficient stacked matrix (singular values below
    ``1e-10`` times the largest) falls back to the minimum-norm solution
    and sets ``rank_deficient``.
    """
    n = snapshot.n
    dp_dv = _mat(dp_dv, n, "dp_dv")
    dq_dv = _mat(dq_dv, n, "dq_dv")
    dp_obs = _vec(dp_obs, n, "dp_obs")
    dq_obs = _vec(dq_obs, n, "dq_obs")
    dv_obs = _vec(dv_obs, n, "dv_obs")
    dp_dth, dq_dth = phaseless_blocks(snapshot.v, snapshot.p, snapshot.q, dp_dv, dq_dv)
    A = np.vstack([dp_dth, dq_dth])
    b = np.concatenate([dp_obs - dp_dv @ dv_obs, dq_obs - dq_dv @ dv_obs])
    if n == 0:
        return RetrievalResult(np.zeros(0), dp_dth, dq_dth, 0.0, rank=0)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > PINV_RTOL * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    rank = int(keep.sum())
    x = Vt[keep].T @ ((U[:, keep].T @ b) / s[keep])
    r = b - A @ x
    return RetrievalResult(
        delta_theta=wrap_angle(x),
        dp_dtheta=dp_dth,
        dq_dtheta=dq_dth,
        residual=float(r @ r),
        method_tag="least_squares",
        rank_deficient=rank < n,
        rank=rank,
    )


def _direct(block, obs, dv_obs, mag_block, label, cond_limit):
    block = np.asarray(block, dtype=float)
    n = block.shape[0]
    block = _mat(block, n, f"d{label}_dtheta")
    mag_block = _mat(mag_block, n, f"d{label}_dv")
    rhs = _vec(obs, n, f"d{label}_obs") - mag_block @ _vec(dv_obs, n, "dv_obs")
    cond = np.linalg.cond(block) if n else 1.0
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditionedBlockError(
            f"d{label}/dtheta has condition number {cond:.3g}; "
            "check the recovery certificate before using direct recovery")
    return wrap_angle(np.linalg.solve(block, rhs))


def retrieve_direct_p(dp_dtheta, dp_obs, dv_obs, dp_dv, *, cond_limit=COND_LIMIT):
    """``dtheta = (dp/dtheta)^-1 (dp - dp/dv dv)``."""
    return _direct(dp_dtheta, dp_obs, dv_obs, dp_dv, "p", cond_limit)


def retrieve_direct_q(dq_dtheta, dq_obs, dv_obs, dq_dv, *, cond_limit=COND_LIMIT):
    """``dtheta = (dq/dtheta)^-1 (dq - dq/dv dv)``."""
    return _direct(dq_dtheta, dq_obs, dv_obs, dq_dv, "q", cond_limit)


@dataclass(frozen=True)
class CurrentPhasors:
    ell: np.ndarray

    @property
    def magnitude(self):
        return np.abs(self.ell)

    @property
    def angle(self):
        return np.angle(self.ell)


def recover_currents(snapshot, theta_hat) -> CurrentPhasors:
    """Current injections ``conj(s / vbar)`` with ``vbar = v exp(j theta_hat)``."""
    theta_hat = _vec(theta_hat, snapshot.n, "theta_hat")
    vbar = snapshot.v * np.exp(1j * theta_hat)
    return CurrentPhasors(np.conj(snapshot.s / vbar))


def integrate_angles(delta_theta_series, theta_ref):
    """Absolute angle trajectory from per-step increments.

    Row 0 is ``theta_ref``; row ``t`` adds the first ``t`` increments.
    Every row is wrapped into (-pi, pi].
    """
    theta_ref = np.atleast_1d(np.asarray(theta_ref, dtype=float))
    d = np.asarray(delta_theta_series, dtype=float).reshape(-1, theta_ref.size)
    out = np.vstack([np.zeros_like(theta_ref), np.cumsum(d, axis=0)]) + theta_ref
    return wrap_angle(out)


def write_angles_csv(path, bus_ids, theta_hat, theta_true=None):
    """CSV with columns ``bus, theta_true, theta_hat, abs_error``.

    ``theta_true`` may be omitted, leaving the last two columns empty.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "theta_true", "theta_hat", "abs_error"])
        for i, b in enumerate(bus_ids):
            if theta_true is None:
                w.writerow([b, "", repr(float(theta_hat[i])), ""])
            else:
                t = float(theta_true[i])
                err = abs(float(wrap_angle(theta_hat[i] - t)))
                w.writerow([b, repr(t), repr(float(theta_hat[i])), repr(err)])
