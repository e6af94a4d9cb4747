"""Power flow Jacobian blocks.

Three independent routes produce the four ``n x n`` blocks

* :func:`classical_blocks` -- trigonometric sums over ``G`` and ``B``,
* :func:`closed_form_blocks` -- complex matrix expressions for ``ds/dv``
  and ``ds/dtheta``,
* :func:`phaseless_blocks` -- the angle blocks rebuilt from the magnitude
  blocks, the voltage magnitudes and the injections only. No admittance
  matrix and no angle enters this route.

The identity behind the last one is, in matrix form::

    dp/dtheta = dq/dv diag(v) - 2 diag(q)
    dq/dtheta = -dp/dv diag(v) + 2 diag(p)

i.e. off the diagonal ``dp_i/dtheta_k = v_k dq_i/dv_k``; the magnitude of
the *column* bus scales each entry.

It holds entrywise, so it also holds on any principal submatrix as long as
``p`` and ``q`` are the full-network injections of the kept buses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .state import StateVector

__all__ = [
    "ComplexSensitivities",
    "JacobianBlocks",
    "classical_blocks",
    "closed_form_blocks",
    "diagonal_shortcuts",
    "phaseless_blocks",
    "relative_frobenius",
]

BLOCK_NAMES = ("dp_dtheta", "dp_dv", "dq_dtheta", "dq_dv")


def relative_frobenius(estimate, reference):
    """``||estimate - reference||_F / ||reference||_F``."""
    ref = np.linalg.norm(reference)
    return np.linalg.norm(np.asarray(estimate) - reference) / (ref if ref > 0 else 1.0)


@dataclass(frozen=True)
class JacobianBlocks:
    dp_dtheta: np.ndarray
    dp_dv: np.ndarray
    dq_dtheta: np.ndarray
    dq_dv: np.ndarray
    index_set: np.ndarray

    def __post_init__(self):
        n = len(self.index_set)
        for name in BLOCK_NAMES:
            if np.shape(getattr(self, name)) != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")

    @property
    def n(self):
        return len(self.index_set)

    def full(self):
        """The ``2n x 2n`` Jacobian ``[[dp/dtheta, dp/dv], [dq/dtheta, dq/dv]]``."""
        return np.block([[self.dp_dtheta, self.dp_dv], [self.dq_dtheta, self.dq_dv]])

    def subset(self, positions):
        """Principal submatrices at ``positions`` (indices into ``index_set``)."""
        ix = np.ix_(positions, positions)
        return JacobianBlocks(
            self.dp_dtheta[ix], self.dp_dv[ix], self.dq_dtheta[ix], self.dq_dv[ix],
            np.asarray(self.index_set)[positions],
        )

    def to_csv(self, directory, bus_ids=None):
        """Write one CSV per block; header row and first column carry bus ids."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        labels = list(bus_ids if bus_ids is not None else self.index_set)
        paths = []
        for name in BLOCK_NAMES:
            path = directory / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bus", *labels])
                for lab, row in zip(labels, getattr(self, name)):
                    w.writerow([lab, *(repr(float(x)) for x in row)])
            paths.append(path)
        return paths


def _admittance(obj):
    Y = getattr(obj, "Y", obj)
    Y = getattr(Y, "Y", Y)
    return np.asarray(Y, dtype=complex)


def _select(index_set, n):
    if index_set is None:
        return np.arange(n)
    idx = np.asarray(index_set, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError("index_set outside the bus range")
    return idx


def _trig_terms(Y, state):
    if Y.shape != (state.n, state.n):
        raise ValueError(f"state has {state.n} buses, admittance is {Y.shape}")
    G, B = Y.real, Y.imag
    dth = state.theta[:, None] - state.theta[None, :]
    cos, sin = np.cos(dth), np.sin(dth)
    C = G * cos + B * sin
    S = G * sin - B * cos
    return C, S


def classical_blocks(network, state: StateVector, index_set=None) -> JacobianBlocks:
    """Jacobian blocks from the trigonometric summation formulas.

    ``network`` may be a :class:`~gridphase.netmodel.Network`, an
    admittance wrapper or a bare complex matrix. ``index_set`` holds 0-based
    bus positions; rows and columns are extracted from the full-bus blocks.
    """
    Y = _admittance(network)
    C, S = _trig_terms(Y, state)
    v = state.v
    n = state.n
    off = ~np.eye(n, dtype=bool)
    C_off = np.where(off, C, 0.0)
    S_off = np.where(off, S, 0.0)
    sumC = C_off @ v
    sumS = S_off @ v
    G_d, B_d = Y.real.diagonal(), Y.imag.diagonal()

    dp_dv = v[:, None] * C_off
    dp_dv[np.diag_indices(n)] = 2 * v * G_d + sumC
    dq_dv = v[:, None] * S_off
    dq_dv[np.diag_indices(n)] = -2 * v * B_d + sumS
    vv = np.outer(v, v)
    dp_dth = vv * S_off
    dp_dth[np.diag_indices(n)] = -v * sumS
    dq_dth = -vv * C_off
    dq_dth[np.diag_indices(n)] = v * sumC

    idx = _select(index_set, n)
    ix = np.ix_(idx, idx)
    return JacobianBlocks(dp_dth[ix], dp_dv[ix], dq_dth[ix], dq_dv[ix], idx)


def diagonal_shortcuts(network, state: StateVector, p, q):
    """Diagonals of the four blocks written through the bus injections.

    Returns ``(dp_dtheta, dp_dv, dq_dtheta, dq_dv)`` diagonal vectors::

        dp_i/dtheta_i = -q_i - B_ii v_i^2     dp_i/dv_i = p_i/v_i + G_ii v_i
        dq_i/dtheta_i =  p_i - G_ii v_i^2     dq_i/dv_i = q_i/v_i - B_ii v_i
    """
    Y = _admittance(network)
    G_d, B_d = Y.real.diagonal(), Y.imag.diagonal()
    v = state.v
    return (-q - B_d * v**2, p / v + G_d * v, p - G_d * v**2, q / v - B_d * v)


def phaseless_blocks(v, p, q, dp_dv, dq_dv):
    """Angle blocks from magnitudes, injections and magnitude blocks.

    Returns ``(dp_dtheta, dq_dtheta)``. Nothing here depends on the
    network model or on the voltage angles.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    dp_dv = np.asarray(dp_dv, dtype=float)
    dq_dv = np.asarray(dq_dv, dtype=float)
    n = v.size
    if p.shape != (n,) or q.shape != (n,):
        raise ValueError("v, p and q must be vectors of equal length")
    if dp_dv.shape != (n, n) or dq_dv.shape != (n, n):
        raise ValueError(f"sensitivity matrices must be {n}x{n}")
    if not np.all(v > 0):
        raise ValueError("voltage magnitudes must be positive")
    dp_dtheta = dq_dv * v[None, :] - 2 * np.diag(q)
    dq_dtheta = -dp_dv * v[None, :] + 2 * np.diag(p)
    return dp_dtheta, dq_dtheta


@dataclass(frozen=True)
class ComplexSensitivities:
    ds_dv: np.ndarray
    ds_dtheta: np.ndarray

    def blocks(self, index_set=None) -> JacobianBlocks:
        n = self.ds_dv.shape[0]
        idx = _select(index_set, n)
        ix = np.ix_(idx, idx)
        dv, dth = self.ds_dv[ix], self.ds_dtheta[ix]
        return JacobianBlocks(dth.real.copy(), dv.real.copy(),
                              dth.imag.copy(), dv.imag.copy(), idx)


def closed_form_blocks(Y, state) -> ComplexSensitivities:
    """Complex power sensitivities ``ds/dv`` and ``ds/dtheta``.

    ``state`` may be a :class:`StateVector` or a vector of complex phasors.
    Works for any square admittance, including multiphase compound ones.
    """
    Y = _admittance(Y)
    if isinstance(state, StateVector):
        vbar, v = state.phasors, state.v
    else:
        vbar = np.asarray(state, dtype=complex)
        v = np.abs(vbar)
    if np.any(v == 0):
        raise ValueError("zero voltage magnitude: diag(v) is singular")
    if Y.shape != (vbar.size, vbar.size):
        raise ValueError("admittance and voltage dimensions differ")
    Yc = Y.conj()
    vc = vbar.conj()
    i_conj = Yc @ vc
    left = vbar[:, None]
    ds_dv = left * (np.diag(i_conj) + Yc * vc[None, :]) / v[None, :]
    ds_dtheta = 1j * left * (np.diag(i_conj) - Yc * vc[None, :])
    return ComplexSensitivities(ds_dv, ds_dtheta)
