"""Polar power flow equations and a Newton-Raphson solver.

The solver can assemble its Jacobian in two ways. ``"classical"`` uses the
trigonometric sums for all four blocks. ``"phaseless"`` keeps the two
magnitude blocks but rebuilds the angle blocks from ``v``, ``p(x)`` and
``q(x)`` alone (see :func:`gridphase.jacobian.phaseless_blocks`). In exact
arithmetic both modes produce the same iterates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .jacobian import classical_blocks, phaseless_blocks
from .state import InjectionVector, StateVector, wrap_angle

__all__ = [
    "IterationRecord",
    "PowerFlowSolution",
    "SingularJacobianError",
    "injections",
    "nr_solve",
]

MODES = ("classical", "phaseless")


class SingularJacobianError(np.linalg.LinAlgError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"reduced Jacobian is singular at iteration {iteration}")


def _Y(network):
    Y = getattr(network, "Y", network)
    return np.asarray(getattr(Y, "Y", Y), dtype=complex)


def injections(network, state: StateVector) -> InjectionVector:
    """Net bus injections ``p + jq = vbar * conj(Y vbar)`` at ``state``."""
    Y = _Y(network)
    if Y.shape != (state.n, state.n):
        raise ValueError(f"state has {state.n} buses, network has {Y.shape[0]}")
    vbar = state.phasors
    s = vbar * np.conj(Y @ vbar)
    return InjectionVector(s.real, s.imag)


@dataclass
class IterationRecord:
    """Quantities captured before the update of one Newton step."""

    iteration: int
    theta: np.ndarray
    v: np.ndarray
    mismatch: float
    dp_dtheta: np.ndarray
    dq_dtheta: np.ndarray


@dataclass
class PowerFlowSolution:
    state: StateVector
    injections: InjectionVector
    iterations: int
    final_mismatch: float
    converged: bool
    mode: str = "classical"
    mismatch_trace: list = field(default_factory=list)
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "converged": self.converged,
            "mode": self.mode,
            "iterations": self.iterations,
            "final_mismatch": self.final_mismatch,
            "mismatch_trace": list(self.mismatch_trace),
            "theta": self.state.theta.tolist(),
            "v": self.state.v.tolist(),
            "p": self.injections.p.tolist(),
            "q": self.injections.q.tolist(),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def nr_solve(network, initial=None, *, tolerance=1e-8, max_iter=30,
             jacobian_mode="classical", p_spec=None, q_spec=None,
             record=False) -> PowerFlowSolution:
    """Solve the power flow by Newton-Raphson in polar coordinates.

    Unknowns are the angles at PV and PQ buses and the magnitudes at PQ
    buses; the slack angle stays at its initial value. ``initial`` defaults
    to the flat start. ``p_spec``/``q_spec`` override the case schedule
    (full-length vectors). Non-convergence is reported through
    ``converged=False``; a singular reduced Jacobian raises
    :class:`SingularJacobianError`.
    """
    if jacobian_mode not in MODES:
        raise ValueError(f"jacobian_mode must be one of {MODES}, got {jacobian_mode!r}")
    if initial is None:
        initial = StateVector(*network.flat_state())
    elif not isinstance(initial, StateVector):
        initial = StateVector(*initial)
    n = network.n
    if initial.n != n:
        raise ValueError("initial state dimension does not match the network")
    p_spec = network.p_scheduled if p_spec is None else np.asarray(p_spec, float)
    q_spec = network.q_scheduled if q_spec is None else np.asarray(q_spec, float)

    pq = np.asarray(network.pq_indices)
    pvpq = np.sort(np.concatenate([network.pv_indices, network.pq_indices])).astype(int)
    n_th = pvpq.size

    theta = initial.theta.copy()
    v = initial.v.copy()
    trace, history = [], []
    converged = False
    it = 0
    while True:
        state = StateVector(theta, v)
        inj = injections(network, state)
        mis = np.concatenate([inj.p[pvpq] - p_spec[pvpq], inj.q[pq] - q_spec[pq]])
        norm = float(np.max(np.abs(mis))) if mis.size else 0.0
        trace.append(norm)
        if norm < tolerance:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        blocks = classical_blocks(network, state)
        dp_dth, dq_dth = blocks.dp_dtheta, blocks.dq_dtheta
        if jacobian_mode == "phaseless":
            dp_dth, dq_dth = phaseless_blocks(v, inj.p, inj.q, blocks.dp_dv, blocks.dq_dv)
        if record:
            history.append(IterationRecord(it, theta.copy(), v.copy(), norm,
                                           dp_dth.copy(), dq_dth.copy()))
        J = np.block([
            [dp_dth[np.ix_(pvpq, pvpq)], blocks.dp_dv[np.ix_(pvpq, pq)]],
            [dq_dth[np.ix_(pq, pvpq)], blocks.dq_dv[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -mis)
        except np.linalg.LinAlgError:
            raise SingularJacobianError(it) from None
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(it)
        new_v = v.copy()
        new_v[pq] = v[pq] + dx[n_th:]
        if not np.all(new_v > 0):
            # diverged into non-physical magnitudes; keep the last valid iterate
            break
        theta[pvpq] = wrap_angle(theta[pvpq] + dx[:n_th])
        v = new_v

    return PowerFlowSolution(
        state=state,
        injections=inj,
        iterations=it,
        final_mismatch=trace[-1],
        converged=converged,
        mode=jacobian_mode,
        mismatch_trace=trace,
        history=history,
    )
