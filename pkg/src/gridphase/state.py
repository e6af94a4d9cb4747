"""Bus state and injection containers shared by the solver and estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["InjectionVector", "StateVector", "wrap_angle"]


def wrap_angle(theta):
    """Map angles (radians) into the half-open interval (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    return np.pi - np.mod(np.pi - theta, 2 * np.pi)


@dataclass(frozen=True)
class StateVector:
    """Voltage angles ``theta`` (radians) and magnitudes ``v`` (p.u.) per bus."""

    theta: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        theta = wrap_angle(np.atleast_1d(np.asarray(self.theta, dtype=float)))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if theta.shape != v.shape or theta.ndim != 1:
            raise ValueError(f"theta {theta.shape} and v {v.shape} must be equal-length vectors")
        if not np.all(v > 0):
            raise ValueError("voltage magnitudes must be strictly positive")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(v))):
            raise ValueError("state contains non-finite entries")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "v", v)

    @property
    def n(self):
        return self.v.size

    @property
    def phasors(self):
        return self.v * np.exp(1j * self.theta)

    def as_vector(self):
        """The stacked state ``[theta; v]``."""
        return np.concatenate([self.theta, self.v])

    def subset(self, index):
        return StateVector(self.theta[index], self.v[index])


@dataclass(frozen=True)
class InjectionVector:
    """Net active/reactive injections (generation minus demand), p.u."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if p.shape != q.shape:
            raise ValueError("p and q must have equal shape")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("injections must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def s(self):
        return self.p + 1j * self.q

    def as_vector(self):
        return np.concatenate([self.p, self.q])
