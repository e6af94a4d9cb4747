"""Simulated phaseless measurements, nonidealities and experiment drivers.

Snapshot experiments perturb a solved operating point ``x*`` on its PQ
buses: the observed injections are ``dg = J(x*) x* + xi`` with independent
``xi_p`` and ``xi_q`` and the observed state is ``dx = J^-1 dg``, so a
retrieved angle perturbation estimates ``theta*`` itself.

Time-series experiments drive sequential power flows with a load trajectory,
corrupt the resulting magnitude streams and integrate per-step retrievals.

All randomness derives from explicit seeds through
:class:`numpy.random.SeedSequence`; children are spawned per job before any
work starts, so run order cannot change results.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .jacobian import classical_blocks, closed_form_blocks
from .powerflow import PowerFlowSolution, injections, nr_solve
from .retrieval import MeasurementSnapshot, integrate_angles, retrieve_ls
from .sensitivity import estimate_from_window, model_plus_noise, synthetic_window
from .state import StateVector, wrap_angle

__all__ = [
    "GroundTruth",
    "LoadSeries",
    "MeasurementSeries",
    "NoiseSpec",
    "RetrievalExperiment",
    "ScenarioConfig",
    "SequentialResult",
    "SimulatedSnapshot",
    "TimeSeriesScenario",
    "apply_nonidealities",
    "baseline_known_topology",
    "read_load_csv",
    "run_noise_sweep",
    "run_retrieval_experiment",
    "run_sequential_retrieval",
    "simulate_snapshot",
    "solve_series",
    "summarize_sweep",
    "synthetic_load_series",
    "write_load_csv",
]

log = logging.getLogger(__name__)

_STREAMS = ("meas", "jac", "window", "delay")


@dataclass(frozen=True)
class NoiseSpec:
    sigma_meas: float = 0.0
    sigma_jac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_meas < 0 or self.sigma_jac < 0:
            raise ValueError("noise standard deviations must be non-negative")

    def streams(self):
        """Independent child seeds keyed by purpose."""
        children = np.random.SeedSequence(self.seed).spawn(len(_STREAMS))
        return dict(zip(_STREAMS, children))


def _state_of(solved):
    if isinstance(solved, PowerFlowSolution):
        if not solved.converged:
            raise ValueError("operating point is not a converged power flow solution")
        return solved.state
    if isinstance(solved, StateVector):
        return solved
    return StateVector(*solved)


@dataclass
class SimulatedSnapshot:
    pq: np.ndarray
    state: StateVector
    snapshot: MeasurementSnapshot
    blocks: object
    dg_obs: np.ndarray
    dx_obs: np.ndarray

    @property
    def n(self):
        return self.pq.size

    @property
    def dp_obs(self):
        return self.dg_obs[: self.n]

    @property
    def dq_obs(self):
        return self.dg_obs[self.n:]

    @property
    def dv_obs(self):
        return self.dx_obs[self.n:]

    @property
    def theta_true(self):
        return self.state.theta[self.pq]


def simulate_snapshot(network, solved_state, noise: NoiseSpec) -> SimulatedSnapshot:
    """Observed injection and state perturbations at a solved operating point."""
    state = _state_of(solved_state)
    pq = np.asarray(network.pq_indices, dtype=int)
    blocks = classical_blocks(network, state, pq)
    J = blocks.full()
    x_star = np.concatenate([state.theta[pq], state.v[pq]])
    rng = np.random.default_rng(noise.streams()["meas"])
    n = pq.size
    xi_p = rng.normal(0.0, noise.sigma_meas, n)
    xi_q = rng.normal(0.0, noise.sigma_meas, n)
    dg = J @ x_star + np.concatenate([xi_p, xi_q])
    try:
        dx = np.linalg.solve(J, dg)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("PQ-reduced Jacobian is singular at this state") from exc
    inj = injections(network, state)
    snap = MeasurementSnapshot(state.v[pq], inj.p[pq], inj.q[pq])
    return SimulatedSnapshot(pq, state, snap, blocks, dg, dx)


@dataclass
class RetrievalExperiment:
    bus_ids: np.ndarray
    theta_true: np.ndarray
    theta_hat: np.ndarray
    method: str
    rank_deficient: bool = False

    @property
    def abs_error(self):
        return np.abs(wrap_angle(self.theta_hat - self.theta_true))

    @property
    def relative_error(self):
        ref = np.linalg.norm(self.theta_true)
        return float(np.linalg.norm(self.theta_hat - self.theta_true) / (ref if ref > 0 else 1.0))

    def summary(self):
        e = self.abs_error
        return {
            "method": self.method,
            "n_buses": int(e.size),
            "max_abs_error": float(e.max()) if e.size else 0.0,
            "median_abs_error": float(np.median(e)) if e.size else 0.0,
            "relative_error": self.relative_error,
            "rank_deficient": self.rank_deficient,
        }


def run_retrieval_experiment(network, solved_state, noise: NoiseSpec, *,
                             sensitivities="model", window=None, window_noise=1e-4):
    """Model-free angle retrieval on one simulated snapshot.

    ``sensitivities="model"`` uses the model magnitude blocks plus
    ``sigma_jac`` noise; ``"estimated"`` fits them by regression over a
    synthetic window of ``window`` samples (default ``2n``).
    """
    sim = simulate_snapshot(network, solved_state, noise)
    seeds = noise.streams()
    if sensitivities == "model":
        est = model_plus_noise(sim.blocks, noise.sigma_jac, seeds["jac"])
    elif sensitivities == "estimated":
        size = 2 * sim.n if window is None else int(window)
        samples = synthetic_window(sim.blocks, size, noise=window_noise, seed=seeds["window"])
        est = estimate_from_window(samples)
    else:
        raise ValueError(f"unknown sensitivities source {sensitivities!r}")
    res = retrieve_ls(sim.snapshot, est.dp_dv, est.dq_dv, sim.dp_obs, sim.dq_obs, sim.dv_obs)
    return RetrievalExperiment(network.bus_ids[sim.pq], sim.theta_true, res.delta_theta,
                               "model_free", res.rank_deficient)


def baseline_known_topology(network, solved_state, noise: NoiseSpec):
    """Angle estimate with angle blocks fixed to the admittance-based model.

    Uses the same measurement noise draw as :func:`run_retrieval_experiment`
    for an equal seed.
    """
    sim = simulate_snapshot(network, solved_state, noise)
    model = closed_form_blocks(network.Y, sim.state).blocks(sim.pq)
    A = np.vstack([model.dp_dtheta, model.dq_dtheta])
    b = np.concatenate([sim.dp_obs - model.dp_dv @ sim.dv_obs,
                        sim.dq_obs - model.dq_dv @ sim.dv_obs])
    if np.linalg.matrix_rank(A) < sim.n:
        raise np.linalg.LinAlgError("model angle blocks are rank deficient")
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return wrap_angle(x)


def run_noise_sweep(network, solved_state, sigma_meas_grid, sigma_jac_grid, *,
                    n_boot=20, master_seed=0, baseline=True):
    """Bootstrap errors over a noise grid.

    Bootstrap ``b`` uses the same child seed at every grid point, so curves
    across the grid share their random draws. Returns tidy row dicts.
    """
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n_boot)]
    rows = []
    pq = np.asarray(network.pq_indices, dtype=int)
    theta_true = _state_of(solved_state).theta[pq]
    bus_ids = network.bus_ids[pq]
    for sm in sigma_meas_grid:
        for sj in sigma_jac_grid:
            for b, seed in enumerate(seeds):
                spec = NoiseSpec(float(sm), float(sj), seed)
                exp = run_retrieval_experiment(network, solved_state, spec)
                rows.append(_sweep_row(sm, sj, b, seed, "model_free", exp))
        if baseline:
            for b, seed in enumerate(seeds):
                spec = NoiseSpec(float(sm), 0.0, seed)
                th = baseline_known_topology(network, solved_state, spec)
                exp = RetrievalExperiment(bus_ids, theta_true, th, "known_topology")
                rows.append(_sweep_row(sm, None, b, seed, "known_topology", exp))
    return rows


def _sweep_row(sm, sj, b, seed, method, exp):
    e = exp.abs_error
    return {
        "sigma_meas": float(sm),
        "sigma_jac": None if sj is None else float(sj),
        "method": method,
        "boot": b,
        "seed": seed,
        "relative_error": exp.relative_error,
        "median_abs_error": float(np.median(e)),
        "max_abs_error": float(e.max()),
    }


def summarize_sweep(rows, metric="relative_error"):
    """Mean and standard deviation of ``metric`` per (method, sigma_meas, sigma_jac)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["sigma_meas"], r["sigma_jac"]), []).append(r[metric])
    out = []
    for (method, sm, sj), vals in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or 0)):
        vals = np.asarray(vals)
        out.append({"method": method, "sigma_meas": sm, "sigma_jac": sj, "n": int(vals.size),
                    f"mean_{metric}": float(vals.mean()), f"std_{metric}": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                    f"median_{metric}": float(np.median(vals))})
    return out


# ---------------------------------------------------------------- time series


@dataclass(frozen=True)
class LoadSeries:
    """Per-bus demand trajectories in p.u.; arrays are ``(T, n_bus)``."""

    timestamps: np.ndarray
    p_demand: np.ndarray
    q_demand: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        p = np.atleast_2d(np.asarray(self.p_demand, dtype=float))
        q = np.atleast_2d(np.asarray(self.q_demand, dtype=float))
        if p.shape != q.shape or p.shape[0] != t.size:
            raise ValueError("timestamps and demand arrays disagree in shape")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "p_demand", p)
        object.__setattr__(self, "q_demand", q)

    def __len__(self):
        return self.timestamps.size


def _base_demand(network):
    p = np.array([b.p_demand for b in network.buses])
    q = np.array([b.q_demand for b in network.buses])
    return p, q


def synthetic_load_series(network, n_steps, *, step_seconds=300.0, volatility=0.002,
                          daily_amplitude=0.05, seed=0) -> LoadSeries:
    """Smooth load trajectories: a slow shared daily swing times per-bus random walks.

    Demand at bus ``i`` is ``base_i * (1 + a sin(2 pi t / day)) * w_i(t)`` with
    ``w_i`` a multiplicative Gaussian walk of step size ``volatility``.
    """
    rng = np.random.default_rng(seed)
    p0, q0 = _base_demand(network)
    t = np.arange(n_steps) * float(step_seconds)
    day = 1 + daily_amplitude * np.sin(2 * np.pi * t / 86400.0)
    walk = np.exp(np.cumsum(rng.normal(0.0, volatility, (n_steps, network.n)), axis=0))
    walk[0] = 1.0
    f = day[:, None] * walk
    return LoadSeries(t, p0[None, :] * f, q0[None, :] * f)


def read_load_csv(path, network) -> LoadSeries:
    """Long-format load CSV (``timestamp, bus, p, q``; p.u. demand).

    Buses absent from the file keep their case demand.
    """
    data = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"timestamp", "bus", "p", "q"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"load CSV lacks columns {sorted(missing)}")
        for rec in reader:
            data.setdefault(float(rec["timestamp"]), {})[int(rec["bus"])] = (float(rec["p"]), float(rec["q"]))
    if not data:
        raise ValueError("load CSV has no rows")
    times = sorted(data)
    p0, q0 = _base_demand(network)
    P = np.tile(p0, (len(times), 1))
    Q = np.tile(q0, (len(times), 1))
    for k, t in enumerate(times):
        for bus, (p, q) in data[t].items():
            i = network.index_of(bus)
            P[k, i], Q[k, i] = p, q
    return LoadSeries(np.array(times), P, Q)


def write_load_csv(series: LoadSeries, path, network):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "bus", "p", "q"])
        for k, t in enumerate(series.timestamps):
            for i, bus in enumerate(network.bus_ids):
                w.writerow([repr(float(t)), int(bus), repr(float(series.p_demand[k, i])),
                            repr(float(series.q_demand[k, i]))])


@dataclass
class GroundTruth:
    timestamps: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    converged: np.ndarray


def solve_series(network, load: LoadSeries, *, tolerance=1e-10) -> GroundTruth:
    """Sequential power flows, each warm-started from the previous solution.

    Generator dispatch stays at the case values; the slack absorbs the
    difference. A step that fails to converge is kept with its last iterate
    and marked in ``converged``.
    """
    if load.p_demand.shape[1] != network.n:
        raise ValueError("load series does not match the network bus count")
    p0, q0 = _base_demand(network)
    T = len(load)
    out = {k: np.empty((T, network.n)) for k in ("theta", "v", "p", "q")}
    ok = np.zeros(T, dtype=bool)
    start = StateVector(*network.case_state())
    for k in range(T):
        p_spec = network.p_scheduled + p0 - load.p_demand[k]
        q_spec = network.q_scheduled + q0 - load.q_demand[k]
        sol = nr_solve(network, start, tolerance=tolerance, p_spec=p_spec, q_spec=q_spec)
        ok[k] = sol.converged
        if sol.converged:
            start = sol.state
        else:
            log.warning("power flow did not converge at step %d", k)
        out["theta"][k], out["v"][k] = sol.state.theta, sol.state.v
        out["p"][k], out["q"][k] = sol.injections.p, sol.injections.q
    return GroundTruth(load.timestamps.copy(), converged=ok, **out)


@dataclass(frozen=True)
class MeasurementSeries:
    """Magnitude streams over a bus subset; arrays are ``(T, m)``."""

    timestamps: np.ndarray
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    index: np.ndarray = field(default=None)

    def __len__(self):
        return np.asarray(self.timestamps).size


@dataclass(frozen=True)
class TimeSeriesScenario:
    load_series: LoadSeries
    subsample_factor: int = 1
    delay_prob: float = 0.0
    delay_steps: int = 1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    noisy_streams: tuple = ("p", "q")

    def __post_init__(self):
        if int(self.subsample_factor) < 1:
            raise ValueError("subsample_factor must be at least 1")
        if not 0.0 <= self.delay_prob <= 1.0:
            raise ValueError("delay_prob must lie in [0, 1]")
        if self.delay_steps < 0:
            raise ValueError("delay_steps must be non-negative")
        bad = set(self.noisy_streams) - {"v", "p", "q"}
        if bad:
            raise ValueError(f"unknown streams {sorted(bad)}")


def apply_nonidealities(series: MeasurementSeries, scenario: TimeSeriesScenario):
    """Subsample, delay and add noise. Returns ``(corrupted, delayed_mask)``.

    Each bus is delayed with probability ``delay_prob``; a delayed bus has
    all of its streams circularly shifted by ``delay_steps`` retained
    samples. Noise goes on the streams listed in ``noisy_streams``.
    """
    f = int(scenario.subsample_factor)
    t = np.asarray(series.timestamps)[::f]
    arrs = {k: np.array(getattr(series, k), dtype=float)[::f] for k in "vpq"}
    m = arrs["v"].shape[1]
    seeds = scenario.noise.streams()
    delay_seq, noise_seq = seeds["delay"], seeds["meas"]
    delayed = np.random.default_rng(delay_seq).random(m) < scenario.delay_prob
    if delayed.any() and scenario.delay_steps:
        for k in arrs:
            arrs[k][:, delayed] = np.roll(arrs[k][:, delayed], scenario.delay_steps, axis=0)
    sigma = scenario.noise.sigma_meas
    if sigma > 0:
        rng = np.random.default_rng(noise_seq)
        for k in "vpq":
            draw = rng.normal(0.0, sigma, arrs[k].shape)
            if k in scenario.noisy_streams:
                arrs[k] = arrs[k] + draw
    return MeasurementSeries(t, arrs["v"], arrs["p"], arrs["q"], series.index), delayed


@dataclass
class SequentialResult:
    bus_ids: np.ndarray
    timestamps: np.ndarray
    theta_true: np.ndarray
    retained_timestamps: np.ndarray
    theta_hat_retained: np.ndarray
    theta_hat: np.ndarray
    skipped_steps: list
    delayed_buses: list

    @property
    def abs_error(self):
        return np.abs(wrap_angle(self.theta_hat - self.theta_true))

    @property
    def max_abs_error(self):
        return float(self.abs_error.max()) if self.abs_error.size else 0.0

    def per_bus_relative_error(self):
        """``100 * ||err_i|| / ||theta_i||`` over time, per bus (percent)."""
        err = np.linalg.norm(wrap_angle(self.theta_hat - self.theta_true), axis=0)
        ref = np.linalg.norm(self.theta_true, axis=0)
        return 100.0 * err / np.where(ref > 0, ref, 1.0)

    def aggregate_relative_error(self):
        """``100 * ||err||_F / ||theta||_F`` over all buses and times (percent)."""
        ref = np.linalg.norm(self.theta_true)
        return float(100.0 * np.linalg.norm(wrap_angle(self.theta_hat - self.theta_true))
                     / (ref if ref > 0 else 1.0))

    def summary(self):
        rel = self.per_bus_relative_error()
        return {
            "n_steps": int(self.timestamps.size),
            "n_retained": int(self.retained_timestamps.size),
            "n_buses": int(self.bus_ids.size),
            "max_abs_error": self.max_abs_error,
            "mean_abs_error": float(self.abs_error.mean()) if self.abs_error.size else 0.0,
            "aggregate_relative_error_pct": self.aggregate_relative_error(),
            "median_per_bus_relative_error_pct": float(np.median(rel)) if rel.size else 0.0,
            "max_per_bus_relative_error_pct": float(rel.max()) if rel.size else 0.0,
            "skipped_steps": list(self.skipped_steps),
            "delayed_buses": list(self.delayed_buses),
        }

    def write_csv(self, target):
        """Tidy CSV ``timestamp, bus, theta_true, theta_hat, abs_error`` to a path or stream."""
        if hasattr(target, "write"):
            self._write_rows(target)
        else:
            with open(target, "w", newline="") as fh:
                self._write_rows(fh)

    def _write_rows(self, fh):
        err = self.abs_error
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "bus", "theta_true", "theta_hat", "abs_error"])
        for k, t in enumerate(self.timestamps):
            for i, b in enumerate(self.bus_ids):
                w.writerow([repr(float(t)), int(b), repr(float(self.theta_true[k, i])),
                            repr(float(self.theta_hat[k, i])), repr(float(err[k, i]))])


def _nonslack(network):
    return np.sort(np.concatenate([network.pv_indices, network.pq_indices])).astype(int)


def run_sequential_retrieval(network, scenario: TimeSeriesScenario, *, truth=None):
    """Integrate per-step angle retrievals over a corrupted measurement stream.

    Streams cover every non-slack bus: generator angles move with the load,
    so leaving PV buses out would bias each step. Magnitude blocks come from
    the model at the ground-truth state of each retained step, plus
    ``sigma_jac`` noise. Each step averages the retrievals linearised at its
    two end points (trapezoidal rule). The estimate is anchored at the true
    angles of the first retained sample and interpolated linearly back to the
    native timestamps.
    """
    if truth is None:
        truth = solve_series(network, scenario.load_series)
    idx = _nonslack(network)
    m = idx.size
    series = MeasurementSeries(truth.timestamps, truth.v[:, idx], truth.p[:, idx],
                               truth.q[:, idx], idx)
    obs, delayed = apply_nonidealities(series, scenario)
    f = int(scenario.subsample_factor)
    native = np.arange(0, len(truth.timestamps), f)
    jac_seeds = scenario.noise.streams()["jac"].spawn(len(native))

    def sens(k):
        st = StateVector(truth.theta[native[k]], truth.v[native[k]])
        blocks = classical_blocks(network, st, idx)
        return model_plus_noise(blocks, scenario.noise.sigma_jac, jac_seeds[k])

    def snap(k):
        return MeasurementSnapshot(np.maximum(obs.v[k], 1e-6), obs.p[k], obs.q[k])

    deltas, skipped = [], []
    prev = sens(0) if native.size else None
    for k in range(native.size - 1):
        cur = sens(k + 1)
        if not (truth.converged[native[k]] and truth.converged[native[k + 1]]):
            skipped.append(k)
            deltas.append(np.zeros(m))
            prev = cur
            continue
        dv = obs.v[k + 1] - obs.v[k]
        dp = obs.p[k + 1] - obs.p[k]
        dq = obs.q[k + 1] - obs.q[k]
        a = retrieve_ls(snap(k), prev.dp_dv, prev.dq_dv, dp, dq, dv)
        b = retrieve_ls(snap(k + 1), cur.dp_dv, cur.dq_dv, dp, dq, dv)
        deltas.append(0.5 * (a.delta_theta + b.delta_theta))
        prev = cur
    theta_ref = truth.theta[native[0], idx] if native.size else np.zeros(m)
    theta_ret = integrate_angles(np.array(deltas).reshape(-1, m), theta_ref)
    unwrapped = np.unwrap(theta_ret, axis=0)
    t_native = truth.timestamps
    theta_hat = np.empty((t_native.size, m))
    for i in range(m):
        theta_hat[:, i] = np.interp(t_native, obs.timestamps, unwrapped[:, i])
    return SequentialResult(
        bus_ids=network.bus_ids[idx],
        timestamps=t_native,
        theta_true=truth.theta[:, idx],
        retained_timestamps=obs.timestamps,
        theta_hat_retained=theta_ret,
        theta_hat=wrap_angle(theta_hat),
        skipped_steps=skipped,
        delayed_buses=[int(b) for b in network.bus_ids[idx][delayed]],
    )


# ------------------------------------------------------------- scenario files


@dataclass
class ScenarioConfig:
    """Parsed scenario file. Unknown keys are rejected."""

    case: str = "case_RTS_GMLC"
    n_steps: int = 50
    step_seconds: float = 300.0
    volatility: float = 0.002
    load_csv: str | None = None
    subsample_factor: int = 1
    delay_prob: float = 0.0
    delay_steps: int = 1
    sigma_meas: float = 0.0
    sigma_jac: float = 0.0
    seed: int = 0
    noisy_streams: list = field(default_factory=lambda: ["p", "q"])
    sweep: dict | None = None

    @classmethod
    def from_path(cls, path):
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
        return cls.from_dict(raw, base=path.parent)

    @classmethod
    def from_dict(cls, raw, base=None):
        known = set(cls.__dataclass_fields__)
        extra = set(raw) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        cfg = cls(**raw)
        if base is not None:
            if cfg.load_csv and not Path(cfg.load_csv).is_absolute():
                cfg = replace(cfg, load_csv=str(Path(base) / cfg.load_csv))
            if cfg.case.endswith(".m") and not Path(cfg.case).is_absolute() and (Path(base) / cfg.case).exists():
                cfg = replace(cfg, case=str(Path(base) / cfg.case))
        return cfg

    def noise(self):
        return NoiseSpec(self.sigma_meas, self.sigma_jac, self.seed)

    def scenario(self, network):
        if self.load_csv:
            load = read_load_csv(self.load_csv, network)
        else:
            load = synthetic_load_series(network, self.n_steps, step_seconds=self.step_seconds,
                                         volatility=self.volatility, seed=self.seed)
        return TimeSeriesScenario(load, self.subsample_factor, self.delay_prob,
                                  self.delay_steps, self.noise(), tuple(self.noisy_streams))
