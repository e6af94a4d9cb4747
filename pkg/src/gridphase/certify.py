"""Gershgorin-type recovery certificates computed from phaseless data.

Every check here consumes only voltage magnitudes, injections and the two
magnitude sensitivity blocks over a set of PQ buses. The certificates are
one-sided: a failed condition is *inconclusive* and says nothing about
singularity.

Per-bus angle certificate (q form). For bus ``i`` in the set ``B``::

    |q_i| > 1/2 * v_i * (sum_{k != i} |dq_k/dv_i| - |dq_i/dv_i|)       (column)
    |q_i| > 1/2 * (sum_{k != i} v_k |dq_i/dv_k| - v_i |dq_i/dv_i|)     (row)

and the same with ``p``/``dp/dv`` for the p form. Either line per bus is
enough. On PQ buses whose neighbours are all in ``B`` the first line is an
exact equality for load buses, so in floating point the outcome of the
strict test is decided by rounding. ``tie_rtol`` resolves that: margins
within ``tie_rtol`` of the local scale count as satisfied (a weakly
diagonally dominant irreducible matrix with one strictly dominant row is
still nonsingular). Pass ``tie_rtol=0`` for the raw strict comparison.

Both checks rebuild the angle blocks from the magnitude blocks. With
``scaling="column"`` (default) that is the exact Jacobian identity
``dp/dtheta = dq/dv diag(v) - 2 diag(q)``. ``scaling="row"`` uses
``diag(v) dq/dv - 2 diag(q)`` instead; it is not the Jacobian, but it is the
form under which the widely quoted benchmark norms were tabulated, so it is
kept for comparison.

Block certificate. With ``A = dp/dtheta(v, q)`` and ``D = dq/dv`` both
invertible, the full Jacobian is nonsingular if::

    ||A^-1 dp/dv|| < 1 and ||D^-1 dq/dtheta(v, p)|| < 1      (row pair)
 or ||A^-1 dq/dtheta|| < 1 and ||D^-1 dp/dv|| < 1            (column pair)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .jacobian import phaseless_blocks

__all__ = [
    "CertificateReport",
    "Thm1Result",
    "Thm2Result",
    "certify",
    "certify_network",
    "check_thm1",
    "check_thm2",
    "format_table",
    "max_certified_subset",
]

RANK_RTOL = 1e-10
DEFAULT_TIE_RTOL = 1e-9
SCALINGS = ("column", "row")


def _angle_blocks(v, p, q, dp_dv, dq_dv, scaling):
    if scaling == "column":
        return phaseless_blocks(v, p, q, dp_dv, dq_dv)
    if scaling == "row":
        return (v[:, None] * dq_dv - 2 * np.diag(q),
                -v[:, None] * dp_dv + 2 * np.diag(p))
    raise ValueError(f"scaling must be one of {SCALINGS}, got {scaling!r}")


def _inputs(v, p, q, dp_dv, dq_dv, bus_set):
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    dp_dv = np.asarray(dp_dv, dtype=float)
    dq_dv = np.asarray(dq_dv, dtype=float)
    n = v.size
    if p.shape != (n,) or q.shape != (n,) or dp_dv.shape != (n, n) or dq_dv.shape != (n, n):
        raise ValueError("inconsistent dimensions among v, p, q and sensitivities")
    if bus_set is not None:
        s = np.asarray(bus_set, dtype=int)
        ix = np.ix_(s, s)
        v, p, q, dp_dv, dq_dv = v[s], p[s], q[s], dp_dv[ix], dq_dv[ix]
    return v, p, q, dp_dv, dq_dv


def _disc_conditions(x, v, M, tie_rtol):
    """Column/row conditions for injection ``x`` against sensitivity ``M``.

    Returns ``(column_ok, row_ok, deficit)`` where ``deficit > 0`` measures
    by how much the easier of the two conditions is missed.
    """
    A = np.abs(M)
    d = A.diagonal().copy()
    off = A - np.diag(d)
    col_sum = v * off.sum(axis=0)
    row_sum = off @ v
    col_rhs = 0.5 * (col_sum - v * d)
    row_rhs = 0.5 * (row_sum - v * d)
    ax = np.abs(x)
    scale = np.maximum.reduce([ax, col_sum, row_sum, v * d])
    tol = tie_rtol * scale
    col_ok = ax - col_rhs > -tol
    row_ok = ax - row_rhs > -tol
    deficit = np.minimum(col_rhs, row_rhs) - ax
    return col_ok, row_ok, deficit


@dataclass
class Thm1Result:
    q_column: np.ndarray
    q_row: np.ndarray
    p_column: np.ndarray
    p_row: np.ndarray
    q_deficit: np.ndarray
    p_deficit: np.ndarray
    r_worst: float

    @property
    def flags_q(self):
        return self.q_column | self.q_row

    @property
    def flags_p(self):
        return self.p_column | self.p_row

    @property
    def holds_q(self):
        """All buses certified by the q form: dp/dtheta is invertible."""
        return bool(np.all(self.flags_q))

    @property
    def holds_p(self):
        """All buses certified by the p form: dq/dtheta is invertible."""
        return bool(np.all(self.flags_p))


def check_thm1(v, p, q, dp_dv, dq_dv, bus_set=None, *, tie_rtol=DEFAULT_TIE_RTOL,
               scaling="column"):
    """Evaluate the per-bus angle recovery conditions.

    ``r_worst`` is the largest amount by which a Gershgorin row disc of
    ``dp/dtheta(v, q)`` reaches past the origin, taken over the buses that
    fail the q form; it is 0 when every bus passes.
    """
    v, p, q, dp_dv, dq_dv = _inputs(v, p, q, dp_dv, dq_dv, bus_set)
    qc, qr, qdef = _disc_conditions(q, v, dq_dv, tie_rtol)
    pc, pr, pdef = _disc_conditions(p, v, dp_dv, tie_rtol)
    r_worst = 0.0
    bad = ~(qc | qr)
    if bad.any():
        dp_dth, _ = _angle_blocks(v, p, q, dp_dv, dq_dv, scaling)
        A = np.abs(dp_dth)
        centre = A.diagonal()
        radius = A.sum(axis=1) - centre
        r_worst = float(max(0.0, np.max((radius - centre)[bad])))
    return Thm1Result(qc, qr, pc, pr, qdef, pdef, r_worst)


def _full_rank(M):
    s = np.linalg.svd(M, compute_uv=False)
    return bool(s.size == 0 or s[-1] > RANK_RTOL * s[0])


@dataclass
class Thm2Result:
    norms: dict
    row_pair_ok: bool | None
    col_pair_ok: bool | None
    sigma_max: float
    assumption1_ok: bool

    @property
    def holds(self):
        return bool(self.row_pair_ok or self.col_pair_ok)


def check_thm2(v, p, q, dp_dv, dq_dv, bus_set=None, *, scaling="column") -> Thm2Result:
    """Evaluate the block Gershgorin conditions with exact spectral norms.

    When the diagonal blocks are rank deficient the pairs cannot be
    evaluated: they are reported as ``None`` and ``sigma_max`` as ``inf``.
    """
    v, p, q, dp_dv, dq_dv = _inputs(v, p, q, dp_dv, dq_dv, bus_set)
    dp_dth, dq_dth = _angle_blocks(v, p, q, dp_dv, dq_dv, scaling)
    ok = _full_rank(dp_dth) and _full_rank(dq_dv)
    if not ok:
        return Thm2Result({}, None, None, math.inf, False)
    A_inv_rhs = np.linalg.solve(dp_dth, np.hstack([dp_dv, dq_dth]))
    D_inv_rhs = np.linalg.solve(dq_dv, np.hstack([dq_dth, dp_dv]))
    n = v.size
    norms = {
        "inv_dp_dtheta__dp_dv": np.linalg.norm(A_inv_rhs[:, :n], 2),
        "inv_dq_dv__dq_dtheta": np.linalg.norm(D_inv_rhs[:, :n], 2),
        "inv_dp_dtheta__dq_dtheta": np.linalg.norm(A_inv_rhs[:, n:], 2),
        "inv_dq_dv__dp_dv": np.linalg.norm(D_inv_rhs[:, n:], 2),
    }
    norms = {k: float(x) for k, x in norms.items()}
    vals = list(norms.values())
    row_ok = vals[0] < 1 and vals[1] < 1
    col_ok = vals[2] < 1 and vals[3] < 1
    return Thm2Result(norms, row_ok, col_ok, max(vals), True)


def _thm2_score(res):
    if not res.assumption1_ok:
        return math.inf
    n = list(res.norms.values())
    return min(max(n[0], n[1]), max(n[2], n[3]))


def max_certified_subset(v, p, q, dp_dv, dq_dv, theorem="thm1", *,
                         tie_rtol=DEFAULT_TIE_RTOL, candidates=16, scaling="column"):
    """Greedy search for a large bus subset on which a certificate holds.

    ``theorem="thm1"`` drops the bus with the largest q-form deficit until
    every remaining bus passes. ``theorem="thm2"`` drops the bus whose
    removal lowers the better norm pair the most; with many buses only the
    ``candidates`` buses weighted most by the dominant singular vectors are
    tried. Returns ``(positions, percentage)``; positions index the input
    vectors. Greedy search is not guaranteed to find the largest subset.
    """
    v, p, q, dp_dv, dq_dv = _inputs(v, p, q, dp_dv, dq_dv, None)
    n = v.size
    keep = np.arange(n)
    while keep.size:
        if theorem == "thm1":
            res = check_thm1(v, p, q, dp_dv, dq_dv, keep, tie_rtol=tie_rtol, scaling=scaling)
            if res.holds_q:
                break
            deficit = np.where(res.flags_q, -np.inf, res.q_deficit)
            keep = np.delete(keep, int(np.argmax(deficit)))
        elif theorem == "thm2":
            res = check_thm2(v, p, q, dp_dv, dq_dv, keep, scaling=scaling)
            if res.holds:
                break
            keep = np.delete(keep, _pick_thm2_removal(v, p, q, dp_dv, dq_dv, keep,
                                                      candidates, scaling))
        else:
            raise ValueError(f"unknown theorem {theorem!r}")
    return keep, 100.0 * keep.size / n if n else 100.0


def _pick_thm2_removal(v, p, q, dp_dv, dq_dv, keep, candidates, scaling):
    m = keep.size
    if m <= candidates:
        trial = range(m)
    else:
        vs, ps, qs = v[keep], p[keep], q[keep]
        ix = np.ix_(keep, keep)
        a, c = _angle_blocks(vs, ps, qs, dp_dv[ix], dq_dv[ix], scaling)
        weight = np.zeros(m)
        for lhs, rhs in ((a, dp_dv[ix]), (dq_dv[ix], c), (a, c), (dq_dv[ix], dp_dv[ix])):
            try:
                S = np.linalg.solve(lhs, rhs)
            except np.linalg.LinAlgError:
                continue
            U, _, Vt = np.linalg.svd(S)
            weight += np.abs(U[:, 0]) + np.abs(Vt[0])
        trial = np.argsort(-weight)[:candidates]
    best, best_j = math.inf, 0
    for j in trial:
        sub = np.delete(keep, j)
        score = _thm2_score(check_thm2(v, p, q, dp_dv, dq_dv, sub, scaling=scaling))
        if score < best:
            best, best_j = score, int(j)
    return best_j


@dataclass
class CertificateReport:
    case: str
    n_pq: int
    bus_ids: list
    bus_flags_thm1_q: list
    bus_flags_thm1_p: list
    pct_thm1: float
    pct_thm2: float
    r_worst: float
    sigma_max: float
    assumption1_ok: bool
    thm2_row_pair_ok: bool | None
    thm2_col_pair_ok: bool | None
    thm2_norms: dict = field(default_factory=dict)
    subset_thm1: list = field(default_factory=list)
    subset_thm2: list = field(default_factory=list)
    scaling: str = "column"

    @property
    def thm1_violations(self):
        return self.n_pq - int(sum(self.bus_flags_thm1_q))

    def summary(self):
        lines = [f"{self.case}: {self.n_pq} PQ buses"]
        lines.append(f"  angle certificate (q form): {self.pct_thm1:.2f}% of buses certified")
        if self.thm1_violations:
            lines.append(f"  r_worst = {self.r_worst:.3g}  (uncertified buses are inconclusive, "
                         "not proven singular)")
        lines.append(f"  Jacobian certificate: {self.pct_thm2:.2f}%, sigma_max = {self.sigma_max:.3f}")
        return "\n".join(lines)

    def to_dict(self):
        d = asdict(self)
        for k in ("r_worst", "sigma_max"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), default=_jsonable, **kwargs)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def certify(v, p, q, dp_dv, dq_dv, *, bus_ids=None, case="", tie_rtol=DEFAULT_TIE_RTOL,
            scaling="column"):
    """Both certificates over the given buses plus greedy certified subsets."""
    v, p, q, dp_dv, dq_dv = _inputs(v, p, q, dp_dv, dq_dv, None)
    n = v.size
    ids = list(range(n)) if bus_ids is None else [int(b) for b in bus_ids]
    t1 = check_thm1(v, p, q, dp_dv, dq_dv, tie_rtol=tie_rtol, scaling=scaling)
    t2 = check_thm2(v, p, q, dp_dv, dq_dv, scaling=scaling)
    s1, pct1 = max_certified_subset(v, p, q, dp_dv, dq_dv, "thm1", tie_rtol=tie_rtol,
                                    scaling=scaling)
    s2, pct2 = (np.arange(n), 100.0) if t2.holds else max_certified_subset(
        v, p, q, dp_dv, dq_dv, "thm2", scaling=scaling)
    return CertificateReport(
        case=case,
        n_pq=n,
        bus_ids=ids,
        bus_flags_thm1_q=[bool(x) for x in t1.flags_q],
        bus_flags_thm1_p=[bool(x) for x in t1.flags_p],
        pct_thm1=pct1,
        pct_thm2=pct2,
        r_worst=t1.r_worst,
        sigma_max=t2.sigma_max,
        assumption1_ok=t2.assumption1_ok,
        thm2_row_pair_ok=t2.row_pair_ok,
        thm2_col_pair_ok=t2.col_pair_ok,
        thm2_norms=t2.norms,
        subset_thm1=[ids[i] for i in s1],
        subset_thm2=[ids[i] for i in s2],
        scaling=scaling,
    )


def certify_network(network, solution=None, **kwargs):
    """Solve the case (unless a solution is given) and certify its PQ buses."""
    from .jacobian import classical_blocks
    from .powerflow import nr_solve

    if solution is None:
        solution = nr_solve(network)
    pq = network.pq_indices
    blocks = classical_blocks(network, solution.state, pq)
    kwargs.setdefault("case", network.name)
    return certify(solution.state.v[pq], solution.injections.p[pq], solution.injections.q[pq],
                   blocks.dp_dv, blocks.dq_dv, bus_ids=network.bus_ids[pq], **kwargs)


def format_table(reports):
    """Plain-text table: case, #PQ, % angle cert., r_worst, % Jacobian cert., sigma_max."""
    head = f"{'Case':<18}{'# PQ':>6}{'% Thm1':>10}{'r_worst':>12}{'% Thm2':>10}{'sigma_max':>11}"
    rows = [head, "-" * len(head)]
    for r in reports:
        rw = f"{r.r_worst:.2g}" if r.thm1_violations else "-"
        rows.append(f"{r.case:<18}{r.n_pq:>6}{r.pct_thm1:>9.2f}%{rw:>12}"
                    f"{r.pct_thm2:>9.2f}%{r.sigma_max:>11.3f}")
    return "\n".join(rows)
