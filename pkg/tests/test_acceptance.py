"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines are printed in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import fd_jacobian, solved, three_phase_fixture  # noqa: E402

from gridphase.certify import certify_network, check_thm1, check_thm2  # noqa: E402
from gridphase.jacobian import (  # noqa: E402
    classical_blocks,
    closed_form_blocks,
    phaseless_blocks,
    relative_frobenius,
)
from gridphase.netmodel import available_cases, load_case  # noqa: E402
from gridphase.powerflow import injections, nr_solve  # noqa: E402
from gridphase.retrieval import (  # noqa: E402
    MeasurementSnapshot,
    recover_currents,
    retrieve_direct_p,
    retrieve_direct_q,
    retrieve_ls,
)
from gridphase.simkit import (  # noqa: E402
    NoiseSpec,
    TimeSeriesScenario,
    baseline_known_topology,
    run_noise_sweep,
    run_retrieval_experiment,
    run_sequential_retrieval,
    simulate_snapshot,
    summarize_sweep,
    synthetic_load_series,
)
from gridphase.state import StateVector  # noqa: E402

SHIPPED = available_cases()
RESULTS = {}


def record(number, title, ok, detail):
    RESULTS[number] = (title, bool(ok), detail)
    return ok


def report_line(n):
    title, ok, detail = RESULTS[n]
    return f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title} -- {detail}"


def report_lines():
    return [report_line(n) for n in sorted(RESULTS)]


def _pq_data(case):
    net, sol = solved(case)
    pq = net.pq_indices
    jb = classical_blocks(net, sol.state, pq)
    return net, sol, jb, sol.state.v[pq], sol.injections.p[pq], sol.injections.q[pq]


# ---------------------------------------------------------------- criteria


def criterion_01():
    worst = 0.0
    for case in SHIPPED:
        net, sol = solved(case)
        jb = classical_blocks(net, sol.state)
        a, c = phaseless_blocks(sol.state.v, sol.injections.p, sol.injections.q, jb.dp_dv, jb.dq_dv)
        worst = max(worst, relative_frobenius(a, jb.dp_dtheta), relative_frobenius(c, jb.dq_dtheta))
    return record(1, "phaseless angle blocks equal classical blocks", worst <= 1e-12,
                  f"max rel. Frobenius error {worst:.2e} over {len(SHIPPED)} cases (tol 1e-12)")


def criterion_02():
    net = load_case("case_RTS_GMLC")
    # fixed iteration count: tolerance 0 never triggers the early stop
    a = nr_solve(net, tolerance=0.0, max_iter=6, record=True)
    b = nr_solve(net, tolerance=0.0, max_iter=6, record=True, jacobian_mode="phaseless")

    def rel(x, y):
        nx = np.linalg.norm(x)
        return np.linalg.norm(x - y) / nx if nx > 0 else np.linalg.norm(y)

    worst = 0.0
    for ra, rb in zip(a.history, b.history):
        ell = []
        for r in (ra, rb):
            st = StateVector(r.theta, r.v)
            inj = injections(net, st)
            ell.append(np.conj(inj.s / st.phasors))
        worst = max(worst, rel(ra.theta, rb.theta), rel(ell[0], ell[1]),
                    rel(ra.dp_dtheta, rb.dp_dtheta), rel(ra.dq_dtheta, rb.dq_dtheta))
    n_it = min(len(a.history), len(b.history))
    ok = n_it >= 5 and worst <= 1e-12
    return record(2, "phaseless vs classical Newton iterates", ok,
                  f"RTS_GMLC, {n_it} iterations, max rel. error {worst:.2e} (tol 1e-12)")


def criterion_03():
    worst = 0.0
    for case in ("case14", "case30"):
        net, sol = solved(case)
        jb = classical_blocks(net, sol.state)
        fd = fd_jacobian(net.Y.Y, sol.state.theta, sol.state.v, h=1e-6)
        for name, ref in fd.items():
            J = getattr(jb, name)
            worst = max(worst, np.max(np.abs(J - ref)) / np.max(np.abs(J)))
    return record(3, "Jacobian blocks vs central finite differences", worst <= 1e-5,
                  f"case14+case30, max error / max |entry| = {worst:.2e} (tol 1e-5)")


PER_BUS_REFERENCE = [  # case, #PQ, percent, violating buses
    ("case14", 9, 100.0, 0),
    ("case24_ieee_rts", 13, 100.0, 0),
    ("case_ieee30", 24, 95.83, 1),
    ("case118", 64, 100.0, 0),
]


def criterion_04():
    rows, ok = [], True
    rw30 = None
    for case, npq, pct, nviol in PER_BUS_REFERENCE:
        net, sol = solved(case)
        rep = certify_network(net, sol)
        hit = rep.n_pq == npq and round(rep.pct_thm1, 2) == pct and rep.thm1_violations == nviol
        ok &= hit
        rows.append(f"{case} {rep.pct_thm1:.2f}% of {rep.n_pq} ({'ok' if hit else f'want {pct}%'})")
        if case == "case_ieee30":
            rw30 = rep.r_worst
    rw_ok = rw30 is not None and 0.0 <= rw30 <= 1e-10
    ok &= rw_ok
    rows.append(f"ieee30 r_worst {rw30:.1e}")
    return record(4, "per-bus angle certificate reference rows", ok, "; ".join(rows))


SIGMA_REFERENCE = [  # case, sigma_max, tolerance
    ("case14", 0.876, 0.02),
    ("case24_ieee_rts", 0.401, 0.02),
    ("case_ieee30", 1.437, 0.05),
    ("case118", 0.473, 0.02),
]
SIGMA_EXTENDED = [("case_RTS_GMLC", 0.444, 0.02), ("case89pegase", 0.954, 0.02),
                     ("case_ACTIVSg200", 0.698, 0.02), ("case_ACTIVSg500", 1.090, 0.02)]


def criterion_05():
    ok, rows = True, []
    for case, target, tol in SIGMA_REFERENCE + SIGMA_EXTENDED:
        _, _, jb, v, p, q = _pq_data(case)
        printed = check_thm2(v, p, q, jb.dp_dv, jb.dq_dv, scaling="row")
        exact = check_thm2(v, p, q, jb.dp_dv, jb.dq_dv)
        hit = abs(printed.sigma_max - target) <= tol
        ok &= hit and printed.assumption1_ok and exact.assumption1_ok
        rows.append(f"{case} {printed.sigma_max:.3f} [exact form {exact.sigma_max:.3f}] vs {target}")
    a1 = True
    for case in SHIPPED:
        _, _, jb, v, p, q = _pq_data(case)
        a1 &= check_thm2(v, p, q, jb.dp_dv, jb.dq_dv).assumption1_ok
    ok &= a1
    rows.append(f"angle and magnitude blocks full rank on all {len(SHIPPED)} cases: {a1}")
    return record(5, "Jacobian certificate sigma_max reference values (row-scaled form)", ok, "; ".join(rows))


def criterion_06():
    worst = 0.0
    for case in SHIPPED:
        net, sol = solved(case)
        exp = run_retrieval_experiment(net, sol, NoiseSpec(0.0, 0.0, 0))
        worst = max(worst, float(exp.abs_error.max()))
    return record(6, "noiseless retrieval is exact", worst <= 1e-6,
                  f"max abs angle error {worst:.2e} rad over {len(SHIPPED)} cases (tol 1e-6)")


def criterion_07():
    sigmas = (0.01, 0.05, 0.1)
    ok, rows = True, []
    for case in ("case_RTS_GMLC", "case24_ieee_rts"):
        net, sol = solved(case)
        children = np.random.SeedSequence(2024).spawn(20 * len(sigmas))
        medians = []
        for j, s in enumerate(sigmas):
            errs = []
            for b in range(20):
                seed = int(children[j * 20 + b].generate_state(1)[0])
                errs.append(run_retrieval_experiment(net, sol, NoiseSpec(s, 0.0, seed)).abs_error)
            medians.append(float(np.median(np.concatenate(errs))))
        mono = all(x <= y for x, y in zip(medians, medians[1:]))
        ok &= mono and medians[0] <= 0.01
        rows.append(f"{case} medians " + ", ".join(f"{m:.1e}" for m in medians))
    return record(7, "noise robustness (monotone, <=0.01 rad at sigma 0.01)", ok, "; ".join(rows))


def criterion_08():
    ok, rows = True, []
    for case in SHIPPED:
        net, sol, jb, v, p, q = _pq_data(case)
        cert = check_thm1(v, p, q, jb.dp_dv, jb.dq_dv)
        if not (cert.holds_q and cert.holds_p):
            continue
        sim = simulate_snapshot(net, sol, NoiseSpec())
        ls = retrieve_ls(sim.snapshot, jb.dp_dv, jb.dq_dv, sim.dp_obs, sim.dq_obs, sim.dv_obs)
        dp = retrieve_direct_p(ls.dp_dtheta, sim.dp_obs, sim.dv_obs, jb.dp_dv)
        dq = retrieve_direct_q(ls.dq_dtheta, sim.dq_obs, sim.dv_obs, jb.dq_dv)
        gap = max(np.abs(dp - ls.delta_theta).max(), np.abs(dq - ls.delta_theta).max())
        ok &= gap <= 1e-8
        rows.append(f"{case} {gap:.1e}")
    ok &= bool(rows)
    return record(8, "direct p/q recovery equals least squares where both certified", ok,
                  "; ".join(rows) + " (tol 1e-8)")


def _random_operating_points(net, count, seed):
    rng = np.random.default_rng(seed)
    p0 = np.array([b.p_demand for b in net.buses])
    q0 = np.array([b.q_demand for b in net.buses])
    start = StateVector(*net.case_state())
    got = tries = 0
    while got < count and tries < 5 * count:
        tries += 1
        f = rng.uniform(0.5, 1.5, net.n) * rng.uniform(0.6, 1.4)
        sol = nr_solve(net, start, p_spec=net.p_scheduled + p0 * (1 - f),
                       q_spec=net.q_scheduled + q0 * (1 - f))
        if sol.converged:
            got += 1
            yield sol


def criterion_09():
    ok, rows = True, []
    for case in SHIPPED:
        net = load_case(case)
        pq = net.pq_indices
        n1 = n2 = bad = points = 0
        for sol in _random_operating_points(net, 100, seed=11):
            points += 1
            jb = classical_blocks(net, sol.state, pq)
            v, p, q = sol.state.v[pq], sol.injections.p[pq], sol.injections.q[pq]
            if check_thm1(v, p, q, jb.dp_dv, jb.dq_dv).holds_q:
                n1 += 1
                s = np.linalg.svd(jb.dp_dtheta, compute_uv=False)
                bad += s[-1] <= 1e-10 * s[0]
            if check_thm2(v, p, q, jb.dp_dv, jb.dq_dv).holds:
                n2 += 1
                s = np.linalg.svd(jb.full(), compute_uv=False)
                bad += s[-1] <= 1e-10 * s[0]
        ok &= bad == 0 and points == 100
        rows.append(f"{case} {points} pts, T1 {n1}, T2 {n2}, bad {bad}")
    return record(9, "certificate soundness on random operating points", ok, "; ".join(rows))


def criterion_10():
    recon = match = 0.0
    for case in SHIPPED:
        net, sol = solved(case)
        pq = net.pq_indices
        snap = MeasurementSnapshot(sol.state.v[pq], sol.injections.p[pq], sol.injections.q[pq])
        ell = recover_currents(snap, sol.state.theta[pq]).ell
        vbar = snap.v * np.exp(1j * sol.state.theta[pq])
        recon = max(recon, np.abs(vbar * np.conj(ell) - snap.s).max())
        network_side = (net.Y.Y @ sol.state.phasors)[pq]
        match = max(match, np.abs(ell - network_side).max())
    ok = recon <= 1e-12 and match <= 1e-8
    return record(10, "current recovery", ok,
                  f"|vbar*conj(l) - s| {recon:.1e} (tol 1e-12); |l - Y vbar| {match:.1e} (tol 1e-8)")


def criterion_11():
    net = load_case("case_RTS_GMLC")
    load = synthetic_load_series(net, 50, seed=5)
    clean = run_sequential_retrieval(net, TimeSeriesScenario(load))
    dirty = run_sequential_retrieval(
        net, TimeSeriesScenario(load, subsample_factor=3, delay_prob=0.1, delay_steps=1,
                                noise=NoiseSpec(0.1, 0.0, 5)))
    finite = bool(np.all(np.isfinite(dirty.theta_hat))) and math.isfinite(dirty.aggregate_relative_error())
    ok = clean.max_abs_error <= 1e-4 and finite
    return record(11, "sequential time-series retrieval", ok,
                  f"clean max error {clean.max_abs_error:.1e} rad (tol 1e-4); corrupted "
                  f"aggregate error {dirty.aggregate_relative_error():.1f}% (finite: {finite})")


def criterion_12():
    net, sol = solved("case_RTS_GMLC")
    gap = 0.0
    for s in (0.0, 0.05, 0.1):
        spec = NoiseSpec(s, 0.0, 3)
        mf = run_retrieval_experiment(net, sol, spec).theta_hat
        gap = max(gap, np.abs(mf - baseline_known_topology(net, sol, spec)).max())
    rows = run_noise_sweep(net, sol, [0.01, 0.05, 0.1, 0.2], [0.0, 0.05, 0.1], n_boot=20,
                           master_seed=12, baseline=False)
    agg = summarize_sweep(rows)
    mono = True
    for sm in (0.01, 0.05, 0.1, 0.2):
        means = [a["mean_relative_error"] for a in agg if a["sigma_meas"] == sm]
        mono &= all(x <= y for x, y in zip(means, means[1:]))
    ok = gap <= 1e-8 and mono
    return record(12, "known-topology baseline comparison", ok,
                  f"sigma_jac=0 gap {gap:.1e} (tol 1e-8); mean error non-decreasing in sigma_jac: {mono}")


def criterion_13():
    Y, vbar = three_phase_fixture()
    cs = closed_form_blocks(Y, vbar)
    blocks = cs.blocks()
    v = np.abs(vbar)
    s = vbar * np.conj(Y @ vbar)
    a, c = phaseless_blocks(v, s.real, s.imag, blocks.dp_dv, blocks.dq_dv)
    err = max(relative_frobenius(a, blocks.dp_dtheta), relative_frobenius(c, blocks.dq_dtheta))
    return record(13, "multiphase compound-admittance symmetry", err <= 1e-7,
                  f"rel. Frobenius error {err:.1e} (tol 1e-7)")


CRITERIA = [criterion_01, criterion_02, criterion_03, criterion_04, criterion_05, criterion_06,
            criterion_07, criterion_08, criterion_09, criterion_10, criterion_11, criterion_12,
            criterion_13]


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_acceptance(criterion):
    ok = criterion()
    assert ok, report_line(int(criterion.__name__[-2:]))


if __name__ == "__main__":
    for fn in CRITERIA:
        fn()
        print(report_line(int(fn.__name__[-2:])), flush=True)
    sys.exit(0 if all(ok for _, ok, _ in RESULTS.values()) else 1)
