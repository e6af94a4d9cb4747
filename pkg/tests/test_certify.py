import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridphase.certify import (
    certify,
    certify_network,
    check_thm1,
    check_thm2,
    format_table,
    max_certified_subset,
)
from gridphase.jacobian import classical_blocks

from oracles import solved


def _pq(case):
    net, sol = solved(case)
    pq = net.pq_indices
    b = classical_blocks(net, sol.state, pq)
    return sol.state.v[pq], sol.injections.p[pq], sol.injections.q[pq], b.dp_dv, b.dq_dv


def test_diagonal_blocks_with_zero_q_pass_everywhere():
    n = 5
    v = np.linspace(0.95, 1.05, n)
    res = check_thm1(v, np.zeros(n), np.zeros(n), np.eye(n), np.diag(np.arange(1.0, n + 1)),
                     tie_rtol=0.0)
    assert res.holds_q and all(res.flags_q)
    assert res.r_worst == 0.0


def test_identity_blocks_certify_with_zero_norms():
    n = 4
    res = check_thm2(np.ones(n), np.zeros(n), np.zeros(n), np.zeros((n, n)), np.eye(n))
    assert res.assumption1_ok and res.holds
    assert res.sigma_max == 0.0
    assert all(x == 0.0 for x in res.norms.values())


def test_assumption_failure_is_not_an_exception():
    n = 3
    res = check_thm2(np.ones(n), np.ones(n), np.ones(n), np.eye(n), np.zeros((n, n)))
    assert not res.assumption1_ok and not res.holds
    assert res.row_pair_ok is None and res.col_pair_ok is None
    assert res.sigma_max == np.inf


@pytest.mark.parametrize("case,target", [("case14", 0.876), ("case118", 0.473)])
def test_sigma_max_printed_form(case, target):
    res = check_thm2(*_pq(case), scaling="row")
    assert res.holds
    assert res.sigma_max == pytest.approx(target, abs=0.02)


def test_case14_fully_certified():
    net, sol = solved("case14")
    rep = certify_network(net, sol)
    assert rep.n_pq == 9 and rep.pct_thm1 == 100.0 and rep.pct_thm2 == 100.0
    assert rep.thm1_violations == 0
    assert "-" in format_table([rep]).splitlines()[-1]


def test_raw_comparison_fails_only_by_rounding():
    # the strict comparison flags load buses whose condition is an exact tie
    res = check_thm1(*_pq("case_ieee30"), tie_rtol=0.0)
    assert not res.holds_q
    assert 0.0 < res.r_worst < 1e-12
    assert check_thm1(*_pq("case_ieee30")).holds_q


def test_ieee30_jacobian_certificate_subset():
    keep, pct = max_certified_subset(*_pq("case_ieee30"), theorem="thm2")
    assert keep.size == 23
    assert pct == pytest.approx(95.83, abs=0.005)


def test_subset_of_certified_set_is_everything():
    data = _pq("case24_ieee_rts")
    keep, pct = max_certified_subset(*data)
    assert keep.tolist() == list(range(13)) and pct == 100.0
    with pytest.raises(ValueError):
        max_certified_subset(*data, theorem="thm3")


def test_bus_set_restricts_the_check():
    v, p, q, dp, dq = _pq("case14")
    res = check_thm1(v, p, q, dp, dq, bus_set=[0, 2, 4])
    assert len(res.flags_q) == 3


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        check_thm1(np.ones(3), np.ones(3), np.ones(3), np.eye(3), np.eye(2))


def test_report_json_round_trip():
    rep = certify(*_pq("case14"), case="case14")
    d = json.loads(rep.to_json())
    assert d["case"] == "case14" and d["n_pq"] == 9
    assert d["bus_ids"] == list(range(9))
    assert "9 PQ buses" in rep.summary()


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_certificates_are_sound(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.9, 1.1, n)
    p = rng.normal(0, 0.5, n)
    q = rng.normal(0, 1.0, n)
    dq = rng.normal(size=(n, n)) * rng.uniform(0, 1)
    dq[np.diag_indices(n)] += rng.uniform(-3, 3, n)
    dp = rng.normal(size=(n, n)) * rng.uniform(0, 0.3)
    t1 = check_thm1(v, p, q, dp, dq, tie_rtol=0.0)
    a = dq * v[None, :] - 2 * np.diag(q)
    if t1.holds_q:
        s = np.linalg.svd(a, compute_uv=False)
        assert s[-1] > 1e-12 * s[0]
    t2 = check_thm2(v, p, q, dp, dq)
    if t2.holds:
        c = -dp * v[None, :] + 2 * np.diag(p)
        s = np.linalg.svd(np.block([[a, dp], [c, dq]]), compute_uv=False)
        assert s[-1] > 1e-12 * s[0]
