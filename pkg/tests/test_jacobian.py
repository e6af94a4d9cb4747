import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridphase.jacobian import (
    classical_blocks,
    closed_form_blocks,
    diagonal_shortcuts,
    phaseless_blocks,
    relative_frobenius,
)
from gridphase.netmodel import available_cases, load_case, parse_case
from gridphase.powerflow import injections
from gridphase.state import StateVector

from oracles import fd_jacobian, solved, three_phase_fixture, two_bus_text

CASES = available_cases()


def test_blocks_against_finite_differences_case14():
    net, sol = solved("case14")
    jb = classical_blocks(net, sol.state)
    fd = fd_jacobian(net.Y.Y, sol.state.theta, sol.state.v)
    for name, ref in fd.items():
        J = getattr(jb, name)
        assert np.abs(J - ref).max() <= 1e-5 * np.abs(J).max(), name


def test_reactive_two_bus_flat_pattern():
    net = parse_case(two_bus_text())
    jb = classical_blocks(net, StateVector(np.zeros(2), np.ones(2)))
    np.testing.assert_allclose(jb.dp_dtheta, [[10, -10], [-10, 10]])
    np.testing.assert_allclose(jb.dq_dv, [[10, -10], [-10, 10]])
    np.testing.assert_allclose(jb.dp_dv, 0, atol=1e-15)


@pytest.mark.parametrize("case", CASES)
def test_diagonal_shortcuts(case):
    net, sol = solved(case)
    jb = classical_blocks(net, sol.state)
    short = diagonal_shortcuts(net, sol.state, sol.injections.p, sol.injections.q)
    for block, diag in zip(("dp_dtheta", "dp_dv", "dq_dtheta", "dq_dv"), short):
        full = getattr(jb, block).diagonal()
        np.testing.assert_allclose(full, diag, atol=1e-12 * max(1, np.abs(full).max()))


def test_phaseless_matches_classical_rts():
    net, sol = solved("case_RTS_GMLC")
    jb = classical_blocks(net, sol.state)
    a, c = phaseless_blocks(sol.state.v, sol.injections.p, sol.injections.q, jb.dp_dv, jb.dq_dv)
    assert relative_frobenius(a, jb.dp_dtheta) <= 1e-12
    assert relative_frobenius(c, jb.dq_dtheta) <= 1e-12


def test_phaseless_unit_voltage_zero_q():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(4, 4))
    a, _ = phaseless_blocks(np.ones(4), rng.normal(size=4), np.zeros(4), rng.normal(size=(4, 4)), M)
    np.testing.assert_array_equal(a, M)


def test_phaseless_rejects_bad_shapes():
    with pytest.raises(ValueError):
        phaseless_blocks(np.ones(3), np.ones(3), np.ones(2), np.eye(3), np.eye(3))
    with pytest.raises(ValueError):
        phaseless_blocks(np.ones(3), np.ones(3), np.ones(3), np.eye(2), np.eye(3))


def test_closed_form_real_imag_parts_case30():
    net, sol = solved("case_ieee30")
    cs = closed_form_blocks(net.Y, sol.state)
    jb = classical_blocks(net, sol.state)
    assert relative_frobenius(cs.ds_dtheta.real, jb.dp_dtheta) <= 1e-12
    assert relative_frobenius(cs.ds_dv.imag, jb.dq_dv) <= 1e-12


def test_closed_form_resistive_flat():
    G = np.array([[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]])
    cs = closed_form_blocks(G + 0j, StateVector(np.zeros(3), np.ones(3)))
    np.testing.assert_allclose(cs.ds_dv.imag, 0, atol=1e-15)


def test_closed_form_zero_voltage_rejected():
    with pytest.raises(ValueError):
        closed_form_blocks(np.eye(2, dtype=complex), np.array([1.0, 0.0], dtype=complex))


def test_multiphase_symmetry():
    Y, vbar = three_phase_fixture()
    blocks = closed_form_blocks(Y, vbar).blocks()
    s = vbar * np.conj(Y @ vbar)
    a, c = phaseless_blocks(np.abs(vbar), s.real, s.imag, blocks.dp_dv, blocks.dq_dv)
    assert relative_frobenius(a, blocks.dp_dtheta) <= 1e-10
    assert relative_frobenius(c, blocks.dq_dtheta) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_symmetry_random_compound_admittance(n, seed):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    vbar = rng.uniform(0.5, 1.5, n) * np.exp(1j * rng.uniform(-np.pi, np.pi, n))
    blocks = closed_form_blocks(Y, vbar).blocks()
    s = vbar * np.conj(Y @ vbar)
    a, c = phaseless_blocks(np.abs(vbar), s.real, s.imag, blocks.dp_dv, blocks.dq_dv)
    scale = max(np.abs(blocks.full()).max(), 1.0)
    assert np.abs(a - blocks.dp_dtheta).max() <= 1e-10 * scale
    assert np.abs(c - blocks.dq_dtheta).max() <= 1e-10 * scale


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["case14", "case24_ieee_rts", "case_ieee30"]), st.integers(0, 2**32 - 1))
def test_entrywise_identity_at_random_states(case, seed):
    net = load_case(case)
    rng = np.random.default_rng(seed)
    st_ = StateVector(rng.uniform(-0.4, 0.4, net.n), rng.uniform(0.9, 1.1, net.n))
    jb = classical_blocks(net, st_)
    inj = injections(net, st_)
    a, c = phaseless_blocks(st_.v, inj.p, inj.q, jb.dp_dv, jb.dq_dv)
    scale = np.abs(jb.full()).max()
    assert np.abs(a - jb.dp_dtheta).max() <= 1e-10 * scale
    assert np.abs(c - jb.dq_dtheta).max() <= 1e-10 * scale


def test_subset_and_csv(tmp_path):
    net, sol = solved("case14")
    jb = classical_blocks(net, sol.state)
    pq = net.pq_indices
    sub = classical_blocks(net, sol.state, pq)
    np.testing.assert_array_equal(sub.dq_dv, jb.dq_dv[np.ix_(pq, pq)])
    np.testing.assert_array_equal(jb.subset(pq).dp_dtheta, sub.dp_dtheta)
    paths = sub.to_csv(tmp_path, net.bus_ids[pq])
    assert len(paths) == 4 and all(p.exists() for p in paths)
