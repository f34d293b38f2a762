import numpy as np
import pytest

from kerrconv.converter import detection_basis, pegg_barnett_state
from kerrconv.engineering import EngineeringConfig, build_target_operator, decompose_target, run_engineering
from kerrconv.fock import fidelity, trace_distance
from kerrconv.telemanip import (
    ClassicalMessage,
    bob_marginal,
    dephase,
    engineering_reduced_closed_form,
    reduced_states_engineering,
    reduced_states_telemanip,
    run_telemanip_conditional,
    run_telemanip_unconditional,
    telemanip_operator,
    telemanip_outcomes,
    telemanip_reduced_closed_form,
)

from conftest import ginibre, random_mixed, random_pure, random_unitary


def _random_cfg(N, rng, Phi=0.0):
    return EngineeringConfig.from_parts(
        N, random_unitary(N + 1, rng), random_unitary(N + 1, rng), rng.random(N + 1) * 0.9 + 0.1, Phi=Phi
    )


def test_message_validation():
    with pytest.raises(ValueError):
        ClassicalMessage("outcome-report", channel=1)
    with pytest.raises(ValueError):
        ClassicalMessage("trigger", channel=1, phase=0.0)
    with pytest.raises(ValueError):
        ClassicalMessage("hello")
    msg = ClassicalMessage("outcome-report", 2, 0.5, timestamp=3)
    assert msg.to_dict()["channel"] == 2


@pytest.mark.parametrize("N", range(1, 5))
def test_operator_is_conjugated_target(N, rng):
    cfg = _random_cfg(N, rng, Phi=0.3)
    A = build_target_operator(cfg)
    Y = telemanip_operator(cfg, 0, 0)
    assert np.abs(Y - A.conj() / (N + 1)).max() < 1e-12


@pytest.mark.parametrize("N", range(0, 4))
def test_completeness(N, rng):
    cfg = _random_cfg(N, rng, Phi=0.7)
    S = sum(Y.conj().T @ Y for _, Y in telemanip_outcomes(cfg))
    assert np.abs(S - np.eye(N + 1)).max() < 1e-10


@pytest.mark.parametrize("N", range(1, 5))
def test_bare_teleportation(N, rng):
    cfg = EngineeringConfig.from_parts(N)
    for _ in range(10):
        rho = random_pure(N + 1, rng)
        rec = run_telemanip_conditional(rho, cfg)
        assert fidelity(rec.post_state, rho) == pytest.approx(1, abs=1e-12)
        assert rec.probability == pytest.approx(1 / (N + 1) ** 2, abs=1e-12)


def test_conditional_matches_engineering_with_conjugate(rng):
    N = 3
    A = ginibre(N + 1, rng)
    rho = random_mixed(N + 1, rng)
    tel = run_telemanip_conditional(rho, decompose_target(A)[0])
    eng = run_engineering(rho, decompose_target(A.conj())[0])
    assert trace_distance(tel.post_state, eng.post_state) < 1e-10
    assert tel.probability / eng.probability == pytest.approx(1, abs=1e-10)


def test_real_target_same_as_engineering(rng):
    A = rng.normal(size=(3, 3))
    cfg = decompose_target(A)[0]
    rho = random_mixed(3, rng)
    assert trace_distance(run_telemanip_conditional(rho, cfg).post_state,
                          run_engineering(rho, cfg).post_state) < 1e-10


def test_shutter_and_transcript(rng):
    cfg = _random_cfg(2, rng)
    rho = random_mixed(3, rng)
    rec = run_telemanip_conditional(rho, cfg)
    assert rec.extra["shutter_open"]
    assert [m.kind for m in rec.extra["transcript"]] == ["trigger"]
    closed = rec.extra["closed_shutter_state"].matrix
    assert np.abs(closed - np.eye(3) / 3).max() < 1e-12


@pytest.mark.parametrize("N", range(1, 4))
def test_bob_marginal_is_white_noise(N, rng):
    for _ in range(5):
        cfg = _random_cfg(N, rng, Phi=rng.random())
        m = bob_marginal(random_mixed(N + 1, rng), cfg)
        assert trace_distance(m, np.eye(N + 1) / (N + 1)) < 1e-12


def test_unconditional_bare_protocol(rng):
    N = 2
    rho = random_pure(N + 1, rng)
    rec = run_telemanip_unconditional(rho, EngineeringConfig.from_parts(N))
    assert rec.probability == pytest.approx(1, abs=1e-12)
    assert len(rec.branches) == (N + 1) ** 2
    for b in rec.branches:
        assert fidelity(b.post_state, rho) == pytest.approx(1, abs=1e-12)
    assert [m.kind for m in rec.extra["transcript"]] == ["outcome-report"] * (N + 1) ** 2


def test_unconditional_commuting_target(rng):
    N = 2
    rho = random_mixed(N + 1, rng)
    rec = run_telemanip_unconditional(rho, EngineeringConfig.from_parts(N, Tk=[0.5] * 3))
    states = [b.post_state.matrix for b in rec.branches]
    assert all(np.abs(s - states[0]).max() < 1e-12 for s in states)


def test_unconditional_non_commuting_branches_differ(rng):
    N = 2
    rho = random_mixed(N + 1, rng)
    rec = run_telemanip_unconditional(rho, EngineeringConfig.from_parts(N, U=random_unitary(3, rng)))
    states = [b.post_state.matrix for b in rec.branches]
    assert max(np.abs(s - states[0]).max() for s in states) > 1e-3
    mix = sum(b.probability * b.post_state.matrix for b in rec.branches)
    assert np.abs(mix - rec.post_state.matrix).max() < 1e-12


def test_dephasing_map(rng):
    rho = random_mixed(4, rng)
    d = dephase(rho)
    assert np.allclose(dephase(d), d)
    assert np.trace(d) == pytest.approx(1)


@pytest.mark.parametrize("N", range(1, 4))
def test_engineering_reduced_states(N, rng):
    cfg = _random_cfg(N, rng, Phi=0.4)
    rho = random_mixed(N + 1, rng)
    red, red_p = reduced_states_engineering(rho, cfg)
    c_red, c_red_p, _ = engineering_reduced_closed_form(rho, cfg)
    assert np.abs(red.matrix - dephase(rho)).max() < 1e-12
    assert np.abs(red.matrix - c_red).max() < 1e-12
    assert np.abs(red_p.matrix - c_red_p).max() < 1e-12


def test_clone_for_fock_diagonal_input():
    rho = np.diag([0.5, 0.3, 0.2]).astype(complex)
    red, red_p = reduced_states_engineering(rho, EngineeringConfig.from_parts(2))
    assert np.abs(red.matrix - rho).max() < 1e-15
    assert np.abs(red_p.matrix - rho).max() < 1e-15


@pytest.mark.parametrize("N", range(1, 4))
def test_telemanip_reduced_states(N, rng):
    cfg = _random_cfg(N, rng, Phi=0.9)
    rho = random_mixed(N + 1, rng)
    red, red_p = reduced_states_telemanip(rho, cfg)
    c_red, _ = telemanip_reduced_closed_form(rho, cfg)
    assert np.abs(red.matrix - c_red).max() < 1e-12
    assert np.abs(red_p.matrix - np.eye(N + 1) / (N + 1)).max() < 1e-12


def test_telemanip_reduced_unit_transmittance_is_dephasing(rng):
    cfg = EngineeringConfig.from_parts(2, U=random_unitary(3, rng), U_R=random_unitary(3, rng), Phi=0.3)
    rho = random_mixed(3, rng)
    red, _ = reduced_states_telemanip(rho, cfg)
    assert np.abs(red.matrix - dephase(rho)).max() < 1e-12


def test_telemanip_reduced_undisturbed_passage(rng):
    N, Phi = 2, 0.6
    # R(Phi) = |0_P><0_P| means R = |Phi = -0.6><Phi = -0.6|
    v = pegg_barnett_state(N, -Phi)
    UR = detection_basis(v).conj().T
    cfg = EngineeringConfig.from_parts(N, U_R=UR, Tk=[1, 0, 0], Phi=Phi)
    rho = random_mixed(N + 1, rng)
    red, _ = reduced_states_telemanip(rho, cfg)
    assert np.abs(red.matrix - rho).max() < 1e-12
