import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import kerrconv.converter as conv
from kerrconv.converter import (
    ConverterConfig,
    a2b_operator,
    apply_kraus,
    a2b_outcomes,
    b2a_operator,
    b2a_outcomes,
    build_M,
    build_Vb,
    canonical_kappas,
    canonical_W,
    convert_a_to_b,
    convert_b_to_a,
    convert_unconditional_a_to_b,
    convert_unconditional_b_to_a,
    cyclic_shift,
    detection_basis,
    is_cyclic,
    matched_transmittances,
    pegg_barnett_state,
    phase_basis,
)
from kerrconv.fock import (
    ConfigurationError,
    DensityOperator,
    SpaceMismatchError,
    build_space,
    fidelity,
    source_space,
    target_space,
)

from conftest import random_mixed, random_pure

S = 1 / np.sqrt(2)


def test_canonical_parameters_n1():
    # frozen: kappa = (0, -pi), W = Hadamard
    assert np.allclose(canonical_kappas(1), [0, -np.pi])
    assert np.allclose(canonical_W(1), [[S, S], [S, -S]])
    assert np.allclose(build_Vb(ConverterConfig.canonical(1)), [[0, 1], [1, 0]])


@pytest.mark.parametrize("N", range(6))
def test_canonical_device_is_cyclic_shift(N):
    cfg = ConverterConfig.canonical(N)
    assert is_cyclic(cfg)
    V = build_Vb(cfg)
    for k in range(N + 1):
        e = np.zeros(N + 1)
        e[k] = 1
        assert np.allclose(V @ e, np.roll(e, 1))


def test_non_canonical_kerr_is_not_cyclic():
    cfg = ConverterConfig.canonical(2, kappas=[0.1, 0.2, 0.3])
    assert not is_cyclic(cfg)
    with pytest.raises(ConfigurationError):
        convert_unconditional_a_to_b(np.eye(3) / 3, cfg)


def test_build_M_block_structure():
    N = 2
    cfg = ConverterConfig.canonical(N)
    M = build_M(cfg)
    V = cyclic_shift(N)
    # a-index fastest: |n>_a |phi_l> sits at n + (N+1) l
    for n in range(N + 1):
        idx = np.arange(N + 1) * (N + 1) + n
        assert np.allclose(M[np.ix_(idx, idx)], np.linalg.matrix_power(V, n))
    assert np.allclose(M @ M.conj().T, np.eye(9))


def test_phase_basis_orthonormal():
    for N in range(5):
        B = phase_basis(N, 0.37)
        assert np.allclose(B.conj().T @ B, np.eye(N + 1))
        assert np.allclose(B[:, 0], pegg_barnett_state(N, 0.37))


def test_detection_basis_completion(rng):
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    Q = detection_basis(psi)
    assert np.allclose(Q.conj().T @ Q, np.eye(4))
    assert np.allclose(Q[:, 0], psi / np.linalg.norm(psi))


# frozen: N=1 Kraus operators by hand, Y_a2b = P / sqrt2 and Y_b2a = P^dag / sqrt2
def test_kraus_operators_n1():
    cfg = ConverterConfig.canonical(1)
    assert np.allclose(a2b_operator(cfg, cfg.target), S * np.eye(2), atol=1e-15)
    assert np.allclose(b2a_operator(cfg, cfg.target, 0), S * np.eye(2), atol=1e-15)


def test_matched_transmittances():
    psi = np.array([1, 2j, 0.5])
    psi = psi / np.linalg.norm(psi)
    T = matched_transmittances(psi)
    assert np.abs(T).max() == pytest.approx(1)
    assert np.allclose(np.conj(psi) * T, np.abs(psi).min())


def test_zero_coefficient_rejected():
    with pytest.raises(ConfigurationError):
        ConverterConfig.canonical(2, [1, 0, 1])
    with pytest.raises(ConfigurationError):
        ConverterConfig.canonical(2, "coherent")


def test_trivial_n0():
    cfg = ConverterConfig.canonical(0)
    rec = convert_a_to_b(np.array([[1.0]]), cfg)
    assert rec.probability == pytest.approx(1)


@pytest.mark.parametrize("N", range(1, 5))
def test_phase_conversion_probability_and_fidelity(N, rng):
    cfg = ConverterConfig.canonical(N)
    P = cfg.iso.matrix
    for _ in range(5):
        rho = random_mixed(N + 1, rng)
        rec = convert_a_to_b(rho, cfg)
        assert rec.probability == pytest.approx(1 / (N + 1), abs=1e-12)
        assert fidelity(rec.post_state, P @ rho @ P.conj().T) == pytest.approx(1, abs=1e-12)
        back = convert_b_to_a(P @ rho @ P.conj().T, cfg)
        assert back.probability == pytest.approx(1 / (N + 1), abs=1e-12)
        assert fidelity(back.post_state, rho) == pytest.approx(1, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_general_target_probability_is_min_overlap(N, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1)
    psi /= np.linalg.norm(psi)
    cfg = ConverterConfig.canonical(N, psi)
    rho = random_pure(N + 1, rng)
    rec = convert_a_to_b(rho, cfg)
    assert rec.probability == pytest.approx(np.abs(psi).min() ** 2, abs=1e-12)
    assert fidelity(rec.post_state, rho) == pytest.approx(1, abs=1e-10)
    back = convert_b_to_a(rho, cfg)
    assert back.probability == pytest.approx(np.abs(psi).min() ** 2, abs=1e-12)


@pytest.mark.parametrize("N", range(0, 5))
@pytest.mark.parametrize("psi", ["phase", "random"])
def test_completeness(N, psi, rng):
    target = "phase" if psi == "phase" else rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1)
    cfg = ConverterConfig.canonical(N, target, Phi=0.3)
    for outcomes in (a2b_outcomes(cfg), b2a_outcomes(cfg)):
        S_ = sum(Y.conj().T @ Y for _, Y in outcomes)
        assert np.abs(S_ - np.eye(N + 1)).max() < 1e-10


@pytest.mark.parametrize("N", range(1, 5))
def test_unconditional_a_to_b(N, rng):
    cfg = ConverterConfig.canonical(N, Phi=0.4)
    rho = random_mixed(N + 1, rng)
    rec = convert_unconditional_a_to_b(rho, cfg)
    assert rec.probability == pytest.approx(1, abs=1e-12)
    assert sum(b.probability for b in rec.branches) == pytest.approx(1, abs=1e-12)
    for b in rec.branches:
        assert fidelity(b.post_state, rho) == pytest.approx(1, abs=1e-12)


def test_unconditional_b_to_a_analytic(rng):
    N = 3
    cfg = ConverterConfig.canonical(N)
    rho = random_mixed(N + 1, rng)
    rec = convert_unconditional_b_to_a(rho, cfg)
    # per-trial channel distribution is uniform
    assert [b.probability for b in rec.branches] == pytest.approx([0.25] * 4, abs=1e-12)
    for b in rec.branches:
        assert b.extra["restored_fidelity"] == pytest.approx(1, abs=1e-12)
    assert fidelity(rec.post_state, rho) == pytest.approx(1, abs=1e-12)


def test_repeat_until_success_sampling_is_seeded(rng):
    N = 2
    cfg = ConverterConfig.canonical(N)
    rho = random_mixed(N + 1, rng)
    a = convert_unconditional_b_to_a(rho, cfg, np.random.default_rng(5), runs=300).trials
    b = convert_unconditional_b_to_a(rho, cfg, np.random.default_rng(5), runs=300).trials
    assert np.array_equal(a.counts, b.counts)
    assert abs(a.mean - (N + 1)) < 4 * a.stderr
    assert a.min_fidelity == pytest.approx(1, abs=1e-12)
    assert a.cap == 10 * (N + 1)


def test_repeat_until_success_cap(monkeypatch, rng):
    monkeypatch.setattr(conv, "MAX_TRIALS_FACTOR", 1)
    N = 3
    cfg = ConverterConfig.canonical(N)
    t = convert_unconditional_b_to_a(np.eye(4) / 4, cfg, np.random.default_rng(1), runs=400).trials
    assert t.cap == 4
    assert t.counts.max() <= 4
    # P(no success in 4 trials) = (3/4)^4
    assert 0.2 < t.cap_exceeded / 400 < 0.45


def test_b_input_outside_sector_rejected():
    N = 1
    sp = build_space(("b0", "b1"), 1)
    m = np.zeros((4, 4))
    m[3, 3] = 1  # both modes occupied
    with pytest.raises(ConfigurationError):
        convert_b_to_a(DensityOperator(sp, m), ConverterConfig.canonical(N))
    with pytest.raises(SpaceMismatchError):
        convert_b_to_a(DensityOperator(target_space(1, "q"), np.eye(2) / 2), ConverterConfig.canonical(N))


def test_b_input_embedded_in_larger_space(rng):
    N = 1
    sp = build_space(("b0", "b1"), 1)
    rho = random_mixed(2, rng)
    m = np.zeros((4, 4), dtype=complex)
    idx = [sp.index((1, 0)), sp.index((0, 1))]
    m[np.ix_(idx, idx)] = rho
    rec = convert_b_to_a(DensityOperator(sp, m), ConverterConfig.canonical(N))
    assert fidelity(rec.post_state, rho) == pytest.approx(1, abs=1e-12)


def test_impossible_outcome_has_no_post_state():
    cfg = ConverterConfig.canonical(1, [1, 2])
    label, Y = a2b_outcomes(cfg)[2]
    assert label == {"a": 0, "c": 1}
    # loss in c_1 needs the photon in b_1, which |0> never reaches
    rec = apply_kraus(Y, np.diag([1.0, 0.0]), None, label)
    assert rec.probability == 0
    assert not rec.possible
