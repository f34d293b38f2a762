"""Fast sector-restricted path vs dense brute-force circuits."""

import numpy as np
import pytest

from kerrconv.converter import (
    ConverterConfig,
    a2b_outcomes,
    b2a_outcomes,
    build_M,
    convert_a_to_b,
    convert_b_to_a,
    convert_unconditional_a_to_b,
    convert_unconditional_b_to_a,
    pegg_barnett_state,
    phase_basis,
    phase_values,
)
from kerrconv.engineering import EngineeringConfig, LeftInput, engineering_outcomes, run_engineering
from kerrconv.measurement import ProbeChannel
from kerrconv.oracle import (
    DenseProbeChannel,
    dense_a_to_b,
    dense_b_to_a,
    dense_device,
    dense_engineering,
    dense_engineering_reduced,
    dense_telemanip,
    dense_telemanip_reduced,
    sector_matrix,
)
from kerrconv.telemanip import (
    reduced_states_engineering,
    reduced_states_telemanip,
    run_telemanip_conditional,
    telemanip_outcomes,
)

from conftest import random_mixed, random_unitary

TOL = 1e-10
NS = [1, 2, 3]


def _prob(Y, rho):
    return float(np.trace(Y @ rho @ Y.conj().T).real)


def _cfg(N, rng, Phi=0.35, left=LeftInput.PHASE):
    return EngineeringConfig.from_parts(
        N, random_unitary(N + 1, rng), random_unitary(N + 1, rng), rng.random(N + 1) * 0.8 + 0.2, left, Phi
    )


@pytest.mark.parametrize("N", NS)
@pytest.mark.parametrize("cap", [1, 2])
def test_device(N, cap):
    cfg = ConverterConfig.canonical(N)
    sp, dense = dense_device(cfg, cap)
    assert np.abs(build_M(cfg, sp) - dense).max() < TOL


@pytest.mark.parametrize("N", NS)
def test_converter_all_outcomes(N, rng):
    psi = rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1)
    cfg = ConverterConfig.canonical(N, psi)
    rho = random_mixed(N + 1, rng)
    rec = convert_a_to_b(rho, cfg)
    d = dense_a_to_b(rho, cfg)
    m, leak = sector_matrix(d.state, N)
    assert abs(d.probability - rec.probability) < TOL
    assert abs(leak) < TOL
    assert np.abs(m - rec.post_state.matrix).max() < TOL
    outs = a2b_outcomes(cfg)
    from kerrconv.converter import detection_basis
    B = detection_basis(cfg.target)
    for label, Y in outs:
        dd = dense_a_to_b(rho, cfg, chi=B[:, label["a"]], click=label["c"])
        assert abs(dd.probability - _prob(Y, rho)) < TOL
    back = convert_b_to_a(rho, cfg)
    db = dense_b_to_a(rho, cfg)
    assert abs(db.probability - back.probability) < TOL
    assert np.abs(db.state.matrix - back.post_state.matrix).max() < TOL
    for label, Y in b2a_outcomes(cfg):
        click = ("b", label["b"]) if "b" in label else ("c", label["c"])
        assert abs(dense_b_to_a(rho, cfg, click=click).probability - _prob(Y, rho)) < TOL


@pytest.mark.parametrize("N", NS)
def test_unconditional_conversion(N, rng):
    cfg = ConverterConfig.canonical(N, Phi=0.2)
    rho = random_mixed(N + 1, rng)
    rec = convert_unconditional_a_to_b(rho, cfg)
    for b in rec.branches:
        m = b.label["phase_index"]
        d = dense_a_to_b(rho, cfg, chi=phase_basis(N, cfg.Phi)[:, m],
                         feed_phase=float(phase_values(N, cfg.Phi)[m]), splitters=False)
        assert abs(d.probability - b.probability) < TOL
        assert np.abs(sector_matrix(d.state, N)[0] - b.post_state.matrix).max() < TOL
    rec = convert_unconditional_b_to_a(rho, cfg)
    prep = pegg_barnett_state(N, 0.0)
    for b in rec.branches:
        d = dense_b_to_a(rho, cfg, click=("b", b.label["b"]), prep=prep, splitters=False)
        assert abs(d.probability - b.probability) < TOL
        assert np.abs(d.state.matrix - b.post_state.matrix).max() < TOL


@pytest.mark.parametrize("N", NS)
@pytest.mark.parametrize("left", list(LeftInput))
def test_engineering_all_outcomes(N, left, rng):
    cfg = _cfg(N, rng, left=left)
    rho = random_mixed(N + 1, rng)
    rec = run_engineering(rho, cfg)
    d = dense_engineering(rho, cfg)
    assert abs(d.probability - rec.probability) < TOL
    if left is LeftInput.PHASE:
        assert np.abs(d.state.matrix - rec.post_state.matrix).max() < TOL
    for ff in (False, True):
        for label, Y in engineering_outcomes(cfg, ff):
            click = ("b", label["b"]) if "b" in label else ("d", label["loss"])
            dd = dense_engineering(rho, cfg, m=label["phase_index"], click=click, feed_forward=ff)
            assert abs(dd.probability - _prob(Y, rho)) < TOL


@pytest.mark.parametrize("N", [1, 2])
def test_engineering_two_photon_cap(N, rng):
    cfg = _cfg(N, rng)
    rho = random_mixed(N + 1, rng)
    d = dense_engineering(rho, cfg, cap=2)
    assert abs(d.probability - run_engineering(rho, cfg).probability) < TOL


@pytest.mark.parametrize("N", NS)
def test_telemanip_all_outcomes(N, rng):
    cfg = _cfg(N, rng)
    rho = random_mixed(N + 1, rng)
    rec = run_telemanip_conditional(rho, cfg)
    d = dense_telemanip(rho, cfg)
    assert abs(d.probability - rec.probability) < TOL
    assert np.abs(d.state.matrix - rec.post_state.matrix).max() < TOL
    for label, Y in telemanip_outcomes(cfg):
        click = ("b", label["b"]) if "b" in label else ("d", label["loss"])
        dd = dense_telemanip(rho, cfg, m=label["phase_index"], click=click)
        assert abs(dd.probability - _prob(Y, rho)) < TOL


@pytest.mark.parametrize("N", NS)
def test_reduced_states(N, rng):
    cfg = _cfg(N, rng)
    rho = random_mixed(N + 1, rng)
    red, red_p = reduced_states_engineering(rho, cfg)
    right, her = dense_engineering_reduced(rho, cfg)
    assert np.abs(right.matrix - red.matrix).max() < TOL
    assert np.abs(her.state.matrix - red_p.matrix).max() < TOL
    red, red_p = reduced_states_telemanip(rho, cfg)
    alice, bob = dense_telemanip_reduced(rho, cfg)
    assert np.abs(alice.state.matrix - red.matrix).max() < TOL
    assert np.abs(bob.state.matrix - red_p.matrix).max() < TOL


@pytest.mark.parametrize("N", NS)
def test_probe_channel(N, rng):
    rho = random_mixed(N + 1, rng)
    U = random_unitary(N + 1, rng)
    assert np.abs(DenseProbeChannel(rho).exact_signals(U) - ProbeChannel(rho).exact_signals(U)).max() < TOL
