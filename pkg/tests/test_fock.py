import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kerrconv.fock import (
    ConfigurationError,
    DensityOperator,
    IsomorphismMap,
    SpaceMismatchError,
    StateVector,
    as_density,
    build_space,
    embed_operator,
    fidelity,
    lift_operator,
    lift_state,
    lower_operator,
    lower_state,
    mode_projector,
    partial_trace,
    product_space,
    source_space,
    space_from_dict,
    space_to_dict,
    state_from_dict,
    state_to_dict,
    target_space,
    tensor,
    trace_distance,
)

from conftest import random_mixed, random_pure


# frozen by hand: colex order, later modes more significant
def test_colex_basis_order():
    assert build_space(("x", "y"), 1).basis == ((0, 0), (1, 0), (0, 1), (1, 1))
    assert build_space(("x", "y"), 2, sector=2).basis == ((2, 0), (1, 1), (0, 2))
    assert target_space(2).basis == ((1, 0, 0), (0, 1, 0), (0, 0, 1))


def test_dimensions_with_constraints():
    assert build_space(("x", "y", "z"), 2).dim == 27
    assert build_space(("x", "y", "z"), 2, max_total=2).dim == 10
    assert build_space(("x", "y", "z"), 1, sector=1).dim == 3
    assert source_space(4).dim == 5


def test_index_round_trip():
    sp = build_space(("x", "y", "z"), (1, 2, 1), max_total=3)
    for i, occ in enumerate(sp.basis):
        assert sp.index(occ) == i
        assert sp.occupation(i) == occ
    with pytest.raises(Exception):
        sp.index((1, 2, 1))


def test_tensor_kron_order():
    x = StateVector(source_space(1, "x"), [1, 0])
    y = StateVector(source_space(1, "y"), [0, 1])
    t = tensor(x, y)
    # |x=0, y=1> in colex order is index 2
    assert np.allclose(t.amplitudes, [0, 0, 1, 0])
    assert t.space.modes == ("x", "y")


def test_tensor_rejects_shared_modes():
    x = StateVector(source_space(1, "x"), [1, 0])
    with pytest.raises(ConfigurationError):
        tensor(x, x)


def test_partial_trace_of_bell_state_is_maximally_mixed():
    sp = build_space(("x", "y"), 1)
    v = np.zeros(4, dtype=complex)
    v[sp.index((0, 0))] = v[sp.index((1, 1))] = 1 / np.sqrt(2)
    rho = StateVector(sp, v).density()
    for m in ("x", "y"):
        assert np.allclose(partial_trace(rho, [m]).matrix, np.eye(2) / 2)


def test_partial_trace_of_product(rng):
    a = random_mixed(3, rng)
    b = random_mixed(2, rng)
    ra = DensityOperator(source_space(2, "x"), a)
    rb = DensityOperator(source_space(1, "y"), b)
    joint = tensor(ra, rb)
    assert np.allclose(partial_trace(joint, ["x"]).matrix, a, atol=1e-14)
    assert np.allclose(partial_trace(joint, ["y"]).matrix, b, atol=1e-14)


def test_partial_trace_rejects_unknown_modes():
    rho = DensityOperator(source_space(1), np.eye(2) / 2)
    with pytest.raises(ConfigurationError):
        partial_trace(rho, ["q"])


def test_density_validation():
    sp = source_space(1)
    with pytest.raises(ConfigurationError):
        DensityOperator(sp, [[1, 1], [0, 0]])
    with pytest.raises(ConfigurationError):
        DensityOperator(sp, [[2, 0], [0, -1]])
    with pytest.raises(ConfigurationError):
        DensityOperator(sp, [[0.6, 0], [0, 0.6]])
    with pytest.raises(SpaceMismatchError):
        DensityOperator(sp, np.eye(3) / 3)


def test_as_density_normalizes_vectors():
    r = as_density(np.array([3, 4j]), source_space(1))
    assert np.allclose(r.matrix, [[0.36, -0.48j], [0.48j, 0.64]])


def test_isomorphism_is_identity_in_standard_order():
    for N in range(5):
        iso = IsomorphismMap.standard(N)
        assert np.array_equal(iso.matrix, np.eye(N + 1))


def test_isomorphism_lift_lower_round_trip(rng):
    iso = IsomorphismMap.standard(3)
    rho = DensityOperator(iso.source, random_mixed(4, rng))
    lifted = lift_state(rho, iso)
    assert lifted.space == iso.target
    assert np.allclose(lower_state(lifted, iso).matrix, rho.matrix)
    op = rng.normal(size=(4, 4))
    assert np.allclose(lower_operator(lift_operator(op, iso), iso), op)
    with pytest.raises(SpaceMismatchError):
        lower_state(rho, iso)


def test_isomorphism_rejects_wrong_target():
    with pytest.raises(ConfigurationError):
        IsomorphismMap(source_space(2), build_space(("b0", "b1"), 1, sector=1))


# frozen: <0|+> overlap 1/2, trace distance sqrt(1/2)
def test_fidelity_and_trace_distance_values():
    zero = np.diag([1.0, 0.0])
    plus = np.full((2, 2), 0.5)
    assert fidelity(zero, plus) == pytest.approx(0.5, abs=1e-15)
    assert trace_distance(zero, plus) == pytest.approx(np.sqrt(0.5), abs=1e-15)
    assert fidelity(np.eye(2) / 2, zero) == pytest.approx(0.5, abs=1e-15)
    assert trace_distance(np.eye(2) / 2, zero) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_fidelity_properties(n, seed):
    rng = np.random.default_rng(seed)
    a, b = random_mixed(n + 1, rng), random_pure(n + 1, rng)
    f = fidelity(a, b)
    assert 0 <= f <= 1
    assert f == pytest.approx(fidelity(b, a), abs=1e-10)
    assert fidelity(a, a) == pytest.approx(1, abs=1e-10)
    # Fuchs-van de Graaf
    t = trace_distance(a, b)
    assert 1 - np.sqrt(f) <= t + 1e-10
    assert t <= np.sqrt(1 - f) + 1e-10


def test_embed_operator_and_closure():
    sp = build_space(("x", "y"), 1, max_total=1)
    local = source_space(1, "x")
    n = embed_operator(np.diag([0, 1]), local, sp)
    assert np.allclose(np.diag(n), [0, 1, 0])
    flip = np.array([[0, 1], [1, 0]])
    with pytest.raises(ConfigurationError):
        embed_operator(flip, local, sp)


def test_mode_projector():
    sp = build_space(("x", "y"), 1)
    P = mode_projector(sp, "y", [0])
    assert np.allclose(np.diag(P), [1, 1, 0, 0])


def test_json_round_trip(rng):
    sp = product_space(source_space(2), target_space(1))
    rho = DensityOperator(sp, random_mixed(sp.dim, rng))
    back = state_from_dict(json.loads(json.dumps(state_to_dict(rho))))
    assert back.space == sp
    assert np.allclose(back.matrix, rho.matrix)
    vec = StateVector(target_space(2), np.array([1, 1j, 0]) / np.sqrt(2))
    back = state_from_dict(json.loads(vec.to_json()))
    assert np.allclose(back.amplitudes, vec.amplitudes)
    sp2 = build_space(("x", "y"), 2, max_total=2)
    assert space_from_dict(space_to_dict(sp2)) == sp2
