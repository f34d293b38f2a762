"""Dense brute-force circuits used as an independent check on the fast path.

Every optical element is instantiated as a Fock-space matrix on one joint
space: the single-mode blocks (cutoff N each) times a photonic block holding
the b-modes and the auxiliary splitter modes, with every photonic mode up to
``cap`` photons and at most ``cap`` photons in the block. Detectors are
explicit projectors: ON/OFF on photonic modes, a state projector on the
single-mode outputs. Nothing here uses the closed-form Kraus operators.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .converter import ConverterConfig, b_modes, phase_basis
from .engineering import EngineeringConfig, LeftInput
from .fock import (
    DensityOperator,
    FockSpace,
    as_density,
    build_space,
    embed_operator,
    mode_projector,
    partial_trace,
    product_space,
    source_space,
)
from .measurement import ProbeChannel
from .optics import (
    BeamSplitterElement,
    CrossKerrElement,
    MultiportUnitary,
    PhaseShifterElement,
    circuit_matrix,
)


@dataclass(frozen=True, eq=False)
class DenseResult:
    probability: float
    state: DensityOperator | None


def dense_space(N: int, single: Sequence[str], aux: Sequence[str] = ("c",), cap: int = 1) -> FockSpace:
    photonic = list(b_modes(N))
    for prefix in aux:
        photonic += [f"{prefix}{k}" for k in range(N + 1)]
    blocks = [build_space((m,), (N,)) for m in single]
    blocks.append(build_space(tuple(photonic), (cap,) * len(photonic), None, cap))
    return product_space(*blocks)


def input_map(space: FockSpace, modes: Sequence[str], local_basis: Sequence[Sequence[int]],
              fixed: dict[str, np.ndarray]) -> np.ndarray:
    """Isometry from the input modes' states into ``space``.

    Modes in ``fixed`` carry the given local amplitude vector (indexed by
    occupation); every other mode starts in vacuum.
    """
    idx = {m: space.mode_index(m) for m in space.modes}
    K = np.zeros((space.dim, len(local_basis)), dtype=complex)
    for col, occ in enumerate(local_basis):
        want = dict(zip(modes, occ))
        for i, s in enumerate(space.basis):
            amp = 1.0 + 0j
            for m, j in idx.items():
                n = s[j]
                if m in want:
                    amp *= 1.0 if n == want[m] else 0.0
                elif m in fixed:
                    v = fixed[m]
                    amp *= v[n] if n < len(v) else 0.0
                else:
                    amp *= 1.0 if n == 0 else 0.0
                if amp == 0:
                    break
            K[i, col] = amp
    return K


def _single_mode_basis(N: int) -> list[tuple[int]]:
    return [(n,) for n in range(N + 1)]


def _sector_basis(N: int) -> list[tuple[int, ...]]:
    return [tuple(1 if j == k else 0 for j in range(N + 1)) for k in range(N + 1)]


def _unit(N: int, k: int = 0) -> np.ndarray:
    v = np.zeros(N + 1, dtype=complex)
    v[k] = 1
    return v


def _photon(k: int = 1) -> np.ndarray:
    v = np.zeros(k + 1, dtype=complex)
    v[k] = 1
    return v


def device_elements(cfg: ConverterConfig, a_mode: str, dagger: bool = False) -> list:
    """W, one Kerr coupler per b-mode, W^dag (Kerr strengths negated for the inverse)."""
    bm = b_modes(cfg.N)
    sgn = -1.0 if dagger else 1.0
    W = cfg.W.matrix
    kerr = [CrossKerrElement((bm[k], a_mode), sgn * cfg.kappas[k]) for k in range(cfg.N + 1)]
    return [MultiportUnitary(bm, W)] + kerr + [MultiportUnitary(bm, W.conj().T)]


def splitter_elements(T: np.ndarray, aux: str, reverse: bool = False) -> list:
    out = []
    for k, t in enumerate(np.asarray(T, dtype=complex)):
        r = np.sqrt(max(0.0, 1 - abs(t) ** 2))
        if reverse:
            out.append(BeamSplitterElement((f"b{k}", f"{aux}{k}"), np.conj(t), -r))
        else:
            out.append(BeamSplitterElement((f"b{k}", f"{aux}{k}"), t, r))
    return out


def phase_elements(N: int, phase: float) -> list:
    return [PhaseShifterElement(f"b{k}", k * phase) for k in range(N + 1)]


def click_projector(space: FockSpace, N: int, aux: Sequence[str], click: tuple[str, int] | None) -> np.ndarray:
    """ON in the clicked photonic mode, OFF in every other photonic mode."""
    P = np.eye(space.dim, dtype=complex)
    on = None if click is None else f"{click[0]}{click[1]}"
    for m in list(b_modes(N)) + [f"{p}{k}" for p in aux for k in range(N + 1)]:
        if m == on:
            P = mode_projector(space, m, range(1, space.cutoff(m) + 1)) @ P
        else:
            P = mode_projector(space, m, [0]) @ P
    return P


def off_projector(space: FockSpace, modes: Sequence[str]) -> np.ndarray:
    P = np.eye(space.dim, dtype=complex)
    for m in modes:
        P = mode_projector(space, m, [0]) @ P
    return P


def state_projector(space: FockSpace, mode: str, chi: np.ndarray) -> np.ndarray:
    local = build_space((mode,), (space.cutoff(mode),))
    return embed_operator(np.outer(chi, np.conj(chi)), local, space)


def _run(space, K, rho_in, elements, projector, keep) -> DenseResult:
    C = circuit_matrix(elements, space)
    X = projector @ C @ K
    out = X @ rho_in @ X.conj().T
    p = float(np.trace(out).real)
    if p <= 1e-15:
        return DenseResult(max(p, 0.0), None)
    red = partial_trace(DensityOperator(space, out / p, check=False), keep)
    return DenseResult(p, red)


def sector_matrix(state: DensityOperator, N: int, prefix: str = "b") -> tuple[np.ndarray, float]:
    """Single-photon block of a b-mode state and the weight outside it."""
    sp = state.space
    idx = [sp.index(s) for s in _sector_basis(N)]
    m = state.matrix[np.ix_(idx, idx)]
    return m, float(np.trace(state.matrix).real - np.trace(m).real)


# ------------------------------------------------------------------ converter


def dense_a_to_b(rho_a, cfg: ConverterConfig, chi=None, click: int | None = None,
                 cap: int = 1, splitters: bool = True, feed_phase: float | None = None) -> DenseResult:
    """Forward converter: a-mode projected on ``chi``, c-detectors read out.

    ``click=None`` post-selects vacuum in every c-mode; ``click=j`` a photon in c_j.
    """
    N = cfg.N
    chi = cfg.target if chi is None else np.asarray(chi)
    sp = _space(N, ("a",), ("c",), cap)
    K = input_map(sp, ("a",), _single_mode_basis(N), {"b0": _photon()})
    els = device_elements(cfg, "a")
    if splitters:
        els += splitter_elements(cfg.Tk, "c")
    if feed_phase is not None:
        els += phase_elements(N, feed_phase)
    proj = state_projector(sp, "a", chi)
    cm = [f"c{k}" for k in range(N + 1)]
    if click is None:
        proj = off_projector(sp, cm) @ proj
    else:
        proj = click_projector(sp, N, (), None) @ proj  # b empty when the photon is lost
        proj = _only_on(sp, cm, f"c{click}") @ proj
    return _run(sp, K, np.asarray(rho_a), els, proj, list(b_modes(N)))


def _only_on(sp, modes, on):
    P = np.eye(sp.dim, dtype=complex)
    for m in modes:
        occ = range(1, sp.cutoff(m) + 1) if m == on else [0]
        P = mode_projector(sp, m, occ) @ P
    return P


def dense_b_to_a(rho_b, cfg: ConverterConfig, click: tuple[str, int] = ("b", 0), prep=None,
                 cap: int = 1, splitters: bool = True) -> DenseResult:
    """Backward converter: reversed splitters then the inverse device, b/c detectors read out."""
    N = cfg.N
    prep = cfg.target if prep is None else np.asarray(prep)
    sp = _space(N, ("a",), ("c",), cap)
    K = input_map(sp, b_modes(N), _sector_basis(N), {"a": prep})
    els = splitter_elements(cfg.Tk, "c", reverse=True) if splitters else []
    els += device_elements(cfg, "a", dagger=True)
    proj = click_projector(sp, N, ("c",), click)
    return _run(sp, K, np.asarray(rho_b), els, proj, ["a"])


@lru_cache(maxsize=32)
def _space(N, single, aux, cap):
    return dense_space(N, single, aux, cap)


def dense_device(cfg: ConverterConfig, cap: int = 1) -> tuple[FockSpace, np.ndarray]:
    """Explicit W, Kerr, W^dag product on the a-mode and the b-modes."""
    sp = product_space(build_space(("a",), (cfg.N,)),
                       build_space(b_modes(cfg.N), (cap,) * (cfg.N + 1), None, cap))
    return sp, circuit_matrix(device_elements(cfg, "a"), sp)


# ------------------------------------------------------------------ engineering


def dense_engineering(rho_a, cfg: EngineeringConfig, m: int = 0, click: tuple[str, int] = ("b", 0),
                      feed_forward: bool = False, cap: int = 1, detect_phase: bool = True) -> DenseResult:
    """Engineering layout with the array split into U_R, splitters, U U_R^dag.

    ``click`` is ``("b", k)`` or ``("d", j)`` for a photon lost at T_j.
    """
    N = cfg.N
    conv = cfg.converter
    aux = ("d",) if cfg.include_Tk_stage else ()
    sp = _space(N, ("a", "a'"), aux, cap)
    K = input_map(sp, ("a",), _single_mode_basis(N), {"a'": cfg.left_state, "b0": _photon()})
    phases = phase_basis(N, cfg.Phi)
    phase = cfg.Phi + (2 * np.pi * m / (N + 1) if feed_forward else 0.0)
    bm = b_modes(N)
    els = device_elements(conv, "a") + phase_elements(N, phase)
    els.append(MultiportUnitary(bm, cfg.U_R.matrix))
    if cfg.include_Tk_stage:
        els += splitter_elements(cfg.Tk, "d")
    els.append(MultiportUnitary(bm, cfg.U.matrix @ cfg.U_R.matrix.conj().T))
    els += device_elements(conv, "a'", dagger=True)
    proj = click_projector(sp, N, aux, click)
    if detect_phase:
        proj = state_projector(sp, "a", phases[:, m]) @ proj
    return _run(sp, K, np.asarray(rho_a), els, proj, ["a'"])


def dense_right_output(rho_a, cfg: EngineeringConfig, cap: int = 1) -> DensityOperator:
    """a-mode leaving the right converter, nothing detected."""
    N = cfg.N
    sp = _space(N, ("a",), (), cap)
    K = input_map(sp, ("a",), _single_mode_basis(N), {"b0": _photon()})
    return _run(sp, K, np.asarray(rho_a), device_elements(cfg.converter, "a"),
                np.eye(sp.dim), ["a"]).state


# ------------------------------------------------------------------ telemanipulation


def dense_telemanip(rho_a, cfg: EngineeringConfig, m: int | None = 0, click: tuple[str, int] | None = ("b", 0),
                    cap: int = 1, keep: str = "a'") -> DenseResult:
    """Telemanipulation layout: every engineering element traversed backwards, U_Phi -> U_Phi^dag.

    ``m=None`` removes Alice's phase detector, ``click=None`` removes every
    heralding detector.
    """
    N = cfg.N
    conv = cfg.converter
    aux = ("d",) if cfg.include_Tk_stage else ()
    sp = _space(N, ("a", "a'"), aux, cap)
    K = input_map(sp, ("a",), _single_mode_basis(N), {"a'": cfg.left_state, "b0": _photon()})
    bm = b_modes(N)
    els = device_elements(conv, "a'")
    els.append(MultiportUnitary(bm, cfg.U_R.matrix @ cfg.U.matrix.conj().T))
    if cfg.include_Tk_stage:
        els += splitter_elements(cfg.Tk, "d", reverse=True)
    els.append(MultiportUnitary(bm, cfg.U_R.matrix.conj().T))
    els += phase_elements(N, cfg.Phi)
    els += device_elements(conv, "a", dagger=True)
    proj = np.eye(sp.dim, dtype=complex) if click is None else click_projector(sp, N, aux, click)
    if m is not None:
        proj = state_projector(sp, "a", phase_basis(N, cfg.Phi)[:, m]) @ proj
    return _run(sp, K, np.asarray(rho_a), els, proj, [keep])


def dense_engineering_reduced(rho_a, cfg: EngineeringConfig, cap: int = 1) -> tuple[DensityOperator, DenseResult]:
    """Engineering layout without the phase detector: right-converter output and heralded a'-output."""
    return dense_right_output(rho_a, cfg, cap), dense_engineering(rho_a, cfg, cap=cap, detect_phase=False)


def dense_telemanip_reduced(rho_a, cfg: EngineeringConfig, cap: int = 1) -> tuple[DenseResult, DenseResult]:
    """Telemanipulation layout without the phase detector: Alice's heralded a-mode and Bob's unheralded mode."""
    alice = dense_telemanip(rho_a, cfg, m=None, click=("b", 0), cap=cap, keep="a")
    bob = dense_telemanip(rho_a, cfg, m=None, click=None, cap=cap, keep="a'")
    return alice, bob



# ------------------------------------------------------------------ measurement


class DenseProbeChannel(ProbeChannel):
    """Probe channel whose click probabilities come from the dense engineering circuit."""

    def __init__(self, rho, N: int | None = None, shots: int | None = None,
                 rng: np.random.Generator | None = None, cap: int = 1):
        super().__init__(rho, N, shots, rng)
        self._rho_a = as_density(rho, source_space(self.N)).matrix
        self._cap = cap

    def exact_signals(self, U: np.ndarray) -> np.ndarray:
        N = self.N
        cfg = EngineeringConfig.from_parts(N, U=U, left_input=LeftInput.VACUUM)
        joint = np.array([
            dense_engineering(self._rho_a, cfg, click=("b", k), cap=self._cap).probability
            for k in range(N + 1)
        ])
        return joint / joint.sum()
