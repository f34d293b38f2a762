"""Arbitrary single-mode operators from two converters and beam-splitter arrays.

Layout: the right converter lifts the a-mode state into the single-photon
sector, a phase array ``U_Phi`` undoes the detected phase ramp, the arrays
``U_R``, transmittances ``T_k`` and ``U U_R^dag`` apply ``A = U R`` with
``R = U_R^dag diag(T) U_R``, and the left converter (run backwards, input
``|0_P'>`` or vacuum) moves the result onto the a'-mode. Heralding on the
detected phase and a click in ``b_0`` leaves ``A / (N+1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .converter import (
    ConverterConfig,
    OutcomeRecord,
    _powers,
    a2b_operator,
    apply_kraus,
    b2a_operator,
    build_Vb,
    pegg_barnett_state,
    phase_basis,
    phase_correction,
    phase_values,
)
from .fock import ConfigurationError, as_density, source_space
from .optics import MultiportUnitary, PolarFactors, polar_decompose


class LeftInput(Enum):
    """State fed into the a'-port of the left converter."""

    PHASE = "phase"  # |0_P'>: state engineering
    VACUUM = "vacuum"  # |0'>: measurement


@dataclass(frozen=True, eq=False)
class EngineeringConfig:
    N: int
    U: MultiportUnitary
    U_R: MultiportUnitary
    Tk: np.ndarray
    left_input: LeftInput = LeftInput.PHASE
    include_Tk_stage: bool = True
    Phi: float = 0.0

    def __post_init__(self):
        N = self.N
        Tk = np.asarray(self.Tk, dtype=float)
        if Tk.shape != (N + 1,):
            raise ConfigurationError(f"need {N + 1} transmittances, got {Tk.shape}")
        if Tk.min() < 0 or Tk.max() > 1 + 1e-12:
            raise ConfigurationError("transmittances must lie in [0, 1]")
        if Tk.max() <= 0:
            raise ConfigurationError("all transmittances vanish: the target operator is zero")
        if not self.include_Tk_stage and np.abs(Tk - 1).max() > 1e-12:
            raise ConfigurationError("omitting the transmittance stage requires T_k = 1")
        object.__setattr__(self, "Tk", np.clip(Tk, 0, 1))
        for u in (self.U, self.U_R):
            if u.matrix.shape != (N + 1, N + 1):
                raise ConfigurationError("arrays must act on N+1 modes")
        object.__setattr__(self, "left_input", LeftInput(self.left_input))

    @classmethod
    def from_parts(
        cls,
        N: int,
        U=None,
        U_R=None,
        Tk=None,
        left_input: LeftInput | str = LeftInput.PHASE,
        Phi: float = 0.0,
    ) -> "EngineeringConfig":
        modes = tuple(f"b{k}" for k in range(N + 1))
        eye = np.eye(N + 1, dtype=complex)
        U = eye if U is None else np.asarray(U, dtype=complex)
        U_R = eye if U_R is None else np.asarray(U_R, dtype=complex)
        Tk = np.ones(N + 1) if Tk is None else np.asarray(Tk, dtype=float)
        return cls(
            N, MultiportUnitary(modes, U), MultiportUnitary(modes, U_R), Tk,
            LeftInput(left_input), bool(np.abs(Tk - 1).max() > 1e-12), float(Phi),
        )

    @property
    def converter(self) -> ConverterConfig:
        return ConverterConfig.canonical(self.N, "phase", self.Phi)

    @property
    def R_b(self) -> np.ndarray:
        UR = self.U_R.matrix
        return UR.conj().T @ np.diag(self.Tk.astype(complex)) @ UR

    @property
    def A_b(self) -> np.ndarray:
        return self.U.matrix @ self.R_b

    @property
    def left_state(self) -> np.ndarray:
        if self.left_input is LeftInput.PHASE:
            return pegg_barnett_state(self.N, 0.0)
        v = np.zeros(self.N + 1, dtype=complex)
        v[0] = 1
        return v

    def with_left_input(self, left: LeftInput) -> "EngineeringConfig":
        return EngineeringConfig(
            self.N, self.U, self.U_R, self.Tk, left, self.include_Tk_stage, self.Phi
        )


def build_target_operator(cfg: EngineeringConfig) -> np.ndarray:
    """A_a = P^dag U R P on H_a."""
    P = cfg.converter.iso.matrix
    return P.conj().T @ cfg.A_b @ P


def decompose_target(A: np.ndarray, tol: float = 1e-12) -> tuple[EngineeringConfig, complex]:
    """Engineering configuration realizing ``A`` up to a c-number.

    Returns ``(cfg, scale)`` with ``scale = Tr sqrt(A^dag A) * det_phase``.
    The transmittances are the eigenvalues of the positive factor divided by
    the largest one, and ``cfg.U`` is the SU(N+1) part of the unitary factor,
    so that ``A = scale * s_max / Tr sqrt(A^dag A) * build_target_operator(cfg)``.
    """
    A = np.asarray(A, dtype=complex)
    N = A.shape[0] - 1
    pf: PolarFactors = polar_decompose(A)
    s, vecs = np.linalg.eigh(pf.positive)
    order = np.argsort(-s, kind="stable")
    s, vecs = np.clip(s[order], 0, None), vecs[:, order]
    if s.max() - s.min() <= tol * s.max():
        vecs = np.eye(N + 1, dtype=complex)
    cfg = EngineeringConfig.from_parts(
        N, U=pf.unitary / pf.det_phase, U_R=vecs.conj().T, Tk=s / s.max()
    )
    return cfg, pf.trace_norm * pf.det_phase


# ------------------------------------------------------------------ circuit pieces


def right_operator(cfg: EngineeringConfig, m: int, feed_forward: bool) -> np.ndarray:
    """Right converter with phase outcome m, then U_Phi (fixed or fed forward)."""
    N = cfg.N
    conv = cfg.converter
    chi = phase_basis(N, cfg.Phi)[:, m]
    phase = phase_values(N, cfg.Phi)[m] if feed_forward else cfg.Phi
    return phase_correction(N, phase) @ a2b_operator(conv, chi, splitters=False)


def left_operator(cfg: EngineeringConfig, k: int) -> np.ndarray:
    """Left converter run backwards, photon registered in b_k."""
    return b2a_operator(cfg.converter, cfg.left_state, k, splitters=False)


def loss_operator(cfg: EngineeringConfig, j: int) -> np.ndarray:
    """Photon reflected into the loss mode of the T_j splitter: H_b -> vacuum row."""
    r = np.sqrt(max(0.0, 1 - cfg.Tk[j] ** 2))
    return -r * cfg.U_R.matrix[j : j + 1, :]


def engineering_outcomes(cfg: EngineeringConfig, feed_forward: bool = False):
    """Complete Kraus set: phase outcome m x (click b_k | photon lost at T_j)."""
    N = cfg.N
    A = cfg.A_b
    out = []
    for m in range(N + 1):
        right = right_operator(cfg, m, feed_forward)
        mid = A @ right
        for k in range(N + 1):
            out.append(({"phase_index": m, "b": k}, left_operator(cfg, k) @ mid))
        if cfg.include_Tk_stage:
            for j in range(N + 1):
                Y = cfg.left_state[:, None] @ (loss_operator(cfg, j) @ right)
                out.append(({"phase_index": m, "loss": j}, Y))
    return out


def conditional_operator(cfg: EngineeringConfig, k: int = 0) -> np.ndarray:
    """Y(1_{b_k}, Phi) composed from the circuit pieces."""
    return left_operator(cfg, k) @ cfg.A_b @ right_operator(cfg, 0, False)


def run_engineering(rho, cfg: EngineeringConfig) -> OutcomeRecord:
    """Herald on the phase outcome Phi and a click in b_0."""
    N = cfg.N
    r = as_density(rho, source_space(N)).matrix
    Y = conditional_operator(cfg, 0)
    return apply_kraus(Y, r, source_space(N, "a'"), {"phase_index": 0, "b": 0})


def run_engineering_unconditional(rho, cfg: EngineeringConfig) -> OutcomeRecord:
    """Phase feed-forward plus repeat-until-success on the left converter.

    Each branch (m, k) is corrected by re-lifting, shifting by ``V^k`` and
    converting again; the aggregate operator is ``P^dag A P``.
    """
    N = cfg.N
    r = as_density(rho, source_space(N)).matrix
    P = cfg.converter.iso.matrix
    V = build_Vb(cfg.converter)
    Vp = _powers(V, N)
    out_space = source_space(N, "a'")
    branches = []
    for label, Y in engineering_outcomes(cfg, feed_forward=True):
        if "loss" in label:
            continue
        corr = P.conj().T @ Vp[label["b"]] @ P @ Y
        rec = apply_kraus(Y, r, out_space, label, extra={"corrected_operator": corr})
        branches.append(rec)
    Ups = P.conj().T @ cfg.A_b @ P
    return apply_kraus(Ups, r, out_space, {"aggregate": True}, branches=tuple(branches))

