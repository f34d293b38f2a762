"""Telemanipulation: the engineering layout run with inputs and outputs swapped.

The source (left converter plus arrays) emits an entangled state with a
single-mode part for Bob and a single-photon multimode part for Alice.
Alice runs her converter backwards on her input and the multimode part,
detects a phase on her a-mode and a click in some ``b_k``, and reports over
a classical channel. Bob either opens a shutter on the trigger (conditional)
or applies the correction ``U_{k Phi~}^dag`` through converters and an
array (unconditional). Heralded on ``(b_0, Phi)`` Bob holds ``A^* rho A^T``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .converter import (
    OutcomeRecord,
    _powers,
    apply_kraus,
    build_Vb,
    pegg_barnett_state,
    phase_basis,
    phase_correction,
    phase_values,
)
from .engineering import EngineeringConfig
from .fock import (
    DensityOperator,
    as_density,
    embed_operator,
    partial_trace,
    product_space,
    source_space,
    target_space,
)


class Role(Enum):
    ALICE = "alice"
    BOB = "bob"
    SOURCE = "source"


@dataclass(frozen=True)
class ClassicalMessage:
    kind: str  # "trigger" or "outcome-report"
    channel: int | None = None
    phase: float | None = None
    timestamp: int = 0

    def __post_init__(self):
        if self.kind == "trigger":
            if self.channel is not None or self.phase is not None:
                raise ValueError("a trigger carries no outcome data")
        elif self.kind == "outcome-report":
            if self.channel is None or self.phase is None:
                raise ValueError("an outcome report needs channel and phase")
        else:
            raise ValueError(f"unknown message kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "channel": self.channel, "phase": self.phase,
                "timestamp": self.timestamp}


@dataclass
class PartyState:
    role: Role
    modes: tuple[str, ...]
    shutter_open: bool = False
    pending_corrections: deque = field(default_factory=deque)


class ClassicalChannel:
    """Lossless ordered message queue with a transcript of everything sent."""

    def __init__(self):
        self._queue: deque[ClassicalMessage] = deque()
        self.transcript: list[ClassicalMessage] = []

    def send(self, msg: ClassicalMessage):
        self._queue.append(msg)
        self.transcript.append(msg)

    def receive(self) -> ClassicalMessage | None:
        return self._queue.popleft() if self._queue else None


# ------------------------------------------------------------------ Kraus operators


def source_amplitudes(cfg: EngineeringConfig) -> np.ndarray:
    """sigma[n', l]: amplitude of |n'>_{a'} |phi_l> leaving the left converter."""
    N = cfg.N
    psi = pegg_barnett_state(N, 0.0)
    V = build_Vb(cfg.converter)
    return np.stack([psi[n] * Vn[:, 0] for n, Vn in enumerate(_powers(V, N))], axis=0)


def _alice_map(cfg: EngineeringConfig, k: int, chi: np.ndarray, phase: float) -> np.ndarray:
    """<phi_k|<chi| M^dag U_phase acting on |x>_a (x) |b>: rows index b, one block per x."""
    N = cfg.N
    Vd = build_Vb(cfg.converter).conj().T
    Uph = phase_correction(N, phase)
    return np.stack([np.conj(chi[x]) * (Vn @ Uph)[k, :] for x, Vn in enumerate(_powers(Vd, N))])


def telemanip_operator(cfg: EngineeringConfig, k: int, m: int) -> np.ndarray:
    """Y_tel(1_{b_k}, Phi_m): Alice's a-mode -> Bob's a'-mode.

    The source keeps ``U_Phi`` at ``cfg.Phi``; the phase outcome index m
    refers to the basis offset by ``cfg.Phi``.
    """
    N = cfg.N
    chi = phase_basis(N, cfg.Phi)[:, m]
    rows = _alice_map(cfg, k, chi, cfg.Phi)  # [x, b]
    chan = rows @ cfg.A_b.conj().T  # [x, l]
    sigma = source_amplitudes(cfg)  # [n', l]
    return sigma @ chan.T  # [n', x]


def telemanip_loss_operator(cfg: EngineeringConfig, j: int, m: int) -> np.ndarray:
    """Photon lost at the T_j splitter: Bob keeps beta_j, Alice only measures her a-mode."""
    N = cfg.N
    r = np.sqrt(max(0.0, 1 - cfg.Tk[j] ** 2))
    row = np.conj(r) * (cfg.U_R.matrix @ cfg.U.matrix.conj().T)[j, :]
    beta = source_amplitudes(cfg) @ row
    chi = phase_basis(N, cfg.Phi)[:, m]
    return np.outer(beta, chi.conj())


def telemanip_outcomes(cfg: EngineeringConfig) -> list[tuple[dict, np.ndarray]]:
    """Complete Kraus set: Alice's phase outcome x (click b_k | photon lost at T_j)."""
    N = cfg.N
    out = []
    for m in range(N + 1):
        for k in range(N + 1):
            out.append(({"phase_index": m, "b": k}, telemanip_operator(cfg, k, m)))
        if cfg.include_Tk_stage:
            for j in range(N + 1):
                out.append(({"phase_index": m, "loss": j}, telemanip_loss_operator(cfg, j, m)))
    return out


def branch_unitary(cfg: EngineeringConfig, k: int, m: int) -> np.ndarray:
    """U_{k Phi~} = U_Phi V^k U_{Phi~}^dag on H_b."""
    N = cfg.N
    V = build_Vb(cfg.converter)
    ph = phase_values(N, cfg.Phi)[m]
    return phase_correction(N, cfg.Phi) @ np.linalg.matrix_power(V, k) @ phase_correction(N, ph).conj().T


# ------------------------------------------------------------------ protocol runs


def _bob_space(N: int):
    return source_space(N, "a'")


def run_telemanip_conditional(rho_alice, cfg: EngineeringConfig) -> OutcomeRecord:
    """Bob opens the shutter only on Alice's trigger for (b_0, Phi).

    The transcript and Bob's state for the closed-shutter case go into
    ``extra``.
    """
    N = cfg.N
    r = as_density(rho_alice, source_space(N)).matrix
    channel = ClassicalChannel()
    bob = PartyState(Role.BOB, ("a'",))
    success = None
    for t, (label, Y) in enumerate(telemanip_outcomes(cfg)):
        if label.get("b") == 0 and label["phase_index"] == 0:
            channel.send(ClassicalMessage("trigger", timestamp=t))
            success = Y
    msg = channel.receive()
    if msg is not None and msg.kind == "trigger":
        bob.shutter_open = True
    rec = apply_kraus(success, r, _bob_space(N), {"phase_index": 0, "b": 0})
    closed = DensityOperator(_bob_space(N), bob_marginal(rho_alice, cfg))
    return OutcomeRecord(
        rec.label, rec.probability, rec.post_state if bob.shutter_open else closed,
        rec.effective_operator,
        extra={"transcript": channel.transcript, "shutter_open": bob.shutter_open,
               "closed_shutter_state": closed},
    )


def run_telemanip_unconditional(rho_alice, cfg: EngineeringConfig) -> OutcomeRecord:
    """Alice reports (k, Phi~) for every click; Bob undoes ``U_{k Phi~}``.

    Bob's correction lifts his mode into the single-photon sector, applies
    ``U_{k Phi~}^dag`` and converts back, each conversion unconditional.
    Branch operators are ``P^dag U^dag A^* U P``.
    """
    N = cfg.N
    r = as_density(rho_alice, source_space(N)).matrix
    P = cfg.converter.iso.matrix
    channel = ClassicalChannel()
    bob = PartyState(Role.BOB, ("a'",))
    branches = []
    for t, (label, Y) in enumerate(telemanip_outcomes(cfg)):
        if "b" not in label:
            continue
        k, m = label["b"], label["phase_index"]
        ph = float(phase_values(N, cfg.Phi)[m])
        channel.send(ClassicalMessage("outcome-report", k, ph, timestamp=t))
        msg = channel.receive()
        Ukm = branch_unitary(cfg, msg.channel, m)
        bob.pending_corrections.append(Ukm.conj().T)
        corr = bob.pending_corrections.popleft()
        Ups = (N + 1) * P.conj().T @ corr @ P @ Y
        rec = apply_kraus(Ups, r, _bob_space(N), dict(label, phase=ph),
                          extra={"raw_operator": Y})
        # the correction loop succeeds with certainty, so the branch weight is that of Y
        p = float(np.trace(Y @ r @ Y.conj().T).real)
        branches.append(OutcomeRecord(rec.label, p, rec.post_state, Ups, extra=rec.extra))
    total = sum(b.probability for b in branches)
    mix = sum(b.probability * b.post_state.matrix for b in branches if b.possible)
    agg = DensityOperator(_bob_space(N), mix / total) if total > 0 else None
    return OutcomeRecord(
        {"aggregate": True}, total, agg, None, tuple(branches),
        extra={"transcript": channel.transcript},
    )


# ------------------------------------------------------------------ reduced states


def _device_on(space, a_mode: str, cfg: EngineeringConfig) -> np.ndarray:
    """Device unitary on a joint space containing ``a_mode`` and the b-sector."""
    N = cfg.N
    local = product_space(source_space(N, a_mode), target_space(N))
    V = build_Vb(cfg.converter)
    blocks = _powers(V, N)
    # local basis: a-index fastest
    op = np.zeros((local.dim, local.dim), dtype=complex)
    for n in range(N + 1):
        idx = np.arange(N + 1) * (N + 1) + n
        op[np.ix_(idx, idx)] = blocks[n]
    return embed_operator(op, local, space)


def _b_operator(space, op: np.ndarray, N: int) -> np.ndarray:
    return embed_operator(op, target_space(N), space)


def _joint(N: int):
    return product_space(source_space(N, "a"), source_space(N, "a'"), target_space(N))


def _initial(rho_a: np.ndarray, N: int) -> DensityOperator:
    space = _joint(N)
    psi_p = pegg_barnett_state(N, 0.0)
    e0 = np.zeros(N + 1, dtype=complex)
    e0[0] = 1
    aux = np.kron(e0, psi_p)  # b slower than a'
    aux_rho = np.outer(aux, aux.conj())
    return DensityOperator(space, np.kron(aux_rho, rho_a), check=False)


def _project_b0(space, N: int) -> np.ndarray:
    proj = np.zeros((N + 1, N + 1), dtype=complex)
    proj[0, 0] = 1
    return _b_operator(space, proj, N)


def reduced_states_engineering(rho, cfg: EngineeringConfig) -> tuple[DensityOperator, DensityOperator]:
    """Outputs of the engineering layout with the phase detector removed.

    ``rho_red`` is the a-mode leaving the right converter; ``rho_red_prime``
    is the a'-mode heralded on a click in b_0.
    """
    N = cfg.N
    r = as_density(rho, source_space(N)).matrix
    init = _initial(r, N)
    sp = init.space
    M = _device_on(sp, "a", cfg)
    Mp = _device_on(sp, "a'", cfg)
    X3 = Mp.conj().T @ _b_operator(sp, cfg.A_b @ phase_correction(N, cfg.Phi), N) @ M
    after_right = M @ init.matrix @ M.conj().T
    rho_red = partial_trace(DensityOperator(sp, after_right, check=False), ["a"])
    K = _project_b0(sp, N) @ X3
    out = K @ init.matrix @ K.conj().T
    p = np.trace(out).real
    rho_red_p = partial_trace(DensityOperator(sp, out / p, check=False), ["a'"])
    return rho_red, rho_red_p


def reduced_states_telemanip(rho, cfg: EngineeringConfig) -> tuple[DensityOperator, DensityOperator]:
    """Outputs of the telemanipulation layout with Alice's phase detector removed.

    ``rho_red`` is Alice's a-mode heralded on b_0; ``rho_red_prime`` is Bob's
    mode without any heralding.
    """
    N = cfg.N
    r = as_density(rho, source_space(N)).matrix
    init = _initial(r, N)
    sp = init.space
    M = _device_on(sp, "a", cfg)
    Mp = _device_on(sp, "a'", cfg)
    X4 = Mp.conj().T @ _b_operator(sp, cfg.A_b @ phase_correction(N, cfg.Phi).conj().T, N) @ M
    K = _project_b0(sp, N) @ X4.conj().T
    out = K @ init.matrix @ K.conj().T
    p = np.trace(out).real
    rho_red = partial_trace(DensityOperator(sp, out / p, check=False), ["a"])
    src = Mp @ init.matrix @ Mp.conj().T
    rho_red_p = partial_trace(DensityOperator(sp, src, check=False), ["a'"])
    return rho_red, rho_red_p


def dephase(rho: np.ndarray) -> np.ndarray:
    return np.diag(np.diag(rho))


def engineering_reduced_closed_form(rho, cfg: EngineeringConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """Dephased input, and Y_red rho_red Y_red^dag / p with Y_red = A / sqrt(N+1)."""
    N = cfg.N
    r = as_density(rho, source_space(N)).matrix
    red = dephase(r)
    P = cfg.converter.iso.matrix
    Y = P.conj().T @ cfg.A_b @ P / np.sqrt(N + 1)
    out = Y @ red @ Y.conj().T
    p = float(np.trace(out).real)
    return red, out / p, p


def rotated_R(cfg: EngineeringConfig) -> np.ndarray:
    """R_a(Phi) = exp(i Phi n) R_a exp(-i Phi n)."""
    D = phase_correction(cfg.N, cfg.Phi)
    P = cfg.converter.iso.matrix
    return D @ (P.conj().T @ cfg.R_b @ P) @ D.conj().T


def telemanip_reduced_closed_form(rho, cfg: EngineeringConfig) -> tuple[np.ndarray, float]:
    """Hadamard-weighted input with weights (R(Phi)^dag R(Phi))_{mn} / (N+1)."""
    N = cfg.N
    r = as_density(rho, source_space(N)).matrix
    R = rotated_R(cfg)
    Wt = R.conj().T @ R / (N + 1)
    p = float(np.real(np.sum(np.diag(Wt) * np.diag(r))))
    return Wt * r / p, p


def bob_marginal(rho_alice, cfg: EngineeringConfig) -> np.ndarray:
    """Bob's state when Alice sends nothing."""
    return reduced_states_telemanip(rho_alice, cfg)[1].matrix
