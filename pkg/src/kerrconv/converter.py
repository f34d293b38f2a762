"""Cross-Kerr state converter: single-mode states <-> single-photon multimode states.

The device sandwiches one cross-Kerr coupler per b-mode between a multiport
``W`` and its inverse. On ``|n>_a (x) |phi_l>`` it acts as ``|n> (x) V^n |phi_l>``
with ``V = W^dag diag(exp(i kappa)) W``. The canonical parameters turn ``V``
into the cyclic shift ``|phi_k> -> |phi_{k+1 mod N+1}>``.

Everything here is the fast path: operators on the source space ``H_a``
(dimension N+1) and the single-photon sector ``H_b`` (dimension N+1), with
vacuum-projected splitters replaced by ``diag(T ** n)``. The dense
brute-force counterpart lives in :mod:`kerrconv.oracle`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .fock import (
    ConfigurationError,
    DensityOperator,
    FockSpace,
    IsomorphismMap,
    SpaceMismatchError,
    as_density,
    build_space,
    embed_operator,
    fidelity,
    product_space,
    source_space,
    target_space,
)
from .optics import MultiportUnitary, multiport_matrix, _local_space

IMPOSSIBLE_TOL = 1e-15
MAX_TRIALS_FACTOR = 10


# ------------------------------------------------------------------ phase states


def pegg_barnett_state(N: int, Phi: float = 0.0) -> np.ndarray:
    k = np.arange(N + 1)
    return np.exp(1j * Phi * k) / np.sqrt(N + 1)


def phase_basis(N: int, offset: float = 0.0) -> np.ndarray:
    """Columns |Phi_m>, Phi_m = offset + 2 pi m / (N + 1): an orthonormal basis."""
    return np.stack(
        [pegg_barnett_state(N, offset + 2 * np.pi * m / (N + 1)) for m in range(N + 1)], axis=1
    )


def phase_values(N: int, offset: float = 0.0) -> np.ndarray:
    return offset + 2 * np.pi * np.arange(N + 1) / (N + 1)


def detection_basis(psi: np.ndarray) -> np.ndarray:
    """Orthonormal basis whose first column is ``psi``."""
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    d = psi.shape[0]
    Q, _ = np.linalg.qr(np.column_stack([psi, np.eye(d, dtype=complex)]))
    Q = Q[:, :d]
    Q[:, 0] = psi
    # re-orthonormalize the completion against the exact first column
    for j in range(1, d):
        v = Q[:, j] - Q[:, :j] @ (Q[:, :j].conj().T @ Q[:, j])
        Q[:, j] = v / np.linalg.norm(v)
    return Q


def canonical_kappas(N: int) -> np.ndarray:
    return -2 * np.pi * np.arange(N + 1) / (N + 1)


def canonical_W(N: int) -> np.ndarray:
    k = np.arange(N + 1)
    return np.exp(-2j * np.pi * np.outer(k, k) / (N + 1)) / np.sqrt(N + 1)


def b_modes(N: int, prefix: str = "b") -> tuple[str, ...]:
    return tuple(f"{prefix}{k}" for k in range(N + 1))


# ------------------------------------------------------------------ configuration


@dataclass(frozen=True, eq=False)
class ConverterConfig:
    """Converter parameters.

    Attributes:
        N: truncation order of the single-mode space.
        kappas: cross-Kerr strengths, one per b-mode.
        W: multiport sandwiching the Kerr couplers.
        target: state |Psi> detected (a -> b) or prepared (b -> a) on the a-mode.
        Tk: splitter transmittances coupling b_k to the loss mode c_k.
        Phi: phase of the Pegg-Barnett detection state.
        phase_detection: True when ``target`` is the Pegg-Barnett state.
    """

    N: int
    kappas: np.ndarray
    W: MultiportUnitary
    target: np.ndarray
    Tk: np.ndarray
    Phi: float = 0.0
    phase_detection: bool = True

    def __post_init__(self):
        N = self.N
        if N < 0:
            raise ConfigurationError("N must be non-negative")
        kap = np.asarray(self.kappas, dtype=float)
        if kap.shape != (N + 1,):
            raise ConfigurationError(f"need {N + 1} Kerr strengths, got {kap.shape}")
        object.__setattr__(self, "kappas", kap)
        psi = np.asarray(self.target, dtype=complex)
        if psi.shape != (N + 1,) or abs(np.linalg.norm(psi) - 1) > 1e-12:
            raise ConfigurationError("detection target must be a normalized (N+1)-vector")
        if np.abs(psi).min() <= 1e-12:
            raise ConfigurationError("detection target has a vanishing Fock coefficient")
        object.__setattr__(self, "target", psi)
        Tk = np.asarray(self.Tk, dtype=complex)
        if Tk.shape != (N + 1,) or np.abs(Tk).max() > 1 + 1e-12:
            raise ConfigurationError("transmittances must be N+1 values with |T_k| <= 1")
        object.__setattr__(self, "Tk", Tk)
        if self.W.matrix.shape != (N + 1, N + 1):
            raise ConfigurationError("W must act on N+1 modes")

    @classmethod
    def canonical(
        cls,
        N: int,
        psi: str | Sequence[complex] = "phase",
        Phi: float = 0.0,
        kappas: Sequence[float] | None = None,
        W: np.ndarray | None = None,
    ) -> "ConverterConfig":
        """Cyclic-shift converter with splitters matched to the detection state."""
        if isinstance(psi, str):
            if psi != "phase":
                raise ConfigurationError(f"unknown detection target {psi!r}")
            target, phase = pegg_barnett_state(N, Phi), True
        else:
            target = np.asarray(psi, dtype=complex)
            target = target / np.linalg.norm(target)
            phase = False
        if np.abs(target).min() <= 1e-12:
            raise ConfigurationError("detection target has a vanishing Fock coefficient")
        kap = canonical_kappas(N) if kappas is None else np.asarray(kappas, dtype=float)
        Wm = canonical_W(N) if W is None else np.asarray(W, dtype=complex)
        return cls(
            N, kap, MultiportUnitary(b_modes(N), Wm), target, matched_transmittances(target),
            float(Phi), phase,
        )

    def with_transmittances(self, Tk) -> "ConverterConfig":
        return replace(self, Tk=np.asarray(Tk, dtype=complex))

    @property
    def min_overlap(self) -> float:
        return float(np.abs(self.target).min())

    @property
    def iso(self) -> IsomorphismMap:
        return IsomorphismMap.standard(self.N)

    @property
    def source(self) -> FockSpace:
        return source_space(self.N)

    @property
    def target_space(self) -> FockSpace:
        return target_space(self.N)

    @property
    def reflectances(self) -> np.ndarray:
        return np.sqrt(np.clip(1 - np.abs(self.Tk) ** 2, 0, None)).astype(complex)


def matched_transmittances(psi: np.ndarray) -> np.ndarray:
    """T_k = |<k|Psi>|_min / <Psi|k>, all of modulus <= 1."""
    psi = np.asarray(psi, dtype=complex)
    return np.abs(psi).min() / psi.conj()


# ------------------------------------------------------------------ device


def build_Vb(cfg: ConverterConfig) -> np.ndarray:
    W = cfg.W.matrix
    return W.conj().T @ np.diag(np.exp(1j * cfg.kappas)) @ W


def cyclic_shift(N: int) -> np.ndarray:
    return np.roll(np.eye(N + 1, dtype=complex), 1, axis=0)


def is_cyclic(cfg: ConverterConfig, tol: float = 1e-12) -> bool:
    return np.abs(build_Vb(cfg) - cyclic_shift(cfg.N)).max() <= tol


def _powers(V: np.ndarray, n: int) -> list[np.ndarray]:
    out = [np.eye(V.shape[0], dtype=complex)]
    for _ in range(n):
        out.append(V @ out[-1])
    return out


def build_M(cfg: ConverterConfig, space: FockSpace | None = None, a_mode: str = "a") -> np.ndarray:
    """Device unitary V^{n_a}, block by block in the a-mode photon number.

    Without ``space`` the result acts on ``H_a (x) H_b``. Any other space must
    contain ``a_mode`` (cutoff N) and the b-modes; the b-part of each block is
    then the induced multi-photon unitary of ``V^n``.
    """
    N = cfg.N
    V = build_Vb(cfg)
    bm = cfg.W.modes
    if space is None:
        space = source_space(N, a_mode) * target_space(N)
    if space.cutoff(a_mode) != N:
        raise SpaceMismatchError(f"a-mode cutoff {space.cutoff(a_mode)} != N = {N}")
    for m in bm:
        space.mode_index(m)
    local_b = _local_space(space, bm)
    ja = space.mode_index(a_mode)
    M = np.zeros((space.dim, space.dim), dtype=complex)
    occ_a = np.array([s[ja] for s in space.basis])
    for n, Vn in enumerate(_powers(V, N)):
        ind = multiport_matrix(MultiportUnitary(bm, Vn), local_b)
        M += embed_operator(ind, local_b, space) * (occ_a == n)[None, :]
    return M


# ------------------------------------------------------------------ outcomes


@dataclass(frozen=True)
class TrialStatistics:
    runs: int
    counts: np.ndarray
    cap: int
    cap_exceeded: int
    min_fidelity: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.counts))

    @property
    def stderr(self) -> float:
        return float(np.std(self.counts, ddof=1) / np.sqrt(len(self.counts)))


@dataclass(frozen=True, eq=False)
class OutcomeRecord:
    """A measurement outcome with its probability and renormalized post-state."""

    label: dict
    probability: float
    post_state: DensityOperator | None
    effective_operator: np.ndarray
    branches: tuple["OutcomeRecord", ...] = ()
    trials: TrialStatistics | None = None
    extra: dict = field(default_factory=dict)

    @property
    def possible(self) -> bool:
        return self.post_state is not None


def apply_kraus(
    Y: np.ndarray, rho: np.ndarray, space: FockSpace | None, label: dict, **kw
) -> OutcomeRecord:
    """Outcome record for Kraus operator ``Y`` acting on ``rho``.

    A vanishing probability yields a record without post-state instead of a
    division by zero.
    """
    out = Y @ rho @ Y.conj().T
    p = float(np.trace(out).real)
    post = None
    if p > IMPOSSIBLE_TOL and space is not None:
        post = DensityOperator(space, out / p, check=False)
    return OutcomeRecord(label, max(p, 0.0), post, Y, **kw)


def _rho(x, space: FockSpace) -> np.ndarray:
    return as_density(x, space).matrix


def _sector_one(rho_b, cfg: ConverterConfig) -> np.ndarray:
    """Density matrix on H_b; rejects weight outside the single-photon sector."""
    tgt = cfg.target_space
    if isinstance(rho_b, DensityOperator) and rho_b.space != tgt:
        sp = rho_b.space
        if set(sp.modes) != set(tgt.modes):
            raise SpaceMismatchError(f"b-state on {sp.modes}, expected {tgt.modes}")
        idx = []
        for s in tgt.basis:
            occ = dict(zip(tgt.modes, s))
            full = tuple(occ[m] for m in sp.modes)
            if not sp.contains(full):
                raise ConfigurationError("input space lacks single-photon states")
            idx.append(sp.index(full))
        m = rho_b.matrix
        if abs(np.trace(m).real - np.trace(m[np.ix_(idx, idx)]).real) > 1e-12:
            raise ConfigurationError("input has weight outside the single-photon sector")
        return m[np.ix_(idx, idx)]
    return _rho(rho_b, tgt)


def a2b_operator(cfg: ConverterConfig, chi: np.ndarray, splitters: bool = True) -> np.ndarray:
    """<chi|_a <0_c| (splitters) M |phi_0>: H_a -> H_b."""
    N = cfg.N
    T = cfg.Tk if splitters else np.ones(N + 1)
    e0 = np.zeros(N + 1, dtype=complex)
    e0[0] = 1
    cols = [np.conj(chi[n]) * T * (Vn @ e0) for n, Vn in enumerate(_powers(build_Vb(cfg), N))]
    return np.stack(cols, axis=1)


def a2b_loss_operator(cfg: ConverterConfig, chi: np.ndarray, j: int) -> np.ndarray:
    """Photon found in loss mode c_j: H_a -> b-vacuum (a 1 x (N+1) row)."""
    N = cfg.N
    amp = -np.conj(cfg.reflectances[j])
    row = [np.conj(chi[n]) * amp * Vn[j, 0] for n, Vn in enumerate(_powers(build_Vb(cfg), N))]
    return np.array([row])


def b2a_operator(cfg: ConverterConfig, prep: np.ndarray, k: int, splitters: bool = True) -> np.ndarray:
    """<phi_k| M^dag (reversed splitters) |prep>_a: H_b -> H_a."""
    N = cfg.N
    T = cfg.Tk if splitters else np.ones(N + 1)
    Vd = build_Vb(cfg).conj().T
    rows = [prep[n] * Vn[k, :] * np.conj(T) for n, Vn in enumerate(_powers(Vd, N))]
    return np.stack(rows, axis=0)


def b2a_loss_operator(cfg: ConverterConfig, prep: np.ndarray, j: int) -> np.ndarray:
    """Photon found in loss mode c_j: the a-mode keeps the prepared state."""
    N = cfg.N
    Y = np.zeros((N + 1, N + 1), dtype=complex)
    Y[:, j] = np.conj(cfg.reflectances[j]) * np.asarray(prep)
    return Y


def _detect_basis(cfg: ConverterConfig) -> np.ndarray:
    if cfg.phase_detection:
        return phase_basis(cfg.N, cfg.Phi)
    return detection_basis(cfg.target)


def a2b_outcomes(cfg: ConverterConfig) -> list[tuple[dict, np.ndarray]]:
    """Complete Kraus set of the a -> b converter (a-mode basis x c-detector clicks)."""
    out = []
    B = _detect_basis(cfg)
    for m in range(cfg.N + 1):
        chi = B[:, m]
        out.append(({"a": m, "c": None}, a2b_operator(cfg, chi)))
        for j in range(cfg.N + 1):
            out.append(({"a": m, "c": j}, a2b_loss_operator(cfg, chi, j)))
    return out


def b2a_outcomes(cfg: ConverterConfig) -> list[tuple[dict, np.ndarray]]:
    """Complete Kraus set of the b -> a converter (click in b_k or loss in c_j)."""
    out = [({"b": k}, b2a_operator(cfg, cfg.target, k)) for k in range(cfg.N + 1)]
    out += [({"c": j}, b2a_loss_operator(cfg, cfg.target, j)) for j in range(cfg.N + 1)]
    return out


def phase_correction(N: int, phase: float) -> np.ndarray:
    """U_Phi = exp(i Phi sum_k k n_k) on H_b."""
    return np.diag(np.exp(1j * phase * np.arange(N + 1)))


# ------------------------------------------------------------------ conditional conversion


def convert_a_to_b(rho_a, cfg: ConverterConfig) -> OutcomeRecord:
    """Post-select c-vacuum and the detection state on the a-mode."""
    rho = _rho(rho_a, cfg.source)
    Y = a2b_operator(cfg, cfg.target)
    return apply_kraus(Y, rho, cfg.target_space, {"a": "target", "c": "vacuum"})


def convert_b_to_a(rho_b, cfg: ConverterConfig) -> OutcomeRecord:
    """Prepare the detection state on the a-mode, post-select a click in b_0."""
    rho = _sector_one(rho_b, cfg)
    Y = b2a_operator(cfg, cfg.target, 0)
    return apply_kraus(Y, rho, cfg.source, {"b": 0})


# ------------------------------------------------------------------ unconditional conversion


def _require_cyclic(cfg: ConverterConfig):
    if not is_cyclic(cfg):
        raise ConfigurationError("unconditional operation needs the cyclic-shift converter")


def unconditional_a2b_branches(cfg: ConverterConfig) -> list[tuple[dict, np.ndarray, np.ndarray]]:
    """(label, raw, corrected) per phase outcome; corrected applies U_Phi~."""
    N = cfg.N
    B = phase_basis(N, cfg.Phi)
    out = []
    for m, ph in enumerate(phase_values(N, cfg.Phi)):
        raw = a2b_operator(cfg, B[:, m], splitters=False)
        out.append(({"phase_index": m, "phase": float(ph)}, raw, phase_correction(N, ph) @ raw))
    return out


def convert_unconditional_a_to_b(rho_a, cfg: ConverterConfig) -> OutcomeRecord:
    """Phase measurement plus feed-forward: every outcome yields the lifted state."""
    _require_cyclic(cfg)
    rho = _rho(rho_a, cfg.source)
    branches = []
    for label, raw, corr in unconditional_a2b_branches(cfg):
        rec = apply_kraus(corr, rho, cfg.target_space, label, extra={"raw_operator": raw})
        branches.append(rec)
    Ups = cfg.iso.matrix
    total = apply_kraus(Ups, rho, cfg.target_space, {"aggregate": True}, branches=tuple(branches))
    return total


def b2a_trial_branches(cfg: ConverterConfig) -> list[np.ndarray]:
    """Per-trial Kraus operators <phi_k|M^dag|0_P> of the unconditional b -> a converter."""
    prep = pegg_barnett_state(cfg.N, 0.0)
    return [b2a_operator(cfg, prep, k, splitters=False) for k in range(cfg.N + 1)]


def convert_unconditional_b_to_a(
    rho_b,
    cfg: ConverterConfig,
    rng: np.random.Generator | None = None,
    runs: int = 0,
) -> OutcomeRecord:
    """Repeat-until-success conversion H_b -> H_a.

    A click in b_k != 0 leaves ``P^dag V^{dag k}`` applied; the state is sent
    back through the a -> b converter, shifted by ``V^k`` and retried. The
    analytic record carries the first-trial branches; with ``rng`` and
    ``runs > 0`` the loop is sampled and trial statistics are attached.
    """
    _require_cyclic(cfg)
    N = cfg.N
    rho = _sector_one(rho_b, cfg)
    V = build_Vb(cfg)
    P = cfg.iso.matrix
    Vp = _powers(V, N)
    branches = []
    for k, Y in enumerate(b2a_trial_branches(cfg)):
        rec = apply_kraus(Y, rho, cfg.source, {"b": k})
        restored = None
        if rec.possible:
            back = P @ rec.post_state.matrix @ P.conj().T
            restored = Vp[k] @ back @ Vp[k].conj().T
        branches.append(
            OutcomeRecord(rec.label, rec.probability, rec.post_state, Y,
                          extra={"restored_fidelity": None if restored is None
                                 else fidelity(restored, rho)})
        )
    trials = None
    if rng is not None and runs > 0:
        trials = _sample_repeat_until_success(rho, cfg, rng, runs)
    Ups = P.conj().T
    return apply_kraus(Ups, rho, cfg.source, {"aggregate": True}, branches=tuple(branches),
                       trials=trials)


def _sample_repeat_until_success(rho, cfg, rng, runs) -> TrialStatistics:
    N = cfg.N
    cap = MAX_TRIALS_FACTOR * (N + 1)
    P = cfg.iso.matrix
    target = P.conj().T @ rho @ P
    Ys = b2a_trial_branches(cfg)
    lifts = [c for _, _, c in unconditional_a2b_branches(cfg)]
    Vp = _powers(build_Vb(cfg), N)
    counts = np.empty(runs, dtype=int)
    exceeded = 0
    min_fid = 1.0
    for r in range(runs):
        state = rho
        for trial in range(1, cap + 1):
            outs = [Y @ state @ Y.conj().T for Y in Ys]
            probs = np.array([np.trace(o).real for o in outs])
            k = rng.choice(N + 1, p=probs / probs.sum())
            a_state = outs[k] / probs[k]
            if k == 0:
                min_fid = min(min_fid, fidelity(a_state, target))
                break
            louts = [C @ a_state @ C.conj().T for C in lifts]
            lp = np.array([np.trace(o).real for o in louts])
            m = rng.choice(N + 1, p=lp / lp.sum())
            b_state = louts[m] / lp[m]
            state = Vp[k] @ b_state @ Vp[k].conj().T
        else:
            exceeded += 1
        counts[r] = trial
    return TrialStatistics(runs, counts, cap, exceeded, min_fid)


def device_space(N: int, a_mode: str = "a") -> FockSpace:
    """H_a (x) H_b, the fast-path joint space of one converter."""
    return product_space(source_space(N, a_mode), target_space(N))
