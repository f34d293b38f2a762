"""State measurement with the engineering layout and a vacuum-fed left converter.

Everything a measurement routine learns about the input goes through a
:class:`ProbeChannel`, which exposes detector click probabilities (or sampled
click frequencies) for a chosen array ``U`` and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .engineering import (
    EngineeringConfig,
    LeftInput,
    engineering_outcomes,
    left_operator,
    right_operator,
)
from .fock import ConfigurationError, DensityOperator, as_density, source_space
from .optics import MultiportUnitary


class TuningError(RuntimeError):
    """Optimizer budget exhausted; ``best`` holds the best result reached."""

    def __init__(self, message: str, best):
        super().__init__(message)
        self.best = best


def _vacuum_cfg(N: int, U=None) -> EngineeringConfig:
    return EngineeringConfig.from_parts(N, U=U, left_input=LeftInput.VACUUM)


class ProbeChannel:
    """Simulated detector readout for an unknown input state.

    ``signals(U)`` returns ``p(1_{b_k} | Phi)`` for every channel k with the
    array ``U`` inserted between the converters. With ``shots`` set, each call
    returns click frequencies from ``shots`` heralded events instead.
    """

    def __init__(self, rho, N: int | None = None, shots: int | None = None,
                 rng: np.random.Generator | None = None):
        if N is None:
            N = np.asarray(rho.matrix if isinstance(rho, DensityOperator) else rho).shape[0] - 1
        self.N = N
        if shots is not None and rng is None:
            raise ConfigurationError("shot sampling needs a seeded random generator")
        self.shots = shots
        self._rng = rng
        r = as_density(rho, source_space(N)).matrix
        cfg = _vacuum_cfg(N)
        right = right_operator(cfg, 0, feed_forward=False)
        entering = right @ r @ right.conj().T
        self._p_phase = float(np.trace(entering).real)
        self._sigma = entering / self._p_phase
        self._left = [left_operator(cfg, k) for k in range(N + 1)]
        self.evaluations = 0

    @property
    def phase_probability(self) -> float:
        return self._p_phase

    def exact_signals(self, U: np.ndarray) -> np.ndarray:
        W = U @ self._sigma @ U.conj().T
        return np.array([np.trace(L @ W @ L.conj().T).real for L in self._left])

    def signal(self, U: np.ndarray, k: int) -> float:
        return float(self.signals(U)[k])

    def signals(self, U: np.ndarray) -> np.ndarray:
        self.evaluations += 1
        p = self.exact_signals(np.asarray(U, dtype=complex))
        if self.shots is None:
            return p
        p = np.clip(p, 0, None)
        return self._rng.multinomial(self.shots, p / p.sum()) / self.shots

    @property
    def sigma(self) -> float:
        """Worst-case standard error of one sampled signal."""
        return 0.0 if self.shots is None else 0.5 / np.sqrt(self.shots)


def _channel(source, shots=None, rng=None) -> ProbeChannel:
    if isinstance(source, ProbeChannel):
        return source
    return ProbeChannel(source, shots=shots, rng=rng)


# ------------------------------------------------------------------ probes


def overlap_probe(rho, cfg: EngineeringConfig, k: int, conditional: bool = False) -> float:
    """Joint probability of a click in b_k and the phase outcome Phi (vacuum a'-input).

    With ``conditional`` the result is divided by the probability of the
    phase outcome, summed over every detector event.
    """
    N = cfg.N
    if not 0 <= k <= N:
        raise ConfigurationError(f"channel {k} out of range 0..{N}")
    r = as_density(rho, source_space(N)).matrix
    outcomes = engineering_outcomes(cfg.with_left_input(LeftInput.VACUUM))
    probs = {
        tuple(sorted(lbl.items())): float(np.trace(Y @ r @ Y.conj().T).real)
        for lbl, Y in outcomes
    }
    joint = probs[(("b", k), ("phase_index", 0))]
    if not conditional:
        return joint
    p_phase = sum(p for lbl, p in probs.items() if dict(lbl)["phase_index"] == 0)
    return joint / p_phase


def unconditional_probe(rho, cfg: EngineeringConfig) -> np.ndarray:
    """p(1_{b_k}) with the phase outcome fed forward instead of post-selected."""
    N = cfg.N
    r = as_density(rho, source_space(N)).matrix
    p = np.zeros(N + 1)
    for lbl, Y in engineering_outcomes(cfg.with_left_input(LeftInput.VACUUM), feed_forward=True):
        if "b" in lbl:
            p[lbl["b"]] += np.trace(Y @ r @ Y.conj().T).real
    return p


@dataclass(frozen=True, eq=False)
class ObservableDecomposition:
    Z: np.ndarray
    hermitian_parts: tuple[np.ndarray, np.ndarray]
    eigenvalues: tuple[np.ndarray, np.ndarray]
    unitaries: tuple[np.ndarray, np.ndarray]

    def reconstruct(self) -> np.ndarray:
        parts = [
            U.conj().T @ np.diag(lam) @ U for lam, U in zip(self.eigenvalues, self.unitaries)
        ]
        return parts[0] + 1j * parts[1]


def decompose_observable(Z: np.ndarray) -> ObservableDecomposition:
    """Cartesian split into Hermitian parts and their eigenbases.

    ``unitaries[j]`` maps eigenvector k of part j onto |k>, so that
    ``unitaries[j]^dag |k>`` is the state probed in channel k.
    """
    Z = np.asarray(Z, dtype=complex)
    re = (Z + Z.conj().T) / 2
    im = (Z - Z.conj().T) / 2j
    lams, Us = [], []
    for part in (re, im):
        lam, E = np.linalg.eigh(part)
        lams.append(lam)
        Us.append(E.conj().T)
    return ObservableDecomposition(Z, (re, im), tuple(lams), tuple(Us))


def expectation(Z: np.ndarray, source, shots=None, rng=None) -> complex:
    """Tr(rho Z) from click statistics in the two eigenbases of the Hermitian parts."""
    ch = _channel(source, shots, rng)
    Z = np.asarray(Z, dtype=complex)
    if Z.shape != (ch.N + 1, ch.N + 1):
        raise ConfigurationError(f"observable shape {Z.shape} does not match N = {ch.N}")
    dec = decompose_observable(Z)
    total = 0j
    for j in range(2):
        total += (1j ** j) * float(dec.eigenvalues[j] @ ch.signals(dec.unitaries[j]))
    return complex(total)


def symmetric_splitter(N: int, m: int, n: int, j: int) -> np.ndarray:
    """Array U_j coupling channels n and m by a symmetric splitter with phase i^j."""
    Ud = np.eye(N + 1, dtype=complex)
    s = 1 / np.sqrt(2)
    Ud[n, n] = s
    Ud[m, n] = (1j ** j) * s
    Ud[n, m] = -(1j ** -j) * s
    Ud[m, m] = s
    return Ud.conj().T


def matrix_element(source, m: int, n: int, shots=None, rng=None) -> complex:
    """<m|rho|n> from the clicks in channels n and m behind a symmetric splitter."""
    ch = _channel(source, shots, rng)
    if m == n:
        return complex(ch.signals(np.eye(ch.N + 1))[n])
    f = ch.signals(symmetric_splitter(ch.N, m, n, 0))
    g = ch.signals(symmetric_splitter(ch.N, m, n, 1))
    return complex(0.5 * (f[n] - f[m]) + 0.5j * (g[n] - g[m]))


def reconstruct_fock_matrix(source, shots=None, rng=None) -> np.ndarray:
    """Full Fock-basis density matrix, one splitter setting pair per element."""
    ch = _channel(source, shots, rng)
    N = ch.N
    rho = np.zeros((N + 1, N + 1), dtype=complex)
    rho[np.diag_indices(N + 1)] = ch.signals(np.eye(N + 1))
    for m in range(N + 1):
        for n in range(m + 1, N + 1):
            rho[m, n] = matrix_element(ch, m, n)
            rho[n, m] = np.conj(rho[m, n])
    return rho


# ------------------------------------------------------------------ tuning


def stage_unitary(N: int, k: int, angles: np.ndarray) -> np.ndarray:
    """Sub-array acting on channels k..N: nearest-neighbour rotations, last pair first.

    Row k sweeps all unit vectors on channels k..N (up to a global phase);
    rows 0..k-1 are untouched.
    """
    S = np.eye(N + 1, dtype=complex)
    for i, j in enumerate(range(k, N)):
        th, ph = angles[2 * i], angles[2 * i + 1]
        c, s = np.cos(th), np.sin(th)
        G = np.array([[c, -np.exp(-1j * ph) * s], [np.exp(1j * ph) * s, c]])
        S[:, j : j + 2] = S[:, j : j + 2] @ G
    return S


@dataclass
class TuningState:
    stage: int
    angles: np.ndarray
    best_signal: float
    frozen: list[np.ndarray] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class DiagonalizationResult:
    unitary: MultiportUnitary
    eigenvalues: np.ndarray
    signals_history: list[list[float]]
    stages: list[np.ndarray]
    evaluations: int
    converged: bool = True

    def reconstruct(self) -> np.ndarray:
        U = self.unitary.matrix
        return U.conj().T @ np.diag(self.eigenvalues.astype(complex)) @ U


def _golden_step(
    g: Callable[[float], float], t0: float, grid: int, xtol: float, h: float | None = None
) -> tuple[float, float]:
    """Minimize a 2 pi periodic function of one angle.

    With ``h`` unset a coarse grid over the full period picks the starting
    bracket; otherwise the search starts from ``(t0 - h, t0)`` and lets the
    bracket expand.
    """
    if h is None:
        h = 2 * np.pi / grid
        ts = t0 + h * (np.arange(grid) - grid // 2)
        vals = np.array([g(t) for t in ts])
        j = int(np.argmin(vals))
        best_t, best_v = ts[j], vals[j]
        if not (vals[(j - 1) % grid] > best_v and vals[(j + 1) % grid] > best_v):
            return best_t, best_v
        bracket = (best_t - h, best_t, best_t + h)
    else:
        best_t, best_v = t0, g(t0)
        bracket = (t0 - h, t0)
    try:
        res = minimize_scalar(g, bracket=bracket, method="golden", tol=xtol)
    except (ValueError, RuntimeError):
        return best_t, best_v
    if res.fun < best_v:
        best_t, best_v = float(res.x), float(res.fun)
    return best_t, best_v


def optimize_stage(
    signal: Callable[[np.ndarray], float],
    n_angles: int,
    maximize: bool = True,
    tol: float = 1e-14,
    max_cycles: int = 400,
    grid: int = 12,
    xtol: float = 1e-10,
    angles: np.ndarray | None = None,
) -> tuple[np.ndarray, float, list[float], bool]:
    """Coordinate cycling over the angles until one full cycle gains less than ``tol``.

    The first cycle scans each angle on a grid; later cycles refine locally.
    Every cycle ends with a golden-section search along the net move of the
    cycle, which keeps coupled angles from zig-zagging.
    """
    sign = 1.0 if maximize else -1.0
    x = np.zeros(n_angles) if angles is None else np.array(angles, dtype=float)

    def cost(y):
        return -sign * signal(y)

    current = cost(x)
    history = [-sign * current]
    if n_angles == 0:
        return x, -sign * current, history, True
    steps = None
    for cycle in range(max_cycles):
        start, x_start = current, x.copy()
        new_steps = np.zeros(n_angles)
        for i in range(n_angles):
            def g(t, i=i):
                y = x.copy()
                y[i] = t
                return cost(y)

            h = None if steps is None else max(4 * abs(steps[i]), 1e-7)
            t, v = _golden_step(g, x[i], grid, xtol, h)
            if v < current:
                new_steps[i] = t - x[i]
                x[i] = t
                current = v
        d = x - x_start
        if cycle > 0 and np.abs(d).max() > 0:
            def line(s):
                return cost(x_start + s * d)

            s, v = _golden_step(line, 1.0, grid, xtol, 0.5)
            if v < current:
                x = x_start + s * d
                current = v
        x = np.mod(x, 2 * np.pi)
        steps = new_steps
        history.append(-sign * current)
        if start - current < tol:
            return x, -sign * current, history, True
    return x, -sign * current, history, False


def diagonalize_experimentally(
    source,
    direction: str = "max",
    tol: float = 1e-14,
    max_cycles: int = 400,
    grid: int = 12,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> DiagonalizationResult:
    """Tune the sub-arrays U_{0..N}, U_{1..N}, ... one after another.

    Stage k extremizes the click probability in channel k; earlier channels
    are left alone because stage k only mixes channels k..N. The extremal
    signals are the eigenvalues, descending for ``"max"`` and ascending for
    ``"min"``, and ``U^dag |k>`` are the eigenvectors.
    """
    if direction not in ("max", "min"):
        raise ConfigurationError(f"direction must be 'max' or 'min', got {direction!r}")
    ch = _channel(source, shots, rng)
    N = ch.N
    maximize = direction == "max"
    if ch.shots is not None:
        tol = max(tol, 3 * ch.sigma)
    U = np.eye(N + 1, dtype=complex)
    state = TuningState(0, np.zeros(0), 1.0)
    history: list[list[float]] = []
    converged = True
    for k in range(N):
        n_angles = 2 * (N - k)
        base = U

        def signal(x, k=k, base=base):
            return float(ch.signals(stage_unitary(N, k, x) @ base)[k])

        x, best, hist, ok = optimize_stage(signal, n_angles, maximize, tol, max_cycles, grid)
        S = stage_unitary(N, k, x)
        U = S @ U
        state = TuningState(k, x, best, state.frozen + [S])
        history.append(hist)
        if not ok:
            converged = False
            partial = DiagonalizationResult(
                MultiportUnitary(tuple(f"b{i}" for i in range(N + 1)), U),
                np.asarray(ch.signals(U)), history, state.frozen, ch.evaluations, False,
            )
            raise TuningError(f"stage {k} did not converge in {max_cycles} cycles", partial)
    final = np.asarray(ch.signals(U), dtype=float)
    history.append([float(final[N])])
    return DiagonalizationResult(
        MultiportUnitary(tuple(f"b{i}" for i in range(N + 1)), U),
        final, history, state.frozen, ch.evaluations, converged,
    )


@dataclass(frozen=True, eq=False)
class PurificationResult:
    fidelity: float
    state: DensityOperator
    U_R: MultiportUnitary
    probability: float


def qnd_purify(rho, tol: float = 1e-14, max_cycles: int = 400, grid: int = 12) -> PurificationResult:
    """Tune U_R of the projective configuration T_k = delta_{k0} for maximal success.

    The maximal probability times (N+1)^2 is the overlap of the input with the
    projected output state, i.e. the largest eigenvalue.
    """
    from .engineering import run_engineering

    r = as_density(rho, source_space(np.asarray(
        rho.matrix if isinstance(rho, DensityOperator) else rho).shape[0] - 1)).matrix
    N = r.shape[0] - 1
    T = np.zeros(N + 1)
    T[0] = 1
    base = EngineeringConfig.from_parts(N, Tk=T)
    right = right_operator(base, 0, feed_forward=False)
    left = left_operator(base, 0)
    sigma = right @ r @ right.conj().T

    def probability(x):
        UR = stage_unitary(N, 0, x)
        Rb = UR.conj().T @ np.diag(T.astype(complex)) @ UR
        Y = left @ Rb
        return float(np.trace(Y @ sigma @ Y.conj().T).real)

    x, _, _, ok = optimize_stage(probability, 2 * N, True, tol / (N + 1) ** 2, max_cycles, grid)
    UR = stage_unitary(N, 0, x)
    cfg = EngineeringConfig.from_parts(N, U_R=UR, Tk=T)
    rec = run_engineering(r, cfg)
    if not ok:
        raise TuningError("purification did not converge", rec)
    return PurificationResult(
        rec.probability * (N + 1) ** 2, rec.post_state, cfg.U_R, rec.probability
    )
