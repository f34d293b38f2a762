"""Linear-optical and cross-Kerr circuit elements on truncated Fock spaces.

Beam-splitter convention: for a splitter on modes ``(b, c)`` the Heisenberg map
is ``U^dag b U = T b + R c``, completed to the mode matrix
``[[T, R], [-R*, T*]]``. In general a multiport with mode matrix ``U_kl`` obeys
``U^dag b_k U = sum_l U_kl b_l`` and maps ``|phi_l>`` to ``sum_k U_kl |phi_k>``.
Consequently a splitter sends ``|1_b 0_c>`` to ``T|10> - R*|01>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import schur

from .fock import (
    ConfigurationError,
    FockSpace,
    SpaceMismatchError,
    build_space,
    embed_operator,
)

UNITARY_TOL = 1e-12


def is_unitary(m: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    m = np.asarray(m)
    return np.abs(m @ m.conj().T - np.eye(m.shape[0])).max() <= tol


@dataclass(frozen=True)
class BeamSplitterElement:
    mode_pair: tuple[str, str]
    T: complex
    R: complex

    def __post_init__(self):
        if abs(abs(self.T) ** 2 + abs(self.R) ** 2 - 1.0) > UNITARY_TOL:
            raise ConfigurationError(f"|T|^2 + |R|^2 != 1 for T={self.T}, R={self.R}")

    @classmethod
    def from_transmittance(cls, mode_pair, T: complex) -> "BeamSplitterElement":
        """Splitter with the given T and a real non-negative reflectance."""
        if abs(T) > 1 + UNITARY_TOL:
            raise ConfigurationError(f"|T| = {abs(T)} > 1")
        return cls(tuple(mode_pair), complex(T), complex(np.sqrt(max(0.0, 1 - abs(T) ** 2))))

    @property
    def mode_matrix(self) -> np.ndarray:
        T, R = complex(self.T), complex(self.R)
        return np.array([[T, R], [-R.conjugate(), T.conjugate()]])

    @property
    def modes(self) -> tuple[str, ...]:
        return tuple(self.mode_pair)


@dataclass(frozen=True)
class CrossKerrElement:
    """exp(i kappa n_b n_a) on the mode pair ``(b, a)``."""

    mode_pair: tuple[str, str]
    kappa: float

    @property
    def modes(self) -> tuple[str, ...]:
        return tuple(self.mode_pair)


@dataclass(frozen=True)
class PhaseShifterElement:
    mode: str
    phase: float

    @property
    def modes(self) -> tuple[str, ...]:
        return (self.mode,)


@dataclass(frozen=True, eq=False)
class MultiportUnitary:
    modes: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "modes", tuple(self.modes))
        if m.shape != (len(self.modes),) * 2:
            raise ConfigurationError(f"matrix shape {m.shape} for {len(self.modes)} modes")
        if not is_unitary(m):
            raise ConfigurationError("multiport matrix is not unitary")

    @property
    def dagger(self) -> "MultiportUnitary":
        return MultiportUnitary(self.modes, self.matrix.conj().T)


CircuitElement = Union[BeamSplitterElement, CrossKerrElement, PhaseShifterElement, MultiportUnitary]


def _hermitian_log(U: np.ndarray) -> np.ndarray:
    """H with exp(iH) = U, principal branch."""
    Tm, Z = schur(U, output="complex")
    theta = np.angle(np.diag(Tm))
    return (Z * theta) @ Z.conj().T


def _hopping_generator(H: np.ndarray, space: FockSpace) -> np.ndarray:
    """sum_kl H_kl b_k^dag b_l on ``space`` (whose modes are H's modes)."""
    n = len(space.modes)
    G = np.zeros((space.dim, space.dim), dtype=complex)
    for i, s in enumerate(space.basis):
        for l in range(n):
            if s[l] == 0:
                continue
            for k in range(n):
                h = H[k, l]
                if h == 0:
                    continue
                if k == l:
                    G[i, i] += h * s[l]
                    continue
                t = list(s)
                t[l] -= 1
                t[k] += 1
                if not space.contains(t):
                    if abs(h) > 1e-14:
                        raise ConfigurationError(
                            f"space {space.modes} is not closed under the multiport"
                        )
                    continue
                G[space.index(t), i] += h * np.sqrt(s[l] * (s[k] + 1))
    return G


def multiport_matrix(U: MultiportUnitary | np.ndarray, space: FockSpace) -> np.ndarray:
    """Induced Fock-space unitary of a passive multiport.

    ``space`` must consist of exactly the multiport's modes (any sector).
    The vacuum amplitude is fixed to 1.
    """
    if not isinstance(U, MultiportUnitary):
        U = MultiportUnitary(space.modes, U)
    if tuple(space.modes) != tuple(U.modes):
        raise SpaceMismatchError(f"space modes {space.modes} != multiport modes {U.modes}")
    G = _hopping_generator(_hermitian_log(U.matrix), space)
    G = (G + G.conj().T) / 2
    w, v = np.linalg.eigh(G)
    return (v * np.exp(1j * w)) @ v.conj().T


def _local_space(space: FockSpace, modes: Sequence[str]) -> FockSpace:
    cut = [space.cutoff(m) for m in modes]
    caps = []
    for b in space.blocks:
        if any(m in b.modes for m in modes):
            caps.append(b.sector if b.sector is not None else b.max_total)
    cap = None if any(c is None for c in caps) else sum(caps)
    return build_space(tuple(modes), cut, None, cap)


def element_matrix(elem: CircuitElement, space: FockSpace) -> np.ndarray:
    """Matrix of a circuit element on ``space`` (identity on the other modes)."""
    for m in elem.modes:
        space.mode_index(m)
    if isinstance(elem, CrossKerrElement):
        i, j = (space.mode_index(m) for m in elem.mode_pair)
        return np.diag([np.exp(1j * elem.kappa * s[i] * s[j]) for s in space.basis])
    if isinstance(elem, PhaseShifterElement):
        i = space.mode_index(elem.mode)
        return np.diag([np.exp(1j * elem.phase * s[i]) for s in space.basis])
    if isinstance(elem, BeamSplitterElement):
        elem = MultiportUnitary(elem.modes, elem.mode_matrix)
    if isinstance(elem, MultiportUnitary):
        if tuple(space.modes) == elem.modes:
            return multiport_matrix(elem, space)
        local = _local_space(space, elem.modes)
        return embed_operator(multiport_matrix(elem, local), local, space)
    raise TypeError(f"unknown circuit element {elem!r}")


def circuit_matrix(elements: Sequence[CircuitElement], space: FockSpace) -> np.ndarray:
    """Product of element matrices, first element applied first."""
    out = np.eye(space.dim, dtype=complex)
    for e in elements:
        out = element_matrix(e, space) @ out
    return out


# ------------------------------------------------------------------ mesh synthesis


@dataclass(eq=False)
class Mesh:
    """Triangular splitter mesh followed by output phases.

    ``splitters`` act on mode-index pairs in application order; the overall
    mode matrix is ``diag(exp(i phases)) @ S_K @ ... @ S_1``.
    """

    size: int
    splitters: list[tuple[tuple[int, int], complex, complex]] = field(default_factory=list)
    phases: np.ndarray = None

    def matrix(self) -> np.ndarray:
        out = np.eye(self.size, dtype=complex)
        for (i, j), T, R in self.splitters:
            g = np.eye(self.size, dtype=complex)
            g[np.ix_([i, j], [i, j])] = [[T, R], [-np.conj(R), np.conj(T)]]
            out = g @ out
        return np.diag(np.exp(1j * self.phases)) @ out

    def elements(self, modes: Sequence[str]) -> list[CircuitElement]:
        """The mesh as Fock-space circuit elements on the given mode labels."""
        out: list[CircuitElement] = [
            BeamSplitterElement((modes[i], modes[j]), T, R) for (i, j), T, R in self.splitters
        ]
        out += [PhaseShifterElement(modes[k], float(p)) for k, p in enumerate(self.phases) if p != 0]
        return out

    def to_dict(self) -> dict:
        return {
            "splitters": [
                {"modes": [i, j], "T": [float(np.real(T)), float(np.imag(T))],
                 "R": [float(np.real(R)), float(np.imag(R))]}
                for (i, j), T, R in self.splitters
            ],
            "phases": [float(p) for p in self.phases],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def synthesize_mesh(U: MultiportUnitary | np.ndarray, tol: float = 1e-10) -> Mesh:
    """Reck-style triangular factorization of a unitary into 2-mode splitters."""
    M = np.array(U.matrix if isinstance(U, MultiportUnitary) else U, dtype=complex)
    n = M.shape[0]
    if M.shape != (n, n) or not is_unitary(M, tol):
        raise ConfigurationError("synthesize_mesh needs a unitary matrix")
    ops = []
    for i in range(n - 1, 0, -1):
        for j in range(i):
            x, y = M[i, j], M[i, j + 1]
            if abs(x) < 1e-15:
                continue
            r = np.hypot(abs(x), abs(y))
            a, b = y / r, np.conj(x) / r
            G = np.array([[a, b], [-np.conj(b), np.conj(a)]])
            M[:, [j, j + 1]] = M[:, [j, j + 1]] @ G
            M[i, j] = 0.0
            # G^dag = [[a*, -b], [b*, a]] is again of splitter form
            ops.append(((j, j + 1), np.conj(a), -b))
    return Mesh(n, ops, np.angle(np.diag(M)))


# ------------------------------------------------------------------ vacuum-projected splitter


def vacuum_projected_splitter(T: complex, space: FockSpace) -> np.ndarray:
    """<0_c| U |0_c> on the transmitted mode, which equals T ** n."""
    if abs(T) > 1 + UNITARY_TOL:
        raise ConfigurationError(f"|T| = {abs(T)} > 1")
    if len(space.modes) != 1:
        raise SpaceMismatchError("vacuum_projected_splitter acts on a single mode")
    return np.diag([complex(T) ** s[0] for s in space.basis])


def explicit_vacuum_projected_splitter(T: complex, R: complex | None, cutoff: int) -> np.ndarray:
    """Same quantity computed from the explicit two-mode splitter matrix."""
    if R is None:
        R = np.sqrt(max(0.0, 1 - abs(T) ** 2))
    space = build_space(("b", "c"), cutoff, max_total=cutoff)
    U = element_matrix(BeamSplitterElement(("b", "c"), T, R), space)
    idx = [space.index((n, 0)) for n in range(cutoff + 1)]
    return U[np.ix_(idx, idx)]


# ------------------------------------------------------------------ polar decomposition


@dataclass(frozen=True, eq=False)
class PolarFactors:
    unitary: np.ndarray
    positive: np.ndarray
    trace_norm: float
    det_phase: complex

    @property
    def normalized(self) -> np.ndarray:
        """SU(n) factor times unit-trace positive factor."""
        return (self.unitary / self.det_phase) @ (self.positive / self.trace_norm)

    @property
    def scale(self) -> complex:
        return self.trace_norm * self.det_phase


def _fix_phase(v: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate paired columns so the largest-magnitude entry of ``v`` is real positive."""
    v, w = v.copy(), w.copy()
    for j in range(v.shape[1]):
        k = np.argmax(np.abs(v[:, j]))
        if abs(v[k, j]) > 0:
            ph = np.conj(v[k, j]) / abs(v[k, j])
            v[:, j] *= ph
            w[:, j] *= ph
    return v, w


def polar_decompose(A: np.ndarray, rank_tol: float = 1e-12) -> PolarFactors:
    """A = unitary @ positive via the singular-value decomposition.

    On the kernel of a singular ``A`` the unitary is completed by the isometry
    from kernel to cokernel closest to the identity, so a positive
    semidefinite input yields the identity there.
    """
    A = np.asarray(A, dtype=complex)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigurationError("polar_decompose needs a square matrix")
    if np.abs(A).max(initial=0.0) == 0.0:
        raise ConfigurationError("the zero operator has no normalized polar form")
    W, s, Vh = np.linalg.svd(A)
    V = Vh.conj().T
    r = int(np.sum(s > rank_tol * s[0]))
    U = W[:, :r] @ V[:, :r].conj().T
    if r < n:
        W0, V0 = W[:, r:], V[:, r:]
        # maximize Re Tr(W0 Y V0^dag) over unitary Y
        Bw, _, Bvh = np.linalg.svd(V0.conj().T @ W0)
        Bv, Bw = _fix_phase(Bvh.conj().T, Bw)
        Y = Bv @ Bw.conj().T
        U = U + W0 @ Y @ V0.conj().T
    P = (V * s) @ V.conj().T
    P = (P + P.conj().T) / 2
    det = np.linalg.det(U)
    det_phase = np.exp(1j * np.angle(det) / n)
    return PolarFactors(U, P, float(s.sum()), complex(det_phase))
