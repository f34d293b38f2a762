"""Truncated Fock spaces, states, and the single-mode <-> single-photon isomorphism.

A :class:`FockSpace` is a product of *blocks*. Each block is a group of modes
with per-mode cutoffs and an optional photon-number constraint (an exact
total, a ``sector``, or an upper bound, ``max_total``). A plain space built by
:func:`build_space` has one block; :func:`product_space` concatenates blocks.

Basis order is colexicographic: occupation vectors are compared with the last
mode most significant. For a single mode this is ``|0>, |1>, ...``; for the
single-photon sector of ``N + 1`` modes it is ``|1 0 .. 0>, |0 1 .. 0>, ...``,
so index ``k`` is the state with the photon in mode ``k``. Because later blocks
are more significant, the amplitudes of a product state are
``np.kron(second, first)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-12
PSD_TOL = -1e-10


class ConfigurationError(ValueError):
    """Raised for inconsistent space or protocol configuration."""


class SpaceMismatchError(ValueError):
    """Raised when an object lives on a different space than required."""


@dataclass(frozen=True)
class Block:
    modes: tuple[str, ...]
    cutoffs: tuple[int, ...]
    sector: int | None = None
    max_total: int | None = None

    def __post_init__(self):
        if not self.modes:
            raise ConfigurationError("a block needs at least one mode")
        if len(self.modes) != len(self.cutoffs):
            raise ConfigurationError("one cutoff per mode is required")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigurationError(f"duplicate mode labels in {self.modes}")
        if any(c < 0 for c in self.cutoffs):
            raise ConfigurationError("cutoffs must be non-negative")
        if self.sector is not None:
            if self.sector < 0 or self.sector > sum(self.cutoffs):
                raise ConfigurationError(
                    f"sector {self.sector} unattainable with cutoffs {self.cutoffs}"
                )
        if self.max_total is not None and self.max_total < 0:
            raise ConfigurationError("max_total must be non-negative")

    def enumerate(self) -> list[tuple[int, ...]]:
        lo = self.sector if self.sector is not None else 0
        hi = self.sector if self.sector is not None else sum(self.cutoffs)
        if self.max_total is not None:
            hi = min(hi, self.max_total)
        if hi < lo:
            raise ConfigurationError(f"no admissible occupation vectors in {self}")
        cut = self.cutoffs[::-1]
        capacity = np.concatenate([np.cumsum(cut[::-1])[::-1], [0]])
        out: list[tuple[int, ...]] = []

        # Most significant (last) mode first, ascending values: colex order.
        def rec(i: int, partial: list[int], total: int):
            if i == len(cut):
                if lo <= total <= hi:
                    out.append(tuple(reversed(partial)))
                return
            for n in range(cut[i] + 1):
                t = total + n
                if t > hi:
                    break
                if t + capacity[i + 1] < lo:
                    continue
                partial.append(n)
                rec(i + 1, partial, t)
                partial.pop()

        rec(0, [], 0)
        return out


@dataclass(frozen=True)
class FockSpace:
    """Enumerated occupation-number basis over one or more mode blocks."""

    blocks: tuple[Block, ...]

    def __post_init__(self):
        if not self.blocks:
            raise ConfigurationError("empty mode list")
        labels = [m for b in self.blocks for m in b.modes]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"overlapping mode labels: {labels}")

    @property
    def modes(self) -> tuple[str, ...]:
        return tuple(m for b in self.blocks for m in b.modes)

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return tuple(c for b in self.blocks for c in b.cutoffs)

    @property
    def sector(self) -> int | None:
        if len(self.blocks) == 1:
            return self.blocks[0].sector
        return None

    def cutoff(self, mode: str) -> int:
        return self.cutoffs[self.mode_index(mode)]

    def mode_index(self, mode: str) -> int:
        try:
            return self.modes.index(mode)
        except ValueError:
            raise SpaceMismatchError(f"unknown mode label {mode!r}") from None

    @cached_property
    def basis(self) -> tuple[tuple[int, ...], ...]:
        per_block = [b.enumerate() for b in self.blocks]
        states: list[tuple[int, ...]] = [()]
        # Later blocks are more significant, so they form the outer loop.
        for block_states in per_block:
            states = [p + s for s in block_states for p in states]
        return tuple(states)

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        return {s: i for i, s in enumerate(self.basis)}

    @property
    def dim(self) -> int:
        return len(self.basis)

    def index(self, occupation: Sequence[int]) -> int:
        try:
            return self._index[tuple(int(n) for n in occupation)]
        except KeyError:
            raise ConfigurationError(
                f"occupation {tuple(occupation)} not in basis of {self.modes}"
            ) from None

    def contains(self, occupation: Sequence[int]) -> bool:
        return tuple(occupation) in self._index

    def occupation(self, i: int) -> tuple[int, ...]:
        return self.basis[i]

    def number_operator(self, mode: str) -> np.ndarray:
        j = self.mode_index(mode)
        return np.diag([float(s[j]) for s in self.basis]).astype(complex)

    def basis_vector(self, occupation: Sequence[int]) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(occupation)] = 1.0
        return v

    def __mul__(self, other: "FockSpace") -> "FockSpace":
        return FockSpace(self.blocks + other.blocks)

    def subspace(self, modes: Iterable[str]) -> "FockSpace":
        """Space of the given modes, keeping whole blocks intact where possible."""
        keep = list(modes)
        for m in keep:
            self.mode_index(m)
        blocks = []
        for b in self.blocks:
            sel = [i for i, m in enumerate(b.modes) if m in keep]
            if not sel:
                continue
            if len(sel) == len(b.modes):
                blocks.append(b)
                continue
            cap = b.sector if b.sector is not None else b.max_total
            blocks.append(
                Block(tuple(b.modes[i] for i in sel), tuple(b.cutoffs[i] for i in sel), None, cap)
            )
        if not blocks:
            raise ConfigurationError("empty mode subset")
        return FockSpace(tuple(blocks))


def build_space(
    modes: Sequence[str],
    cutoffs: int | Sequence[int],
    sector: int | None = None,
    max_total: int | None = None,
) -> FockSpace:
    """Build a single-block Fock space.

    Args:
        modes: ordered mode labels.
        cutoffs: maximum occupation per mode (scalar broadcasts).
        sector: fixed total photon number, if any.
        max_total: upper bound on the total photon number, if any.
    """
    modes = tuple(modes)
    if not modes:
        raise ConfigurationError("empty mode list")
    if np.isscalar(cutoffs):
        cutoffs = (int(cutoffs),) * len(modes)
    return FockSpace((Block(modes, tuple(int(c) for c in cutoffs), sector, max_total),))


def product_space(*spaces: FockSpace) -> FockSpace:
    blocks: tuple[Block, ...] = ()
    for s in spaces:
        blocks += s.blocks
    return FockSpace(blocks)


def source_space(N: int, mode: str = "a") -> FockSpace:
    """Single-mode space truncated at N photons."""
    return build_space((mode,), N)


def target_space(N: int, prefix: str = "b") -> FockSpace:
    """Single-photon sector of N + 1 modes."""
    return build_space(tuple(f"{prefix}{k}" for k in range(N + 1)), 1, sector=1)


# --------------------------------------------------------------------------- states


@dataclass(frozen=True)
class StateVector:
    space: FockSpace
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amp.shape[0] != self.space.dim:
            raise SpaceMismatchError(
                f"{amp.shape[0]} amplitudes for a space of dimension {self.space.dim}"
            )
        object.__setattr__(self, "amplitudes", amp)
        if self.normalized and abs(np.vdot(amp, amp).real - 1.0) > NORM_TOL:
            raise ConfigurationError("state flagged normalized but norm deviates from 1")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "StateVector":
        n = self.norm
        if n == 0:
            raise ConfigurationError("cannot normalize the zero vector")
        return StateVector(self.space, self.amplitudes / n, True)

    def density(self) -> "DensityOperator":
        a = self.amplitudes
        return DensityOperator(self.space, np.outer(a, a.conj()), normalized=self.normalized)

    def to_json(self) -> str:
        return json.dumps(state_to_dict(self))


@dataclass(frozen=True)
class DensityOperator:
    space: FockSpace
    matrix: np.ndarray
    normalized: bool = True
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d = self.space.dim
        if m.shape != (d, d):
            raise SpaceMismatchError(f"matrix shape {m.shape} for dimension {d}")
        object.__setattr__(self, "matrix", m)
        if not self.check:
            return
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL * max(1.0, np.abs(m).max()):
            raise ConfigurationError("density operator is not Hermitian")
        if np.linalg.eigvalsh((m + m.conj().T) / 2).min() < PSD_TOL:
            raise ConfigurationError("density operator is not positive semidefinite")
        if self.normalized and abs(np.trace(m).real - 1.0) > NORM_TOL:
            raise ConfigurationError("density operator flagged normalized but trace != 1")

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalize(self) -> "DensityOperator":
        t = self.trace
        if t <= 0:
            raise ConfigurationError("cannot normalize an operator with zero trace")
        return DensityOperator(self.space, self.matrix / t, True)


def as_density(x, space: FockSpace) -> DensityOperator:
    """Coerce a state vector, density operator or raw array onto ``space``."""
    if isinstance(x, DensityOperator):
        if x.space != space:
            raise SpaceMismatchError(f"state lives on {x.space.modes}, expected {space.modes}")
        return x
    if isinstance(x, StateVector):
        if x.space != space:
            raise SpaceMismatchError(f"state lives on {x.space.modes}, expected {space.modes}")
        return x.density()
    a = np.asarray(x, dtype=complex)
    if a.ndim == 1:
        return StateVector(space, a / np.linalg.norm(a)).density()
    return DensityOperator(space, a)


def tensor(s1, s2):
    """Tensor product of two states (vectors or density operators) on disjoint modes."""
    if set(s1.space.modes) & set(s2.space.modes):
        raise ConfigurationError("tensor factors share mode labels")
    space = s1.space * s2.space
    if isinstance(s1, StateVector) and isinstance(s2, StateVector):
        return StateVector(
            space, np.kron(s2.amplitudes, s1.amplitudes), s1.normalized and s2.normalized
        )
    r1 = s1.density() if isinstance(s1, StateVector) else s1
    r2 = s2.density() if isinstance(s2, StateVector) else s2
    return DensityOperator(space, np.kron(r2.matrix, r1.matrix), r1.normalized and r2.normalized)


def _split_indices(space: FockSpace, modes: Sequence[str]):
    """For each basis state: (local occupation, rest occupation)."""
    sel = [space.mode_index(m) for m in modes]
    rest = [i for i in range(len(space.modes)) if i not in sel]
    loc = [tuple(s[i] for i in sel) for s in space.basis]
    oth = [tuple(s[i] for i in rest) for s in space.basis]
    return loc, oth


def partial_trace(rho: DensityOperator, keep: Sequence[str]) -> DensityOperator:
    """Trace out every mode not in ``keep``."""
    keep = list(keep)
    if not keep or not set(keep) <= set(rho.space.modes):
        raise ConfigurationError(f"keep={keep} is not a non-empty subset of {rho.space.modes}")
    # preserve declared mode order of the parent space
    keep = [m for m in rho.space.modes if m in keep]
    sub = rho.space.subspace(keep)
    loc, oth = _split_indices(rho.space, keep)
    li = np.array([sub.index(x) for x in loc])
    groups: dict[tuple, list[int]] = {}
    for i, r in enumerate(oth):
        groups.setdefault(r, []).append(i)
    out = np.zeros((sub.dim, sub.dim), dtype=complex)
    m = rho.matrix
    for idx in groups.values():
        idx = np.array(idx)
        out[np.ix_(li[idx], li[idx])] += m[np.ix_(idx, idx)]
    return DensityOperator(sub, out, normalized=rho.normalized, check=False)


def embed_operator(op: np.ndarray, local: FockSpace, space: FockSpace, tol: float = 1e-13) -> np.ndarray:
    """Lift an operator on ``local`` (a subset of modes) to ``space``.

    Raises :class:`ConfigurationError` if the operator would move amplitude
    outside ``space`` (the space is not closed under it).
    """
    op = np.asarray(op, dtype=complex)
    loc, oth = _split_indices(space, local.modes)
    groups: dict[tuple, list[int]] = {}
    for i, r in enumerate(oth):
        groups.setdefault(r, []).append(i)
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for idx in groups.values():
        idx = np.array(idx)
        li = np.array([local.index(loc[i]) for i in idx])
        block = op[:, li]
        mask = np.ones(local.dim, dtype=bool)
        mask[li] = False
        if mask.any() and np.abs(block[mask]).max(initial=0.0) > tol:
            raise ConfigurationError(
                f"space {space.modes} is not closed under the operator on {local.modes}"
            )
        out[np.ix_(idx, idx)] = op[np.ix_(li, li)]
    return out


def mode_projector(space: FockSpace, mode: str, occupations: Iterable[int]) -> np.ndarray:
    """Diagonal projector onto the given occupation numbers of one mode."""
    j = space.mode_index(mode)
    occ = set(occupations)
    return np.diag([1.0 if s[j] in occ else 0.0 for s in space.basis]).astype(complex)


# ------------------------------------------------------------------ isomorphism P_ba


@dataclass(frozen=True)
class IsomorphismMap:
    """The map |k> -> |phi_k> from a truncated single mode to the single-photon sector."""

    source: FockSpace
    target: FockSpace

    def __post_init__(self):
        if len(self.source.modes) != 1:
            raise ConfigurationError("isomorphism source must be a single mode")
        N = self.source.cutoffs[0]
        if self.target.sector != 1 or len(self.target.modes) != N + 1:
            raise ConfigurationError("isomorphism target must be the sector-1 space of N+1 modes")
        if any(c < 1 for c in self.target.cutoffs):
            raise ConfigurationError("target cutoffs must admit one photon per mode")

    @classmethod
    def standard(cls, N: int, source_mode: str = "a", prefix: str = "b") -> "IsomorphismMap":
        return cls(source_space(N, source_mode), target_space(N, prefix))

    @property
    def N(self) -> int:
        return self.source.cutoffs[0]

    @cached_property
    def matrix(self) -> np.ndarray:
        P = np.zeros((self.target.dim, self.source.dim), dtype=complex)
        for k in range(self.N + 1):
            occ = [0] * (self.N + 1)
            occ[k] = 1
            P[self.target.index(occ), k] = 1.0
        return P


def lift_state(psi, iso: IsomorphismMap):
    if psi.space != iso.source:
        raise SpaceMismatchError("state does not live on the isomorphism source")
    P = iso.matrix
    if isinstance(psi, StateVector):
        return StateVector(iso.target, P @ psi.amplitudes, psi.normalized)
    return DensityOperator(iso.target, P @ psi.matrix @ P.conj().T, psi.normalized, check=False)


def lower_state(psi, iso: IsomorphismMap):
    if psi.space != iso.target:
        raise SpaceMismatchError("state does not live on the isomorphism target")
    P = iso.matrix
    if isinstance(psi, StateVector):
        return StateVector(iso.source, P.conj().T @ psi.amplitudes, psi.normalized)
    return DensityOperator(iso.source, P.conj().T @ psi.matrix @ P, psi.normalized, check=False)


def lift_operator(op: np.ndarray, iso: IsomorphismMap) -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    if op.shape != (iso.source.dim,) * 2:
        raise SpaceMismatchError(f"operator shape {op.shape} does not match the source space")
    P = iso.matrix
    return P @ op @ P.conj().T


def lower_operator(op: np.ndarray, iso: IsomorphismMap) -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    if op.shape != (iso.target.dim,) * 2:
        raise SpaceMismatchError(f"operator shape {op.shape} does not match the target space")
    P = iso.matrix
    return P.conj().T @ op @ P


# ------------------------------------------------------------------ distances


def _matrix(x) -> np.ndarray:
    if isinstance(x, DensityOperator):
        return x.matrix
    if isinstance(x, StateVector):
        return x.density().matrix
    return np.asarray(x, dtype=complex)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def _pure_vector(m: np.ndarray, tol: float = 1e-12) -> np.ndarray | None:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    tr = w.sum()
    if tr > 0 and abs(w[-1] - tr) <= tol * tr:
        return v[:, -1] * np.sqrt(tr)
    return None


def fidelity(rho1, rho2) -> float:
    """Uhlmann fidelity (squared convention), in [0, 1]."""
    a, b = _matrix(rho1), _matrix(rho2)
    if a.shape != b.shape:
        raise SpaceMismatchError(f"dimension mismatch {a.shape} vs {b.shape}")
    # pure inputs: sqrt of rounding-level eigenvalues would cost ~1e-8 accuracy
    for p, q in ((a, b), (b, a)):
        v = _pure_vector(p)
        if v is not None:
            return float(np.clip(np.vdot(v, q @ v).real, 0.0, 1.0))
    s = _psd_sqrt(a)
    w = np.linalg.eigvalsh(s @ b @ s)
    return float(np.clip(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2, 0.0, 1.0))


def trace_distance(rho1, rho2) -> float:
    a, b = _matrix(rho1), _matrix(rho2)
    if a.shape != b.shape:
        raise SpaceMismatchError(f"dimension mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.clip(0.5 * np.abs(np.linalg.eigvalsh((d + d.conj().T) / 2)).sum(), 0.0, 1.0))


# ------------------------------------------------------------------ JSON dumps


def _pairs(v: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(v).reshape(-1)]


def space_to_dict(space: FockSpace) -> dict:
    d = {"modes": list(space.modes), "cutoffs": list(space.cutoffs), "sector": space.sector}
    if len(space.blocks) > 1:
        d["blocks"] = [
            {"modes": list(b.modes), "cutoffs": list(b.cutoffs), "sector": b.sector,
             "max_total": b.max_total}
            for b in space.blocks
        ]
    elif space.blocks[0].max_total is not None:
        d["max_total"] = space.blocks[0].max_total
    return d


def space_from_dict(d: dict) -> FockSpace:
    if "blocks" in d:
        return FockSpace(tuple(
            Block(tuple(b["modes"]), tuple(b["cutoffs"]), b.get("sector"), b.get("max_total"))
            for b in d["blocks"]
        ))
    return build_space(d["modes"], d["cutoffs"], d.get("sector"), d.get("max_total"))


def state_to_dict(state) -> dict:
    d = space_to_dict(state.space)
    if isinstance(state, StateVector):
        d["amplitudes"] = _pairs(state.amplitudes)
    else:
        d["matrix"] = [_pairs(row) for row in state.matrix]
    return d


def state_from_dict(d: dict):
    space = space_from_dict(d)
    if "amplitudes" in d:
        amp = np.array([complex(re, im) for re, im in d["amplitudes"]])
        return StateVector(space, amp)
    m = np.array([[complex(re, im) for re, im in row] for row in d["matrix"]])
    return DensityOperator(space, m)
