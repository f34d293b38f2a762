"""Batch driver: validate an experiment descriptor, run it, write a result document.

Exit codes: 0 success, 1 protocol error (a typed error record is written),
2 malformed or schema-violating descriptor (nothing is written to the output).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import replace
from importlib import resources

import jsonschema
import numpy as np
from scipy.linalg import dft
from scipy.stats import unitary_group

from . import __version__
from .converter import (
    ConverterConfig,
    a2b_outcomes,
    b2a_outcomes,
    convert_a_to_b,
    convert_b_to_a,
    convert_unconditional_a_to_b,
    convert_unconditional_b_to_a,
    pegg_barnett_state,
    phase_basis,
    phase_values,
    build_M,
)
from .engineering import (
    EngineeringConfig,
    LeftInput,
    build_target_operator,
    decompose_target,
    engineering_outcomes,
    run_engineering,
    run_engineering_unconditional,
)
from .fock import (
    ConfigurationError,
    DensityOperator,
    SpaceMismatchError,
    fidelity,
    source_space,
    trace_distance,
)
from .measurement import (
    ProbeChannel,
    TuningError,
    diagonalize_experimentally,
    expectation,
    overlap_probe,
    qnd_purify,
    reconstruct_fock_matrix,
    unconditional_probe,
)
from .optics import explicit_vacuum_projected_splitter, is_unitary, synthesize_mesh
from . import oracle
from .telemanip import (
    bob_marginal,
    engineering_reduced_closed_form,
    reduced_states_engineering,
    reduced_states_telemanip,
    run_telemanip_conditional,
    run_telemanip_unconditional,
    telemanip_outcomes,
    telemanip_reduced_closed_form,
)

TOOL = "kerrconv"
SCHEMA_NAME = "descriptor.v1.json"
CSV_COLUMNS = ("outcome_label", "probability", "fidelity", "trials")


class DescriptorError(Exception):
    """Malformed JSON or a schema violation, with a line/column locator."""

    def __init__(self, source: str, line: int, col: int, message: str):
        super().__init__(f"{source}:{line}:{col}: {message}")


# ------------------------------------------------------------------ presets


def _preset(protocol: str, description: str, **fields) -> dict:
    return {"protocol": protocol, "description": description, **fields}


PRESETS: dict[str, dict] = {
    "fig1-device": _preset(
        "identity-check", "Kerr device built from explicit elements vs the block-diagonal form",
        N=2, check="device",
    ),
    "fig2-conversion": _preset(
        "convert", "a -> b conversion with phase-state detection",
        N=3, direction="a2b", mode="conditional", psi="phase",
        input={"random": "mixed", "seed": 11},
    ),
    "fig2-reverse": _preset(
        "convert", "b -> a conversion with phase-state preparation",
        N=3, direction="b2a", mode="conditional", psi="phase",
        input={"random": "pure", "seed": 12},
    ),
    "fig2-unconditional": _preset(
        "convert", "a -> b conversion with phase feed-forward on every outcome",
        N=3, direction="a2b", mode="unconditional", input={"random": "mixed", "seed": 13},
    ),
    "fig2-custom-target": _preset(
        "convert", "a -> b conversion heralded on a non-uniform detection state",
        N=2, direction="a2b", mode="conditional", psi=[1, [0, 2], 0.5],
        input={"random": "pure", "seed": 14},
    ),
    "sec3-repeat-until-success": _preset(
        "convert", "b -> a repeat-until-success loop, sampled trial counts",
        N=2, direction="b2a", mode="unconditional", trials=10000, seed=2024,
        input={"random": "mixed", "seed": 15},
    ),
    "appendix-identity": _preset(
        "identity-check", "vacuum-projected splitter equals T^n",
        check="vacuum-projection", cases=50, max_cutoff=6, seed=7,
    ),
    "mesh-synthesis": _preset(
        "identity-check", "splitter mesh reproduces random unitaries",
        N=3, check="mesh", cases=20, seed=8,
    ),
    "fig3-unitary": _preset(
        "engineer", "unitary operator applied to the a-mode, heralded",
        N=2, A={"U": {"random": "unitary", "seed": 21}}, mode="conditional",
        input={"random": "pure", "seed": 22},
    ),
    "fig3-projective": _preset(
        "engineer", "projective operator T_k = delta_k0 in a rotated basis",
        N=2, A={"U": {"identity": True}, "UR": {"random": "unitary", "seed": 23}, "Tk": [1, 0, 0]},
        mode="conditional", input={"random": "mixed", "seed": 24},
    ),
    "fig3-general": _preset(
        "engineer", "arbitrary non-unitary operator from its polar decomposition",
        N=2, A={"random": "ginibre", "seed": 25}, mode="conditional",
        input={"random": "mixed", "seed": 26},
    ),
    "fig3-unconditional": _preset(
        "engineer", "unitary operator with feed-forward and repeat-until-success",
        N=2, A={"U": {"random": "unitary", "seed": 27}}, mode="unconditional",
        input={"random": "mixed", "seed": 28},
    ),
    "sec4-reduced": _preset(
        "telemanip", "engineering layout without the phase detector: dephasing",
        N=2, A={"random": "ginibre", "seed": 29}, mode="reduced-engineering",
        input={"random": "mixed", "seed": 30},
    ),
    "sec5-overlap": _preset(
        "measure", "click probabilities give overlaps with the array basis",
        N=2, kind="overlap", A={"U": {"random": "unitary", "seed": 31}},
        rho={"random": "mixed", "seed": 32},
    ),
    "sec5-expectation": _preset(
        "measure", "expectation of a non-Hermitian observable from two settings",
        N=2, kind="expectation", Z={"random": "ginibre", "seed": 33},
        rho={"random": "mixed", "seed": 34},
    ),
    "sec5-matrix-elements": _preset(
        "measure", "Fock-basis density matrix from symmetric splitter settings",
        N=3, kind="fock-matrix", rho={"random": "mixed", "seed": 35},
    ),
    "sec5-shots": _preset(
        "measure", "Fock-basis density matrix from sampled clicks",
        N=2, kind="fock-matrix", rho={"random": "mixed", "seed": 36},
        mode="shots", shots=200000, seed=37,
    ),
    "sec5-reconstruct": _preset(
        "reconstruct", "spectrum and eigenbasis by tuning the array stage by stage",
        N=2, rho={"random": "mixed", "seed": 38}, direction="max",
    ),
    "sec5-qnd": _preset(
        "measure", "purification by maximizing the projective success probability",
        N=2, kind="qnd", rho={"random": "mixed", "seed": 39},
    ),
    "sec5-unconditional-probe": _preset(
        "measure", "click probabilities with phase feed-forward",
        N=2, kind="unconditional-probe", A={"U": {"random": "unitary", "seed": 40}},
        rho={"random": "mixed", "seed": 41},
    ),
    "fig4-teleport": _preset(
        "telemanip", "bare teleportation: identity operator in transit",
        N=2, A={"identity": True}, mode="conditional", input={"random": "pure", "seed": 42},
    ),
    "fig4-telemanip": _preset(
        "telemanip", "teleportation with an arbitrary operator applied in transit",
        N=2, A={"random": "ginibre", "seed": 43}, mode="conditional",
        input={"random": "mixed", "seed": 44},
    ),
    "fig4-unconditional": _preset(
        "telemanip", "telemanipulation with outcome reports and corrections",
        N=2, A={"U": {"random": "unitary", "seed": 45}}, mode="unconditional",
        input={"random": "mixed", "seed": 46},
    ),
    "fig4-reduced": _preset(
        "telemanip", "telemanipulation layout without the phase detector",
        N=2, A={"random": "ginibre", "seed": 47}, mode="reduced-telemanip",
        input={"random": "mixed", "seed": 48},
    ),
}


def list_presets() -> list[tuple[str, str, str]]:
    return [(name, p["protocol"], p["description"]) for name, p in PRESETS.items()]


# ------------------------------------------------------------------ descriptor parsing


def load_schema() -> dict:
    text = resources.files("kerrconv").joinpath("schema", SCHEMA_NAME).read_text()
    return json.loads(text)


def _value_offsets(text: str) -> dict[tuple, int]:
    """Character offset of every value in a valid JSON document, keyed by path."""
    dec = json.JSONDecoder()
    out: dict[tuple, int] = {}

    def skip(i):
        while i < len(text) and text[i] in " \t\r\n":
            i += 1
        return i

    def value(i, path):
        i = skip(i)
        out[path] = i
        if text[i] == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = dec.raw_decode(text, skip(i))
                i = skip(i) + 1  # ':'
                i = skip(value(i, path + (key,)))
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if text[i] == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            n = 0
            while True:
                i = skip(value(i, path + (n,)))
                n += 1
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        return dec.raw_decode(text, i)[1]

    value(0, ())
    return out


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    return line, offset - (text.rfind("\n", 0, offset) + 1) + 1


def parse_descriptor(text: str, source: str = "<config>", seed: int | None = None) -> dict:
    """Decode and validate; raises :class:`DescriptorError` with line and column.

    A ``seed`` given here (the ``--seed`` flag) counts as present during validation.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DescriptorError(source, e.lineno, e.colno, e.msg) from None
    if seed is not None and isinstance(doc, dict):
        doc["seed"] = seed
    validator = jsonschema.Draft202012Validator(load_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is None:
        return doc
    path = tuple(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            path += (extra[0],)
    offsets = _value_offsets(text)
    while path not in offsets:
        path = path[:-1]
    line, col = _line_col(text, offsets[path])
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    raise DescriptorError(source, line, col, f"at {where}: {err.message}")


# ------------------------------------------------------------------ descriptor values


def _complex(v) -> complex:
    return complex(v[0], v[1]) if isinstance(v, list) else complex(v)


def _vector(v, n: int, what: str) -> np.ndarray:
    out = np.array([_complex(x) for x in v], dtype=complex)
    if out.shape != (n,):
        raise ConfigurationError(f"{what} needs {n} entries, got {len(out)}")
    return out


def _matrix(rows, n: int, what: str) -> np.ndarray:
    if any(len(r) != n for r in rows) or len(rows) != n:
        raise ConfigurationError(f"{what} must be {n}x{n}")
    return np.array([[_complex(x) for x in r] for r in rows], dtype=complex)


def _random(spec: dict, n: int) -> np.ndarray:
    rng = np.random.default_rng(spec["seed"])
    kind = spec["random"]
    if kind == "unitary":
        if n == 1:
            return np.array([[np.exp(2j * np.pi * rng.random())]])
        return unitary_group.rvs(n, random_state=rng)
    G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    if kind == "ginibre":
        return G
    if kind == "hermitian":
        return (G + G.conj().T) / 2
    if kind == "pure":
        v = G[:, 0] / np.linalg.norm(G[:, 0])
        return np.outer(v, v.conj())
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def build_state(spec: dict, N: int) -> np.ndarray:
    n = N + 1
    if "fock" in spec:
        if spec["fock"] > N:
            raise ConfigurationError(f"Fock state |{spec['fock']}> exceeds cutoff {N}")
        rho = np.zeros((n, n), dtype=complex)
        rho[spec["fock"], spec["fock"]] = 1
        return rho
    if "amplitudes" in spec:
        v = _vector(spec["amplitudes"], n, "amplitudes")
        if np.linalg.norm(v) == 0:
            raise ConfigurationError("amplitudes vanish")
        v = v / np.linalg.norm(v)
        return np.outer(v, v.conj())
    if "matrix" in spec:
        return DensityOperator(source_space(N), _matrix(spec["matrix"], n, "state matrix")).matrix
    if "diagonal" in spec:
        d = np.asarray(spec["diagonal"], dtype=float)
        if d.shape != (n,) or d.sum() <= 0:
            raise ConfigurationError(f"diagonal needs {n} non-negative entries with positive sum")
        U = np.eye(n) if "rotation_seed" not in spec else _random(
            {"random": "unitary", "seed": spec["rotation_seed"]}, n)
        return U @ np.diag(d / d.sum()).astype(complex) @ U.conj().T
    if "maximally_mixed" in spec:
        return np.eye(n, dtype=complex) / n
    if spec["random"] not in ("pure", "mixed"):
        raise ConfigurationError(f"random {spec['random']!r} is not a state")
    return _random(spec, n)


def build_operator(spec, N: int, unitary: bool = False, what: str = "operator") -> np.ndarray:
    n = N + 1
    if isinstance(spec, list):
        op = _matrix(spec, n, what)
    elif "identity" in spec:
        op = np.eye(n, dtype=complex)
    elif "dft" in spec:
        op = dft(n, scale="sqrtn").astype(complex)
    else:
        op = _random(spec, n)
    if unitary and not is_unitary(op, 1e-10):
        raise ConfigurationError(f"{what} is not unitary")
    return op


def build_engineering(spec, N: int, Phi: float = 0.0,
                      left: LeftInput = LeftInput.PHASE) -> EngineeringConfig:
    if spec is None:
        spec = {"identity": True}
    if isinstance(spec, dict) and "U" in spec:
        U = build_operator(spec["U"], N, True, "U")
        UR = build_operator(spec.get("UR", {"identity": True}), N, True, "UR")
        Tk = spec.get("Tk")
        if Tk is not None and len(Tk) != N + 1:
            raise ConfigurationError(f"Tk needs {N + 1} entries")
        return EngineeringConfig.from_parts(N, U, UR, Tk, left, Phi)
    A = build_operator(spec, N, what="A")
    if np.abs(A).max() == 0:
        raise ConfigurationError("target operator is zero")
    cfg, _ = decompose_target(A)
    return replace(cfg, left_input=left, Phi=float(Phi))


# ------------------------------------------------------------------ protocol runners


def _label(label: dict) -> str:
    return ";".join(f"{k}={'none' if v is None else v}" for k, v in label.items())


def _row(label, probability, fid=None, trials=None) -> dict:
    return {
        "outcome_label": label if isinstance(label, str) else _label(label),
        "probability": probability,
        "fidelity": fid,
        "trials": trials,
    }


def _prob(Y, rho) -> float:
    return float(np.trace(Y @ rho @ Y.conj().T).real)


def _completeness(ops, n: int) -> float:
    S = sum(Y.conj().T @ Y for Y in ops)
    return float(np.abs(S - np.eye(n)).max())


def _ideal(op: np.ndarray, rho: np.ndarray) -> np.ndarray:
    out = op @ rho @ op.conj().T
    return out / np.trace(out).real


def _run_convert(d: dict, rng, use_oracle: bool):
    N = d["N"]
    psi = d.get("psi", "phase")
    if psi != "phase":
        psi = _vector(psi, N + 1, "psi")
    cfg = ConverterConfig.canonical(N, psi, d.get("Phi", 0.0))
    rho = build_state(d.get("input", {"maximally_mixed": True}), N)
    P = cfg.iso.matrix
    mode = d.get("mode", "conditional")
    direction = d["direction"]
    rows, result = [], {"direction": direction, "mode": mode}
    if mode == "conditional":
        if direction == "a2b":
            rec = convert_a_to_b(rho, cfg)
            want = P @ rho @ P.conj().T
            ops = a2b_outcomes(cfg)
        else:
            rec = convert_b_to_a(P @ rho @ P.conj().T, cfg)
            want = rho
            ops = b2a_outcomes(cfg)
        p, post = rec.probability, rec.post_state
        if use_oracle:
            if direction == "a2b":
                dres = oracle.dense_a_to_b(rho, cfg)
                post_m = None if dres.state is None else oracle.sector_matrix(dres.state, N)[0]
            else:
                dres = oracle.dense_b_to_a(P @ rho @ P.conj().T, cfg)
                post_m = None if dres.state is None else dres.state.matrix
            p, post = dres.probability, post_m
        post_m = post.matrix if isinstance(post, DensityOperator) else post
        fid = None if post_m is None else fidelity(post_m, want)
        src = P @ rho @ P.conj().T if direction == "b2a" else rho
        for label, Y in ops:
            rows.append(_row(label, _prob(Y, src)))
        rows.insert(0, _row("success", p, fid))
        result.update(probability=p, fidelity=fid,
                      completeness_error=_completeness([Y for _, Y in ops], src.shape[0]))
        return result, rows
    if direction == "a2b":
        rec = convert_unconditional_a_to_b(rho, cfg)
        want = P @ rho @ P.conj().T
        total = 0.0
        for b in rec.branches:
            m = b.label["phase_index"]
            if use_oracle:
                chi = phase_basis(N, cfg.Phi)[:, m]
                dres = oracle.dense_a_to_b(rho, cfg, chi=chi, splitters=False,
                                            feed_phase=float(phase_values(N, cfg.Phi)[m]))
                bp = dres.probability
                bm = None if dres.state is None else oracle.sector_matrix(dres.state, N)[0]
            else:
                bp = b.probability
                bm = None if b.post_state is None else b.post_state.matrix
            total += bp
            rows.append(_row(b.label, bp, None if bm is None else fidelity(bm, want)))
        result.update(probability=total, fidelity=fidelity(rec.post_state.matrix, want))
        return result, rows
    trials = d.get("trials", 0)
    rho_b = P @ rho @ P.conj().T
    rec = convert_unconditional_b_to_a(rho_b, cfg, rng=rng, runs=trials)
    prep = pegg_barnett_state(N, 0.0)
    total = 0.0
    for b in rec.branches:
        bp = b.probability
        if use_oracle:
            bp = oracle.dense_b_to_a(rho_b, cfg, click=("b", b.label["b"]), prep=prep,
                                     splitters=False).probability
        total += bp
        rows.append(_row(b.label, bp, b.extra["restored_fidelity"]))
    result.update(probability=total, fidelity=fidelity(rec.post_state.matrix, rho),
                  first_trial_success=rec.branches[0].probability)
    if rec.trials is not None:
        t = rec.trials
        result["trials"] = {
            "runs": t.runs, "mean": t.mean, "stderr": t.stderr, "expected": N + 1,
            "z_score": (t.mean - (N + 1)) / t.stderr if t.stderr > 0 else 0.0,
            "cap": t.cap, "cap_exceeded": t.cap_exceeded, "min_fidelity": t.min_fidelity,
        }
        counts = np.bincount(t.counts, minlength=t.cap + 1)
        for n_trials in range(1, t.cap + 1):
            if counts[n_trials]:
                rows.append(_row("sampled", counts[n_trials] / t.runs, None, n_trials))
    return result, rows


def _run_engineer(d: dict, rng, use_oracle: bool):
    N = d["N"]
    cfg = build_engineering(d["A"], N, d.get("Phi", 0.0))
    rho = build_state(d.get("input", {"maximally_mixed": True}), N)
    A = build_target_operator(cfg)
    want = _ideal(A, rho)
    mode = d.get("mode", "conditional")
    rows = []
    result = {"mode": mode, "transmittances": cfg.Tk}
    if mode == "conditional":
        rec = run_engineering(rho, cfg)
        p, post = rec.probability, None if rec.post_state is None else rec.post_state.matrix
        if use_oracle:
            dres = oracle.dense_engineering(rho, cfg)
            p, post = dres.probability, None if dres.state is None else dres.state.matrix
        ops = engineering_outcomes(cfg)
        rows.append(_row("success", p, None if post is None else fidelity(post, want)))
        rows += [_row(label, _prob(Y, rho)) for label, Y in ops]
        result.update(
            probability=p, fidelity=rows[0]["fidelity"],
            predicted_probability=float(np.trace(A @ rho @ A.conj().T).real) / (N + 1) ** 2,
            completeness_error=_completeness([Y for _, Y in ops], N + 1),
        )
        return result, rows
    rec = run_engineering_unconditional(rho, cfg)
    total = 0.0
    for b in rec.branches:
        bp = b.probability
        if use_oracle:
            bp = oracle.dense_engineering(rho, cfg, m=b.label["phase_index"], click=("b", b.label["b"]),
                                          feed_forward=True).probability
        total += bp
        rows.append(_row(b.label, bp))
    result.update(probability=rec.probability, heralded_total=total,
                  fidelity=None if rec.post_state is None else fidelity(rec.post_state.matrix, want))
    return result, rows


def _run_measure(d: dict, rng, use_oracle: bool):
    N = d["N"]
    kind = d["kind"]
    rho = build_state(d.get("rho", {"maximally_mixed": True}), N)
    shots = d.get("shots") if d.get("mode") == "shots" else None
    make = oracle.DenseProbeChannel if use_oracle else ProbeChannel
    rows = []
    result: dict = {"kind": kind}
    if kind in ("overlap", "unconditional-probe"):
        cfg = build_engineering(d.get("A"), N, left=LeftInput.VACUUM)
        if kind == "overlap":
            for k in range(N + 1):
                if use_oracle:
                    p = oracle.dense_engineering(rho, cfg, click=("b", k)).probability
                else:
                    p = overlap_probe(rho, cfg, k)
                rows.append(_row({"b": k}, p))
            A = build_target_operator(cfg)
            predicted = np.diag(A @ rho @ A.conj().T).real / (N + 1)
            result["predicted"] = predicted
        else:
            p = unconditional_probe(rho, cfg)
            cond = np.array([overlap_probe(rho, cfg, k) for k in range(N + 1)])
            rows += [_row({"b": k}, float(p[k])) for k in range(N + 1)]
            result["ratio_to_heralded"] = p / cond
        return result, rows
    if kind == "qnd":
        res = qnd_purify(rho)
        top = float(np.linalg.eigvalsh(rho)[-1])
        result.update(fidelity=res.fidelity, probability=res.probability, top_eigenvalue=top)
        rows.append(_row("success", res.probability, res.fidelity))
        return result, rows
    ch = make(rho, N, shots, rng)
    if kind == "expectation":
        Z = build_operator(d.get("Z", {"identity": True}), N, what="Z")
        val = expectation(Z, ch)
        result.update(value=val, exact=complex(np.trace(rho @ Z)),
                      error=abs(val - np.trace(rho @ Z)))
        return result, rows
    est = reconstruct_fock_matrix(ch)
    result.update(matrix=est, trace_distance=trace_distance(
        (est + est.conj().T) / 2, rho), evaluations=ch.evaluations)
    for n in range(N + 1):
        rows.append(_row({"fock": n}, float(est[n, n].real)))
    return result, rows


def _run_reconstruct(d: dict, rng, use_oracle: bool):
    N = d["N"]
    rho = build_state(d["rho"], N)
    shots = d.get("shots") if d.get("mode") == "shots" else None
    ch = ProbeChannel(rho, N, shots, rng)
    res = diagonalize_experimentally(ch, d.get("direction", "max"),
                                     max_cycles=d.get("max_cycles", 400))
    exact = np.linalg.eigvalsh(rho)
    exact = exact[::-1] if d.get("direction", "max") == "max" else exact
    result = {
        "eigenvalues": res.eigenvalues,
        "exact_eigenvalues": exact,
        "spectrum_error": float(np.abs(res.eigenvalues - exact).max()),
        "trace_distance": trace_distance(res.reconstruct(), rho),
        "unitary": res.unitary.matrix,
        "evaluations": res.evaluations,
        "first_stage_signal": res.signals_history[0][-1],
    }
    if use_oracle:
        dense = oracle.DenseProbeChannel(rho, N).exact_signals(res.unitary.matrix)
        result["oracle_signal_deviation"] = float(np.abs(dense - ch.exact_signals(res.unitary.matrix)).max())
    rows = []
    for k, hist in enumerate(res.signals_history):
        for c, s in enumerate(hist):
            rows.append(_row({"stage": k, "cycle": c}, s))
    return result, rows


def _run_telemanip(d: dict, rng, use_oracle: bool):
    N = d["N"]
    cfg = build_engineering(d.get("A"), N, d.get("Phi", 0.0))
    rho = build_state(d.get("input", {"maximally_mixed": True}), N)
    mode = d.get("mode", "conditional")
    A = build_target_operator(cfg)
    result: dict = {"mode": mode}
    rows = []
    marg = bob_marginal(rho, cfg)
    result["bob_marginal_deviation"] = float(np.abs(marg - np.eye(N + 1) / (N + 1)).max())
    if mode == "conditional":
        rec = run_telemanip_conditional(rho, cfg)
        p, post = rec.probability, rec.post_state.matrix
        if use_oracle:
            dres = oracle.dense_telemanip(rho, cfg)
            p, post = dres.probability, dres.state.matrix
        fid = fidelity(post, _ideal(A.conj(), rho))
        rows.append(_row("success", p, fid))
        ops = telemanip_outcomes(cfg)
        rows += [_row(label, _prob(Y, rho)) for label, Y in ops]
        result.update(probability=p, fidelity=fid,
                      completeness_error=_completeness([Y for _, Y in ops], N + 1),
                      transcript=[m.to_dict() for m in rec.extra["transcript"]])
        return result, rows
    if mode == "unconditional":
        rec = run_telemanip_unconditional(rho, cfg)
        for b in rec.branches:
            bp = b.probability
            if use_oracle:
                bp = oracle.dense_telemanip(rho, cfg, m=b.label["phase_index"],
                                            click=("b", b.label["b"])).probability
            ideal = _ideal(b.effective_operator, rho) if bp > 0 else None
            fid = None if b.post_state is None else fidelity(b.post_state.matrix, ideal)
            rows.append(_row(b.label, bp, fid))
        result.update(probability=sum(r["probability"] for r in rows),
                      reports=len(rec.extra["transcript"]))
        return result, rows
    if mode == "reduced-engineering":
        red, red_p = reduced_states_engineering(rho, cfg)
        c_red, c_red_p, p = engineering_reduced_closed_form(rho, cfg)
        if use_oracle:
            right, her = oracle.dense_engineering_reduced(rho, cfg)
            red, red_p = right, her.state
        result.update(
            probability=p,
            reduced_deviation=float(np.abs(red.matrix - c_red).max()),
            reduced_prime_deviation=float(np.abs(red_p.matrix - c_red_p).max()),
        )
        rows.append(_row("b=0", p, fidelity(red_p.matrix, c_red_p)))
        return result, rows
    red, red_p = reduced_states_telemanip(rho, cfg)
    c_red, p = telemanip_reduced_closed_form(rho, cfg)
    if use_oracle:
        alice, bob = oracle.dense_telemanip_reduced(rho, cfg)
        red, red_p = alice.state, bob.state
    result.update(
        probability=p,
        reduced_deviation=float(np.abs(red.matrix - c_red).max()),
        bob_deviation=float(np.abs(red_p.matrix - np.eye(N + 1) / (N + 1)).max()),
    )
    rows.append(_row("b=0", p, fidelity(red.matrix, c_red)))
    return result, rows


def _run_identity(d: dict, rng, use_oracle: bool):
    check = d["check"]
    rows = []
    if check == "vacuum-projection":
        cases = d.get("cases", 50)
        max_cut = d.get("max_cutoff", 6)
        worst = 0.0
        for i in range(cases):
            T = np.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random())
            R = np.sqrt(1 - abs(T) ** 2) * np.exp(2j * np.pi * rng.random())
            cut = int(rng.integers(0, max_cut + 1))
            got = explicit_vacuum_projected_splitter(T, R, cut)
            dev = float(np.abs(got - np.diag(T ** np.arange(cut + 1))).max())
            worst = max(worst, dev)
            rows.append(_row({"case": i, "cutoff": cut}, dev))
        return {"check": check, "cases": cases, "max_deviation": worst}, rows
    N = d.get("N", 2)
    if check == "device":
        cfg = ConverterConfig.canonical(N)
        sp, dense = oracle.dense_device(cfg)
        fast = build_M(cfg, sp)
        dev = float(np.abs(fast - dense).max())
        return {"check": check, "max_deviation": dev, "dimension": sp.dim}, [_row("device", dev)]
    worst = 0.0
    for i in range(d.get("cases", 20)):
        U = _random({"random": "unitary", "seed": int(rng.integers(2**31))}, N + 1)
        mesh = synthesize_mesh(U)
        dev = float(np.abs(mesh.matrix() - U).max())
        worst = max(worst, dev)
        rows.append(_row({"case": i}, dev))
    return {"check": check, "max_deviation": worst}, rows


RUNNERS = {
    "convert": _run_convert,
    "engineer": _run_engineer,
    "measure": _run_measure,
    "reconstruct": _run_reconstruct,
    "telemanip": _run_telemanip,
    "identity-check": _run_identity,
}


# ------------------------------------------------------------------ serialization


def canonical_number(x: float) -> float:
    if not math.isfinite(x):
        return x
    y = float(f"{x:.15g}")
    return 0.0 if y == 0 else y


def to_jsonable(v):
    if isinstance(v, dict):
        return {str(k): to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return to_jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        if v.imag == 0:
            return canonical_number(float(v.real))
        return [canonical_number(float(v.real)), canonical_number(float(v.imag))]
    if isinstance(v, (float, np.floating)):
        return canonical_number(float(v))
    if v is None or isinstance(v, str):
        return v
    raise TypeError(f"cannot serialize {type(v).__name__}")


def config_hash(descriptor: dict) -> str:
    text = json.dumps(descriptor, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def run(descriptor: dict, preset: str | None = None, seed: int | None = None,
        use_oracle: bool = False) -> tuple[dict, list[dict], int]:
    """Execute a validated descriptor: (document, csv rows, exit status)."""
    d = copy.deepcopy(descriptor)
    if seed is not None:
        d["seed"] = seed
    provenance = {
        "tool": TOOL,
        "version": __version__,
        "schema": SCHEMA_NAME,
        "config_sha256": config_hash(d),
        "preset": preset,
        "seed": d.get("seed"),
        "oracle": use_oracle,
    }
    rng = np.random.default_rng(d.get("seed", 0))
    doc = {"provenance": provenance, "protocol": d["protocol"], "N": d.get("N")}
    try:
        result, rows = RUNNERS[d["protocol"]](d, rng, use_oracle)
    except TuningError as e:
        best = e.best
        info = {"type": "TuningError", "message": str(e)}
        if hasattr(best, "eigenvalues"):
            info["best_eigenvalues"] = best.eigenvalues
        doc.update(status="error", error=info)
        return to_jsonable(doc), [], 1
    except (ConfigurationError, SpaceMismatchError, np.linalg.LinAlgError) as e:
        doc.update(status="error", error={"type": type(e).__name__, "message": str(e)})
        return to_jsonable(doc), [], 1
    doc.update(status="ok", result=result, outcomes=rows)
    return to_jsonable(doc), to_jsonable(rows), 0


def render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"


def render_csv(doc: dict, rows: list[dict]) -> str:
    buf = io.StringIO()
    for k, v in doc["provenance"].items():
        buf.write(f"# {k}: {json.dumps(v)}\n")
    buf.write(f"# status: {doc['status']}\n")
    if doc["status"] != "ok":
        buf.write(f"# error: {json.dumps(doc['error'])}\n")
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r[k] is None else r[k] for k in CSV_COLUMNS})
    return buf.getvalue()


# ------------------------------------------------------------------ entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=TOOL, description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a preset or a descriptor file")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", metavar="NAME")
    src.add_argument("--config", metavar="FILE", help="descriptor JSON ('-' for stdin)")
    r.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    r.add_argument("--format", choices=("json", "csv"))
    r.add_argument("--seed", type=int)
    r.add_argument("--oracle", action="store_true", help="use the dense brute-force circuits")
    sub.add_parser("list-presets", help="list the named scenarios")
    return p


def _write(text: str, path: str | None):
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-presets":
        width = max(len(n) for n in PRESETS)
        for name, proto, desc in list_presets():
            print(f"{name:<{width}}  {proto:<15} {desc}")
        return 0
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 2
    if args.preset is not None:
        if args.preset not in PRESETS:
            print(f"error: unknown preset {args.preset!r}; see list-presets", file=sys.stderr)
            return 2
        descriptor = copy.deepcopy(PRESETS[args.preset])
    else:
        try:
            if args.config == "-":
                text = sys.stdin.read()
            else:
                with open(args.config) as f:
                    text = f.read()
        except OSError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        try:
            descriptor = parse_descriptor(text, args.config, args.seed)
        except DescriptorError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
    out_spec = descriptor.get("output", {})
    fmt = args.format or out_spec.get("format", "json")
    path = args.out or out_spec.get("path")
    doc, rows, status = run(descriptor, args.preset, args.seed, args.oracle)
    text = render_json(doc) if fmt == "json" else render_csv(doc, rows)
    _write(text, path)
    if status:
        print(f"error: {doc['error']['type']}: {doc['error']['message']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
