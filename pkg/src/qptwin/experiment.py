"""Tomography circuit enumeration and SPAM-noisy outcome simulation.

An N-qubit run enumerates 12**N circuits: 4**N preparation gates from
{I, Rx(-pi/2), Ry(-pi/2), X} per qubit followed by 3**N measurement
rotations from {I, Rx(pi/2), Ry(pi/2)} per qubit, each read out over all
2**N computational-basis outcomes. Outcome probabilities compose the
(possibly perturbed) probe gates with the preparation channel, the gate
under test, and the measurement channel; finite statistics are drawn
multinomially per circuit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .noise import (
    MEAS_GATE_ANGLES,
    PREP_GATE_ANGLES,
    NoiseSpec,
    SpamChannels,
    anomaly_chi,
    build_spam,
    no_spam,
)
from .quantum import (
    ProcessMatrix,
    apply_chi_matrix,
    identity_chi,
    rotation_unitary,
)

PREP_LABELS = ("i", "rx-90", "ry-90", "x180")
MEAS_LABELS = ("i", "rx90", "ry90")

TAG_GATE = "gate-run"
TAG_IDENTITY = "identity-run"
TAG_ANOMALY = "anomaly"

LSGST_CIRCUITS = {1: 2916, 2: 16069}
LSGST_LOWER_BOUND = {1: False, 2: True}


def _tensor_gates(labels, angle_fn=None) -> np.ndarray:
    """Kron product of per-qubit probe gates, first qubit leftmost.

    ``angle_fn(qubit, label, theta0) -> theta`` injects coherent
    perturbations; identity slots carry no pulse and are never perturbed.
    """
    out = None
    for q, lbl in enumerate(labels):
        if lbl == "i":
            m = np.eye(2, dtype=complex)
        else:
            axis, theta0 = {**PREP_GATE_ANGLES, **MEAS_GATE_ANGLES}[lbl]
            theta = theta0 if angle_fn is None else angle_fn(q, lbl, theta0)
            m = rotation_unitary(axis, theta)
        out = m if out is None else np.kron(out, m)
    return out


@dataclass
class ProbeSet:
    """States and grouped POVM effects for the 12**N circuit family.

    ``states[i]`` is the density operator prepared by gate combo
    ``prep_labels[i]``; ``povms[r, b]`` is the effect for outcome bitstring
    ``b`` (binary, first qubit most significant) under rotation combo
    ``rot_labels[r]``. Each rotation group sums to the identity.
    """

    n_qubits: int
    prep_labels: tuple
    rot_labels: tuple
    states: np.ndarray          # (4**n, 2**n, 2**n)
    povms: np.ndarray           # (3**n, 2**n, 2**n, 2**n)
    prep_unitaries: Optional[np.ndarray] = None
    rot_unitaries: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_circuits(self) -> int:
        return len(self.prep_labels) * len(self.rot_labels)

    @property
    def n_outcomes(self) -> int:
        return 2 ** self.n_qubits

    def effects_flat(self) -> np.ndarray:
        """Effects flattened to (3**n * 2**n, dim, dim), rotation-major."""
        dim = 2 ** self.n_qubits
        return self.povms.reshape(-1, dim, dim)


def _build_probes(n_qubits: int, spam: Optional[SpamChannels]) -> ProbeSet:
    dim = 2 ** n_qubits
    prep_labels = tuple(itertools.product(PREP_LABELS, repeat=n_qubits))
    rot_labels = tuple(itertools.product(MEAS_LABELS, repeat=n_qubits))

    def prep_angle(qubit, label, theta0):
        return spam.perturbed_angle("prep", qubit, label, theta0)

    def meas_angle(qubit, label, theta0):
        return spam.perturbed_angle("meas", qubit, label, theta0)

    ket0 = np.zeros((dim, dim), dtype=complex)
    ket0[0, 0] = 1.0

    prep_unitaries = np.stack([
        _tensor_gates(labels, None if spam is None else prep_angle)
        for labels in prep_labels])
    states = np.einsum("pij,jk,plk->pil", prep_unitaries, ket0,
                       prep_unitaries.conj())
    rot_unitaries = np.stack([
        _tensor_gates(labels, None if spam is None else meas_angle)
        for labels in rot_labels])
    # Effect for outcome b under rotation U2: U2^dag |b><b| U2.
    povms = np.einsum("rbi,rbl->rbil", rot_unitaries.conj(), rot_unitaries)

    if spam is not None:
        states = np.stack([apply_chi_matrix(spam.e_sp.chi, s) for s in states])
        povms = np.stack([
            np.stack([apply_chi_matrix(spam.e_m.chi, m) for m in group])
            for group in povms])
    return ProbeSet(n_qubits=n_qubits, prep_labels=prep_labels,
                    rot_labels=rot_labels, states=states, povms=povms,
                    prep_unitaries=prep_unitaries, rot_unitaries=rot_unitaries)


@lru_cache(maxsize=None)
def ideal_probes(n_qubits: int) -> ProbeSet:
    """Noiseless probe set (cached; treat as read-only)."""
    return _build_probes(n_qubits, None)


def noisy_probes(spam: SpamChannels) -> ProbeSet:
    """Probe set dressed by one SPAM realization."""
    return _build_probes(spam.n_qubits, spam)


@dataclass
class TomographyDataset:
    """Outcome table of one QPT run.

    ``probs[c, b]`` is the estimated probability of outcome ``b`` in circuit
    ``c = i * 3**n + r`` (preparation-major). With ``shots == 0`` the
    probabilities are exact and counts are all zero.
    """

    n_qubits: int
    shots: int
    probs: np.ndarray       # (12**n, 2**n)
    counts: np.ndarray      # (12**n, 2**n) int
    seed: int = 0
    tag: str = TAG_GATE

    @property
    def n_circuits(self) -> int:
        return self.probs.shape[0]

    def prob_vector(self) -> np.ndarray:
        """Probabilities flattened in sensing-matrix row order."""
        return self.probs.reshape(-1)

    def rows(self):
        """Iterate (prep index, rotation index, outcome bitstring, count, prob)."""
        n_rot = 3 ** self.n_qubits
        width = self.n_qubits
        for c in range(self.n_circuits):
            i, r = divmod(c, n_rot)
            for b in range(self.probs.shape[1]):
                yield i, r, format(b, f"0{width}b"), int(self.counts[c, b]), float(self.probs[c, b])

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "shots": self.shots,
            "seed": self.seed,
            "tag": self.tag,
            "rows": [
                {"prep": i, "rot": r, "outcome": o, "count": cnt, "prob": p}
                for i, r, o, cnt, p in self.rows()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TomographyDataset":
        n = int(data["n_qubits"])
        n_circ = 12 ** n
        n_out = 2 ** n
        n_rot = 3 ** n
        probs = np.zeros((n_circ, n_out))
        counts = np.zeros((n_circ, n_out), dtype=np.int64)
        for row in data["rows"]:
            c = int(row["prep"]) * n_rot + int(row["rot"])
            b = int(row["outcome"], 2)
            probs[c, b] = float(row["prob"])
            counts[c, b] = int(row["count"])
        return cls(n_qubits=n, shots=int(data["shots"]), probs=probs,
                   counts=counts, seed=int(data["seed"]), tag=str(data["tag"]))


def _exact_probabilities(gate_chi: np.ndarray, states: np.ndarray,
                         effects: np.ndarray) -> np.ndarray:
    """(n_states * n_rot, n_outcomes) probabilities, preparation-major."""
    sigmas = np.stack([apply_chi_matrix(gate_chi, s) for s in states])
    # p[i, r, b] = Tr(povms[r, b] sigmas[i])
    p = np.real(np.einsum("rbjk,ikj->irb", effects, sigmas, optimize=True))
    return p.reshape(states.shape[0] * effects.shape[0], effects.shape[1])


def _validated(p: np.ndarray) -> np.ndarray:
    if p.min() < -1e-12:
        raise RuntimeError(
            f"negative outcome probability {p.min():.3e}; inconsistent channel inputs")
    p = np.clip(p, 0.0, None)
    sums = p.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise RuntimeError("circuit probabilities do not sum to 1")
    return p / sums


def simulate_qpt(gate: ProcessMatrix, spam: SpamChannels, shots: int,
                 rng: np.random.Generator, seed: int = 0,
                 tag: str = TAG_GATE) -> TomographyDataset:
    """Simulate one QPT run of ``gate`` dressed by ``spam``.

    ``shots == 0`` records exact probabilities; otherwise each circuit's
    outcome distribution is sampled multinomially with ``shots`` draws. In
    per-shot jitter mode one amplitude offset is drawn per shot and applied
    to every probe pulse of that shot.
    """
    if gate.n_qubits != spam.n_qubits:
        raise ValueError(
            f"qubit-count mismatch: gate has {gate.n_qubits}, spam has {spam.n_qubits}")
    if shots < 0:
        raise ValueError("shots must be >= 0")
    if spam.jitter_per_shot:
        if shots == 0:
            probs = _jitter_averaged_probs(gate, spam)
            counts = np.zeros_like(probs, dtype=np.int64)
            return TomographyDataset(gate.n_qubits, 0, probs, counts, seed, tag)
        counts = _per_shot_jitter_counts(gate, spam, shots, rng)
        return TomographyDataset(gate.n_qubits, shots, counts / shots,
                                 counts, seed, tag)

    probes = noisy_probes(spam)
    p = _validated(_exact_probabilities(gate.chi, probes.states, probes.povms))
    if shots == 0:
        counts = np.zeros_like(p, dtype=np.int64)
        return TomographyDataset(gate.n_qubits, 0, p, counts, seed, tag)
    counts = np.stack([rng.multinomial(shots, row) for row in p])
    return TomographyDataset(gate.n_qubits, shots, counts / shots,
                             counts, seed, tag)


def _probs_at_offset(gate: ProcessMatrix, spam: SpamChannels,
                     offset: float) -> np.ndarray:
    probes = noisy_probes(_apply_global_jitter(spam, offset))
    return _validated(_exact_probabilities(gate.chi, probes.states, probes.povms))


def _jitter_averaged_probs(gate: ProcessMatrix, spam: SpamChannels) -> np.ndarray:
    """Midpoint-rule average of the outcome distribution over the jitter range."""
    half = spam.jitter_halfwidth
    grid = (np.arange(257) + 0.5) / 257 * 2 * half - half
    return sum(_probs_at_offset(gate, spam, r) for r in grid) / len(grid)


def _per_shot_jitter_counts(gate: ProcessMatrix, spam: SpamChannels,
                            shots: int, rng: np.random.Generator) -> np.ndarray:
    """One fresh amplitude offset per shot, shared by all pulses of the shot."""
    half = spam.jitter_halfwidth
    n_circ = 12 ** gate.n_qubits
    counts = np.zeros((n_circ, 2 ** gate.n_qubits), dtype=np.int64)
    for _ in range(shots):
        p = _probs_at_offset(gate, spam, rng.uniform(-half, half))
        for c in range(n_circ):
            counts[c, rng.choice(p.shape[1], p=p[c])] += 1
    return counts


def _apply_global_jitter(spam: SpamChannels, offset: float) -> SpamChannels:
    """SPAM realization whose every coherent pulse carries the same offset."""
    draws = {}
    for side, gates in (("prep", PREP_GATE_ANGLES), ("meas", MEAS_GATE_ANGLES)):
        for qubit in range(spam.n_qubits):
            for label in gates:
                draws[(side, qubit, label)] = offset
    return SpamChannels(
        n_qubits=spam.n_qubits, e_sp=spam.e_sp, e_m=spam.e_m,
        lambda_sp=spam.lambda_sp, lambda_m=spam.lambda_m,
        per_gate_coherent=draws, coherent_mode="amplitude_jitter",
        jitter_per_shot=False, jitter_halfwidth=spam.jitter_halfwidth)


def collect_error_matrices(count: int, spec: NoiseSpec, shots: int,
                           rng: np.random.Generator) -> list:
    """Simulate ``count`` identity-process QPT runs with fresh SPAM each.

    A fraction ``spec.anomaly_p`` of the runs (rounded to the nearest
    integer) is replaced, at uniformly chosen positions, by runs of a
    random anomaly process with no SPAM dressing.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n_anom = int(round(spec.anomaly_p * count))
    anomaly_at = set(rng.choice(count, size=n_anom, replace=False).tolist()) \
        if n_anom else set()
    ident = identity_chi(spec.n_qubits)
    clean = no_spam(spec.n_qubits)
    datasets = []
    for k in range(count):
        child = np.random.default_rng(rng.integers(0, 2 ** 63))
        if k in anomaly_at:
            chi = anomaly_chi(spec.n_qubits, child)
            ds = simulate_qpt(chi, clean, shots, child, seed=k, tag=TAG_ANOMALY)
        else:
            spam = build_spam(spec, child)
            ds = simulate_qpt(ident, spam, shots, child, seed=k, tag=TAG_IDENTITY)
        datasets.append(ds)
    return datasets


def circuit_count(method: str, n_qubits: int, n_x: int = 0) -> int:
    """Number of experimental circuits a method needs for one gate."""
    base = 12 ** n_qubits
    if method == "std":
        return base
    if method == "em":
        return 2 * base
    if method == "ml":
        return (n_x + 1) * base
    if method == "lsgst":
        if n_qubits not in LSGST_CIRCUITS:
            raise ValueError(f"lsgst circuit counts are tabulated for N in {{1, 2}}, "
                             f"got {n_qubits}")
        return LSGST_CIRCUITS[n_qubits]
    raise ValueError(f"unknown method {method!r}")
