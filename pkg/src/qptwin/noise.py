"""SPAM error channels, random target processes, and anomaly generators.

Incoherent errors are depolarizing channels split between state preparation
and measurement. Coherent errors perturb the probe rotation gates, either by
an additive angle shift (simulation-style) or by a multiplicative amplitude
jitter (hardware-style); one perturbation is drawn per probe gate per
tomography run, so within a run the error is systematic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .quantum import (
    ProcessMatrix,
    identity_chi,
    pauli_basis,
    pauli_coefficients,
    rotation_unitary,
)

COHERENT_MODES = ("additive_shift", "amplitude_jitter")
COHERENT_TARGETS = ("both", "prep", "meas")

# Probe gate identifiers: (axis, nominal angle). The identity slot carries no
# pulse, so it never receives a coherent perturbation.
PREP_GATE_ANGLES = {
    "rx-90": ("x", -np.pi / 2),
    "ry-90": ("y", -np.pi / 2),
    "x180": ("x", np.pi),
}
MEAS_GATE_ANGLES = {
    "rx90": ("x", np.pi / 2),
    "ry90": ("y", np.pi / 2),
}


@dataclass(frozen=True)
class NoiseSpec:
    """Full SPAM error description for one simulated setup.

    ``lambda1`` is the total depolarizing budget (split between preparation
    and measurement), ``lambda2`` the half-width of the coherent
    perturbation (units of pi for additive shifts, relative amplitude for
    jitter). ``split=None`` draws the preparation share uniformly from
    [0, lambda1] on every run; a (sp, m) tuple pins it.
    """

    n_qubits: int = 1
    lambda1: float = 0.0
    lambda2: float = 0.0
    split: Optional[Tuple[float, float]] = None
    coherent_mode: str = "additive_shift"
    coherent_on: str = "both"
    jitter_per_shot: bool = False
    anomaly_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ValueError(f"lambda1 must be in [0, 1], got {self.lambda1}")
        if not 0.0 <= self.lambda2 <= 1.0:
            raise ValueError(f"lambda2 must be in [0, 1], got {self.lambda2}")
        if not 0.0 <= self.anomaly_p <= 1.0:
            raise ValueError(f"anomaly_p must be in [0, 1], got {self.anomaly_p}")
        if self.coherent_mode not in COHERENT_MODES:
            raise ValueError(
                f"coherent_mode must be one of {COHERENT_MODES}, got {self.coherent_mode!r}")
        if self.coherent_on not in COHERENT_TARGETS:
            raise ValueError(
                f"coherent_on must be one of {COHERENT_TARGETS}, got {self.coherent_on!r}")
        if self.split is not None:
            sp, m = self.split
            if sp < 0 or m < 0 or abs(sp + m - self.lambda1) > 1e-12:
                raise ValueError(
                    f"fixed split {self.split} must be non-negative and sum to lambda1")

    @property
    def lambda_tot(self) -> float:
        return (self.lambda1 + self.lambda2) / 2


@dataclass(frozen=True)
class SpamChannels:
    """One sampled SPAM realization: depolarizing channels plus the
    per-probe-gate coherent draws for this run.

    ``per_gate_coherent`` maps (side, qubit, gate label) to the sampled
    angle shift (additive mode, radians) or relative offset (jitter mode).
    """

    n_qubits: int
    e_sp: ProcessMatrix
    e_m: ProcessMatrix
    lambda_sp: float
    lambda_m: float
    per_gate_coherent: dict = field(default_factory=dict)
    coherent_mode: str = "additive_shift"
    jitter_per_shot: bool = False
    jitter_halfwidth: float = 0.0

    def perturbed_angle(self, side: str, qubit: int, label: str,
                        theta0: float) -> float:
        """Effective rotation angle of a probe gate under this run's draws."""
        draw = self.per_gate_coherent.get((side, qubit, label))
        if draw is None:
            return theta0
        if self.coherent_mode == "additive_shift":
            return theta0 + draw
        return theta0 * (1.0 + draw)


def depolarizing_chi(lam: float, n_qubits: int) -> ProcessMatrix:
    """Chi matrix of rho -> (1 - lam) rho + lam I / 2**n."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"depolarizing strength must be in [0, 1], got {lam}")
    size = 4 ** n_qubits
    chi = (lam / size) * np.eye(size, dtype=complex)
    chi[0, 0] += 1.0 - lam
    return ProcessMatrix(n_qubits=n_qubits, chi=chi)


def _sample_offset(spec: NoiseSpec, rng: np.random.Generator) -> float:
    """One coherent draw: additive shift in radians, or relative jitter."""
    if spec.coherent_mode == "additive_shift":
        return rng.uniform(-spec.lambda2 * np.pi, spec.lambda2 * np.pi)
    return rng.uniform(-spec.lambda2, spec.lambda2)


def coherent_rotation_error(gate_axis: str, theta0: float, spec: NoiseSpec,
                            rng: np.random.Generator) -> np.ndarray:
    """A freshly perturbed rotation unitary for one probe gate."""
    if spec.lambda2 == 0.0:
        return rotation_unitary(gate_axis, theta0)
    draw = _sample_offset(spec, rng)
    if spec.coherent_mode == "additive_shift":
        return rotation_unitary(gate_axis, theta0 + draw)
    return rotation_unitary(gate_axis, theta0 * (1.0 + draw))


def build_spam(spec: NoiseSpec, rng: np.random.Generator) -> SpamChannels:
    """Sample one SPAM realization from the spec.

    The incoherent split is drawn first, then the coherent offsets in a
    fixed (side, qubit, label) order, so a given generator state always
    yields the same channels.
    """
    if spec.split is not None:
        lam_sp, lam_m = spec.split
    else:
        lam_sp = rng.uniform(0.0, spec.lambda1)
        lam_m = spec.lambda1 - lam_sp
    draws = {}
    if spec.lambda2 > 0.0:
        sides = {"prep": PREP_GATE_ANGLES, "meas": MEAS_GATE_ANGLES}
        for side, gates in sides.items():
            if spec.coherent_on not in ("both", side):
                continue
            for qubit in range(spec.n_qubits):
                for label in gates:
                    draws[(side, qubit, label)] = _sample_offset(spec, rng)
    return SpamChannels(
        n_qubits=spec.n_qubits,
        e_sp=depolarizing_chi(lam_sp, spec.n_qubits),
        e_m=depolarizing_chi(lam_m, spec.n_qubits),
        lambda_sp=lam_sp,
        lambda_m=lam_m,
        per_gate_coherent=draws,
        coherent_mode=spec.coherent_mode,
        jitter_per_shot=spec.jitter_per_shot and spec.coherent_mode == "amplitude_jitter",
        jitter_halfwidth=spec.lambda2,
    )


def no_spam(n_qubits: int) -> SpamChannels:
    """Noiseless SPAM: identity channels, no coherent draws."""
    ident = identity_chi(n_qubits)
    return SpamChannels(n_qubits=n_qubits, e_sp=ident, e_m=ident,
                        lambda_sp=0.0, lambda_m=0.0)


def haar_random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Gaussian matrix."""
    if dim not in (2, 4, 8):
        raise ValueError(f"dim must be 2, 4, or 8, got {dim}")
    z = (rng.standard_normal((dim, dim))
         + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases


def random_cptp(n_qubits: int, kraus_rank: int,
                rng: np.random.Generator, max_retries: int = 8) -> ProcessMatrix:
    """Random CPTP chi matrix from Gaussian Kraus coefficients.

    Unnormalized Kraus operators are built from complex Gaussian Pauli
    coefficients and then right-multiplied by the inverse square root of
    their Gram operator sum_i K_i^dag K_i, which enforces trace
    preservation exactly.
    """
    size = 4 ** n_qubits
    if not 1 <= kraus_rank <= size:
        raise ValueError(f"kraus_rank must be in [1, {size}], got {kraus_rank}")
    basis = pauli_basis(n_qubits)
    for _ in range(max_retries):
        coeffs = (rng.standard_normal((kraus_rank, size))
                  + 1j * rng.standard_normal((kraus_rank, size))) / np.sqrt(2)
        raw = np.einsum("rk,kij->rij", coeffs, basis.elements)
        gram = np.einsum("rji,rjk->ik", raw.conj(), raw)
        vals, vecs = np.linalg.eigh(gram)
        if vals[0] < 1e-10 * vals[-1]:
            continue  # nearly singular normalizer; resample
        inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.conj().T
        kraus = raw @ inv_sqrt
        normed = np.stack([pauli_coefficients(k) for k in kraus])
        chi = normed.T @ normed.conj()
        return ProcessMatrix(n_qubits=n_qubits, chi=chi)
    raise RuntimeError("could not draw a non-singular Kraus normalizer")


def anomaly_chi(n_qubits: int, rng: np.random.Generator) -> ProcessMatrix:
    """A structurally valid but unrelated CPTP chi, modelling a glitched run."""
    rank = int(rng.integers(1, 4 ** n_qubits + 1))
    return random_cptp(n_qubits, rank, rng)
