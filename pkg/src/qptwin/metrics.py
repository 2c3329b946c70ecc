"""Fidelity measures, log-infidelity transform, and W1 distribution distance.

Process fidelity against a unitary (rank-1 chi) target is the overlap
Tr(chi_target chi_est); against a general CPTP target it is the Uhlmann
fidelity of the two chi matrices viewed as unit-trace PSD operators. The
distributional comparisons work on q = log10(1 - F) clipped to a fixed
window, with the Wasserstein-1 distance computed exactly from
piecewise-constant empirical CDFs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantum import ProcessMatrix

RANK1_TOL = 1e-10


@dataclass(frozen=True)
class FidelitySample:
    """One fidelity estimate with its clipped log-infidelity."""

    fidelity: float
    q: float
    source: str = ""

    @classmethod
    def from_fidelity(cls, fidelity: float, source: str = "",
                      xi_min: float = 1.0, xi_max: float = 5.0) -> "FidelitySample":
        return cls(fidelity=fidelity, source=source,
                   q=infidelity_log(fidelity, xi_min, xi_max))


@dataclass(frozen=True)
class DistributionSummary:
    mean: float
    std: float
    median: float
    iqr_low: float
    iqr_high: float


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.conj().T) / 2)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def process_fidelity(chi_est: ProcessMatrix, chi_target: ProcessMatrix) -> float:
    """Fidelity of an estimated chi against a target chi.

    Unitary (rank-1) targets use the overlap Tr(chi_t chi_e); general CPTP
    targets use the Uhlmann fidelity of the trace-normalized chi matrices.
    The two agree when the target is rank-1.
    """
    if chi_est.n_qubits != chi_target.n_qubits:
        raise ValueError("chi matrices have different qubit counts")
    target = chi_target.chi / np.real(np.trace(chi_target.chi))
    est = chi_est.chi
    eigs = np.linalg.eigvalsh((target + target.conj().T) / 2)
    if eigs[-2] < RANK1_TOL * max(eigs[-1], 1.0):
        f = float(np.real(np.trace(target @ est)))
    else:
        est = est / np.real(np.trace(est))
        root = _psd_sqrt(target)
        f = float(np.real(np.trace(_psd_sqrt(root @ est @ root)))) ** 2
    return float(np.clip(f, 0.0, 1.0))


def avg_gate_fidelity(f_chi: float, n_qubits: int) -> float:
    """Average gate fidelity (d F + 1) / (d + 1) with d = 2**n_qubits."""
    if not 0.0 <= f_chi <= 1.0:
        raise ValueError(f"process fidelity must be in [0, 1], got {f_chi}")
    d = 2 ** n_qubits
    return (d * f_chi + 1.0) / (d + 1.0)


def infidelity_log(fidelity: float, xi_min: float = 1.0,
                   xi_max: float = 5.0) -> float:
    """q = log10(1 - F), clipped to [-xi_max, -xi_min]."""
    if not 0.0 < xi_min < xi_max:
        raise ValueError("need 0 < xi_min < xi_max")
    infid = 1.0 - fidelity
    if infid <= 0.0:
        return -xi_max
    return float(np.clip(np.log10(infid), -xi_max, -xi_min))


def w1_empirical(samples_a, samples_b) -> float:
    """Exact W1 distance between two empirical distributions.

    Computed as the area between the piecewise-constant CDFs, integrated
    over the merged support breakpoints.
    """
    a = np.sort(np.asarray(samples_a, dtype=float))
    b = np.sort(np.asarray(samples_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample list")
    points = np.concatenate([a, b])
    points.sort()
    # CDF values just after each breakpoint, via counts of samples <= point.
    cdf_a = np.searchsorted(a, points, side="right") / a.size
    cdf_b = np.searchsorted(b, points, side="right") / b.size
    gaps = np.diff(points)
    return float(np.sum(np.abs(cdf_a[:-1] - cdf_b[:-1]) * gaps))


def w1_distance(samples, ref_xi0: float, xi_min: float = 1.0,
                xi_max: float = 5.0) -> float:
    """W1 distance between clipped log-infidelity samples and the ideal
    reference, a point mass at -ref_xi0.

    The result lies in [0, xi_max - xi_min] since both distributions live
    on that interval.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample list")
    if not xi_min <= ref_xi0 <= xi_max:
        raise ValueError("reference xi_0 must lie inside the clip window")
    lo, hi = -xi_max, -xi_min
    if samples.min() < lo - 1e-12 or samples.max() > hi + 1e-12:
        raise ValueError("samples fall outside the clip window")
    return w1_empirical(samples, [-ref_xi0])


def summarize(samples) -> DistributionSummary:
    """Mean, std, median, and interquartile bounds of a sample list."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample list")
    q25, q50, q75 = np.percentile(samples, [25.0, 50.0, 75.0])
    return DistributionSummary(mean=float(samples.mean()),
                               std=float(samples.std()),
                               median=float(q50),
                               iqr_low=float(q25),
                               iqr_high=float(q75))
