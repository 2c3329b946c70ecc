"""Constrained chi-matrix reconstruction and SPAM-error-mitigated tomography.

Reconstruction is two-stage: an unconstrained complex least-squares fit of
the chi coefficients against the measured probabilities, followed by
Dykstra alternating projections between the PSD cone and the
trace-preservation affine set. Probe estimation inverts the reconstructed
identity-process (error) matrix into effective noisy states and POVMs via
projected gradient descent, which the mitigated reconstruction then uses in
place of the ideal probes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .experiment import ProbeSet, TomographyDataset, ideal_probes
from .quantum import (
    ConvergenceError,
    CptpReport,
    MeasOperator,
    PauliBasis,
    ProcessMatrix,
    QuantumState,
    is_cptp,
    pauli_basis,
    project_cptp,
    project_psd,
    project_tp,
)


@dataclass(frozen=True)
class ReconstructionOptions:
    max_iterations: int = 5000
    convergence_tol: float = 1e-10
    projection: str = "dykstra"  # or "single-pass"
    weighting: str = "uniform"

    def __post_init__(self):
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.projection not in ("dykstra", "single-pass"):
            raise ValueError(f"unknown projection scheme {self.projection!r}")


DEFAULT_OPTIONS = ReconstructionOptions()


@dataclass
class SensingMatrix:
    """Linear map from flattened chi to circuit outcome probabilities.

    Row order matches :meth:`TomographyDataset.prob_vector`; column (a, b)
    multiplies chi[a, b] (row-major flattening). Entry value:
    Tr(M_mu E_a rho_i E_b^dag).
    """

    n_qubits: int
    matrix: np.ndarray
    _pinv: Optional[np.ndarray] = None

    @property
    def pinv(self) -> np.ndarray:
        if self._pinv is None:
            self._pinv = np.linalg.pinv(self.matrix)
        return self._pinv


def sensing_matrix(probes: ProbeSet, basis: Optional[PauliBasis] = None) -> SensingMatrix:
    """Build (and cache on the probe set) the sensing matrix of a probe set."""
    cached = probes._cache.get("sensing")
    if cached is not None:
        return cached
    if basis is None:
        basis = pauli_basis(probes.n_qubits)
    e = basis.elements
    # A[(i, mu), (a, b)] = Tr(M_mu E_a rho_i E_b^dag)
    #                    = vec(M_mu E_b)^dag vec(E_a rho_i).
    x = np.einsum("akl,ilm->aikm", e, probes.states).reshape(
        basis.size, probes.states.shape[0], -1)
    effects = probes.effects_flat()
    y = np.einsum("mjk,bkl->mbjl", effects, e).reshape(
        effects.shape[0], basis.size, -1)
    a = np.einsum("mbv,aiv->imab", y.conj(), x, optimize=True)
    n_rows = probes.states.shape[0] * effects.shape[0]
    mat = a.reshape(n_rows, basis.size ** 2)
    sensing = SensingMatrix(n_qubits=probes.n_qubits, matrix=mat)
    probes._cache["sensing"] = sensing
    return sensing


@dataclass(frozen=True)
class ReconstructionResult:
    chi: ProcessMatrix
    residual: float
    iterations: int
    cptp_report: CptpReport

    def to_dict(self) -> dict:
        return {"chi": self.chi.to_dict(),
                "residual": self.residual,
                "iterations": self.iterations,
                "cptp_report": {
                    "hermiticity_residual": self.cptp_report.hermiticity_residual,
                    "min_eigenvalue": self.cptp_report.min_eigenvalue,
                    "tp_residual": self.cptp_report.tp_residual,
                    "trace_re": self.cptp_report.trace.real,
                    "trace_im": self.cptp_report.trace.imag}}


def reconstruct_chi_full(data: TomographyDataset, probes: ProbeSet,
                         opts: ReconstructionOptions = DEFAULT_OPTIONS) -> ReconstructionResult:
    """Least-squares chi fit followed by CPTP projection, with diagnostics."""
    if data.n_qubits != probes.n_qubits:
        raise ValueError("dataset and probes disagree on qubit count")
    sensing = sensing_matrix(probes)
    p = data.prob_vector()
    x = sensing.pinv @ p
    size = 4 ** data.n_qubits
    chi = x.reshape(size, size)
    chi = (chi + chi.conj().T) / 2
    if opts.projection == "single-pass":
        chi = project_tp(project_psd(chi))
        iters = 1
    else:
        chi, iters = project_cptp(chi, tol=opts.convergence_tol,
                                  max_iterations=opts.max_iterations)
    residual = float(np.linalg.norm(sensing.matrix @ chi.reshape(-1) - p))
    result = ProcessMatrix(n_qubits=data.n_qubits, chi=chi)
    return ReconstructionResult(chi=result, residual=residual,
                                iterations=iters, cptp_report=is_cptp(result))


def reconstruct_chi(data: TomographyDataset, probes: ProbeSet,
                    opts: ReconstructionOptions = DEFAULT_OPTIONS) -> ProcessMatrix:
    """Chi matrix minimizing the probability misfit, CPTP-projected."""
    return reconstruct_chi_full(data, probes, opts).chi


# ----------------------------------------------------------------------
# Probe estimation from an error matrix
# ----------------------------------------------------------------------

def project_density(mat: np.ndarray) -> np.ndarray:
    """Nearest density operator: eigenvalues projected onto the simplex."""
    herm = (mat + mat.conj().T) / 2
    vals, vecs = np.linalg.eigh(herm)
    projected = _simplex_project(vals)
    return (vecs * projected) @ vecs.conj().T


def _simplex_project(vals: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto the probability simplex."""
    u = np.sort(vals)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(u) + 1)
    cond = u - css / ks > 0
    k = ks[cond][-1]
    tau = css[k - 1] / k
    return np.clip(vals - tau, 0.0, None)


def _predicted_probabilities(error_chi: ProcessMatrix) -> np.ndarray:
    """Outcome probabilities the error matrix predicts for the ideal circuits."""
    probes = ideal_probes(error_chi.n_qubits)
    sensing = sensing_matrix(probes)
    q = np.real(sensing.matrix @ error_chi.chi.reshape(-1))
    return q.reshape(len(probes.prep_labels), -1)  # (4**n, 3**n * 2**n)


def _pgd_minimize(x0: np.ndarray, value_grad, project, opts: ReconstructionOptions,
                  what: str) -> np.ndarray:
    """Projected gradient descent with backtracking line search.

    ``value_grad(x) -> (f, grad)`` with the Frobenius/HS real inner product;
    ``project(x)`` maps onto the feasible set. Stops when the iterate moves
    less than ``opts.convergence_tol`` in norm.
    """
    x = project(x0)
    f, g = value_grad(x)
    step = 1.0
    move = 0.0
    for _ in range(opts.max_iterations):
        accepted = False
        while step >= 1e-14:
            trial = project(x - step * g)
            move = float(np.linalg.norm(trial - x))
            if move == 0.0:
                return x
            f_trial, g_trial = value_grad(trial)
            # Sufficient decrease in the proximal sense.
            if f_trial <= f - 0.25 * move ** 2 / step:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return x  # step collapsed: stationary within working precision
        x, f, g = trial, f_trial, g_trial
        step = min(step * 1.5, 1e6)
        if move < opts.convergence_tol:
            return x
    raise ConvergenceError(f"{what} did not converge", move)


def estimate_states(error_chi: ProcessMatrix, probes: ProbeSet,
                    opts: ReconstructionOptions = DEFAULT_OPTIONS) -> list:
    """Effective noisy input states implied by an identity-process matrix.

    For each preparation, finds the density operator whose ideal-measurement
    statistics best match the error matrix's predictions, assuming the
    measurements themselves are perfect.
    """
    q = _predicted_probabilities(error_chi)
    effects = ideal_probes(error_chi.n_qubits).effects_flat()
    evecs = effects.reshape(effects.shape[0], -1).conj()  # row mu: conj entries of M_mu
    states = []
    for i in range(q.shape[0]):
        target = q[i]

        def value_grad(rho, target=target):
            pred = np.real(evecs @ rho.reshape(-1))
            err = pred - target
            grad = 2 * np.einsum("m,mjk->jk", err, effects)
            return float(err @ err), grad

        x0 = devec_least_squares(evecs, target)
        rho = _pgd_minimize(x0, value_grad, project_density, opts,
                            f"state estimation (prep {i})")
        states.append(QuantumState(n_qubits=error_chi.n_qubits, rho=rho))
    return states


def devec_least_squares(evecs: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Hermitized unconstrained least-squares solve in operator space.

    ``evecs`` rows are row-major-flattened conjugated operators, so
    ``evecs @ x.flatten()`` evaluates Tr(Op^dag X) for each row.
    """
    sol, *_ = np.linalg.lstsq(evecs, target.astype(complex), rcond=None)
    dim = int(round(np.sqrt(sol.size)))
    mat = sol.reshape(dim, dim)
    return (mat + mat.conj().T) / 2


def estimate_povms(error_chi: ProcessMatrix, probes: ProbeSet,
                   opts: ReconstructionOptions = DEFAULT_OPTIONS) -> list:
    """Effective noisy POVM effects implied by an identity-process matrix.

    Effects are estimated jointly within each measurement-rotation group,
    assuming perfect input states, under positivity and per-group
    completeness constraints.
    """
    n = error_chi.n_qubits
    probes_ideal = ideal_probes(n)
    q = _predicted_probabilities(error_chi)  # (4**n, 3**n * 2**n)
    states = probes_ideal.states
    svecs = states.reshape(states.shape[0], -1).conj()  # row i: vec(rho_i)^dag
    n_out = probes_ideal.n_outcomes
    dim = 2 ** n
    estimated = []
    for r in range(len(probes_ideal.rot_labels)):
        targets = q[:, r * n_out:(r + 1) * n_out]  # (4**n, 2**n)

        def value_grad(block, targets=targets):
            # block: (n_out, dim, dim) stacked effects of this group
            pred = np.real(np.einsum("bjk,ikj->ib", block, states))
            err = pred - targets
            grad = 2 * np.einsum("ib,ijk->bjk", err, states)
            return float((err * err).sum()), grad

        x0 = np.stack([
            devec_least_squares(svecs, targets[:, b]) for b in range(n_out)])
        block = _pgd_minimize(x0, value_grad,
                              lambda blk: _project_povm_group(blk),
                              opts, f"POVM estimation (rotation {r})")
        for b in range(n_out):
            estimated.append(MeasOperator(
                n_qubits=n, m=block[b],
                outcome_label=format(b, f"0{n}b")))
    return estimated


def _project_povm_group(block: np.ndarray, tol: float = 1e-12,
                        max_iterations: int = 500) -> np.ndarray:
    """Dykstra projection of a stack of effects onto {M_b PSD, sum_b M_b = I}."""
    dim = block.shape[-1]
    eye = np.eye(dim)
    x = block.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iterations):
        y = np.stack([project_psd(m) for m in x + p])
        p = x + p - y
        z = y + q
        correction = (z.sum(axis=0) - eye) / block.shape[0]
        x_new = z - correction[None, :, :]
        q = z - x_new
        change = np.linalg.norm(x_new - x)
        x = x_new
        if change < tol:
            break
    return x


def noisy_probeset(error_chi: ProcessMatrix,
                   opts: ReconstructionOptions = DEFAULT_OPTIONS) -> ProbeSet:
    """Probe set rebuilt from an error matrix (mitigated states and POVMs)."""
    n = error_chi.n_qubits
    ideal = ideal_probes(n)
    states = np.stack([s.rho for s in estimate_states(error_chi, ideal, opts)])
    effects = np.stack([m.m for m in estimate_povms(error_chi, ideal, opts)])
    povms = effects.reshape(len(ideal.rot_labels), ideal.n_outcomes,
                            2 ** n, 2 ** n)
    return ProbeSet(n_qubits=n, prep_labels=ideal.prep_labels,
                    rot_labels=ideal.rot_labels, states=states, povms=povms)


def em_qpt(gate_data: TomographyDataset, error_chi: ProcessMatrix,
           opts: ReconstructionOptions = DEFAULT_OPTIONS) -> ProcessMatrix:
    """Error-mitigated reconstruction: refit the gate with mitigated probes."""
    probes = noisy_probeset(error_chi, opts)
    return reconstruct_chi(gate_data, probes, opts)
