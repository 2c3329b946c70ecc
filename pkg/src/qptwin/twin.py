"""Generative digital twin of error matrices: a from-scratch VAE.

The model is a dense variational autoencoder over flattened error matrices
(real and imaginary parts). The decoder output feeds a quantum-processing
layer that turns raw parameters into a valid process matrix: build
L L^dag + eps I from a Cholesky parameter vector, normalize the trace, then
apply one affine projection onto the trace-preservation set. All gradients
are hand-derived, including the complex-valued path through the output
layer, and verified against finite differences in the test suite.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .quantum import ProcessMatrix, _tp_projector, project_cptp
from .tomography import DEFAULT_OPTIONS, ReconstructionOptions, em_qpt


@dataclass
class DenseLayer:
    """Fully connected layer: out = act(x @ w.T + b), weights shaped (out, in)."""

    w: np.ndarray
    b: np.ndarray
    activation: str  # "tanh" or "linear"

    def to_dict(self, role: str) -> dict:
        return {"role": role, "rows": self.w.shape[0], "cols": self.w.shape[1],
                "weights": self.w.tolist(), "bias": self.b.tolist(),
                "activation": self.activation}

    @classmethod
    def from_dict(cls, data: dict) -> "DenseLayer":
        return cls(w=np.asarray(data["weights"], dtype=float),
                   b=np.asarray(data["bias"], dtype=float),
                   activation=str(data["activation"]))


@dataclass
class TrainingRecord:
    epoch: int
    total_loss: float
    recon_loss: float
    kl_loss: float


@dataclass
class VaeModel:
    """Weights and hyperparameters of the twin generator.

    ``beta`` weighs the KL term; ``eps`` stabilizes the Cholesky product in
    the output layer. The decoder emits (4**n)**2 real Cholesky parameters.
    """

    n_qubits: int
    latent_dim: int
    beta: float
    eps: float
    encoder: List[DenseLayer]
    mu_head: DenseLayer
    logvar_head: DenseLayer
    decoder: List[DenseLayer]
    seed: int = 0
    training_history: List[TrainingRecord] = field(default_factory=list)

    @property
    def chi_dim(self) -> int:
        return 4 ** self.n_qubits

    @property
    def input_dim(self) -> int:
        return 2 * self.chi_dim ** 2

    @property
    def chol_params(self) -> int:
        return self.chi_dim ** 2

    def named_layers(self):
        for i, layer in enumerate(self.encoder):
            yield ("encoder", i, layer)
        yield ("mu", 0, self.mu_head)
        yield ("logvar", 0, self.logvar_head)
        for i, layer in enumerate(self.decoder):
            yield ("decoder", i, layer)

    def layer(self, component: str, index: int) -> DenseLayer:
        if component == "encoder":
            return self.encoder[index]
        if component == "mu":
            return self.mu_head
        if component == "logvar":
            return self.logvar_head
        if component == "decoder":
            return self.decoder[index]
        raise KeyError(component)

    def to_dict(self) -> dict:
        layers = [layer.to_dict(f"{comp}:{idx}")
                  for comp, idx, layer in self.named_layers()]
        return {"n_qubits": self.n_qubits, "latent_dim": self.latent_dim,
                "beta": self.beta, "eps": self.eps, "layers": layers,
                "seed": self.seed,
                "training_history": [
                    {"epoch": r.epoch, "total_loss": r.total_loss,
                     "recon_loss": r.recon_loss, "kl_loss": r.kl_loss}
                    for r in self.training_history]}

    @classmethod
    def from_dict(cls, data: dict) -> "VaeModel":
        encoder, decoder = [], []
        mu_head = logvar_head = None
        for entry in data["layers"]:
            layer = DenseLayer.from_dict(entry)
            comp = entry["role"].split(":")[0]
            if comp == "encoder":
                encoder.append(layer)
            elif comp == "mu":
                mu_head = layer
            elif comp == "logvar":
                logvar_head = layer
            elif comp == "decoder":
                decoder.append(layer)
            else:
                raise ValueError(f"unknown layer role {entry['role']!r}")
        history = [TrainingRecord(**r) for r in data.get("training_history", [])]
        return cls(n_qubits=int(data["n_qubits"]),
                   latent_dim=int(data["latent_dim"]),
                   beta=float(data["beta"]), eps=float(data["eps"]),
                   encoder=encoder, mu_head=mu_head, logvar_head=logvar_head,
                   decoder=decoder, seed=int(data["seed"]),
                   training_history=history)


def _glorot(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def init_model(n_qubits: int, latent_dim: int = 2, hidden=(64, 32),
               beta: float = 1e-3, eps: float = 1e-5, seed: int = 0) -> VaeModel:
    """Fresh model with Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    chi_dim = 4 ** n_qubits
    input_dim = 2 * chi_dim ** 2

    def dense(n_out, n_in, activation):
        return DenseLayer(w=_glorot(rng, n_out, n_in),
                          b=np.zeros(n_out), activation=activation)

    encoder = []
    prev = input_dim
    for width in hidden:
        encoder.append(dense(width, prev, "tanh"))
        prev = width
    mu_head = dense(latent_dim, prev, "linear")
    logvar_head = dense(latent_dim, prev, "linear")
    decoder = []
    prev = latent_dim
    for width in reversed(hidden):
        decoder.append(dense(width, prev, "tanh"))
        prev = width
    decoder.append(dense(chi_dim ** 2, prev, "linear"))
    return VaeModel(n_qubits=n_qubits, latent_dim=latent_dim, beta=beta,
                    eps=eps, encoder=encoder, mu_head=mu_head,
                    logvar_head=logvar_head, decoder=decoder, seed=seed)


# ----------------------------------------------------------------------
# Feature map
# ----------------------------------------------------------------------

def chi_to_features(chi: ProcessMatrix) -> np.ndarray:
    """Real feature vector: flattened real parts, then imaginary parts."""
    return np.concatenate([chi.chi.real.reshape(-1), chi.chi.imag.reshape(-1)])


def features_to_chi_raw(features: np.ndarray, n_qubits: Optional[int] = None) -> ProcessMatrix:
    """Inverse of :func:`chi_to_features`, with no validity projection."""
    features = np.asarray(features, dtype=float)
    size = int(round(np.sqrt(features.size / 2)))
    if n_qubits is None:
        n_qubits = int(round(np.log2(max(size, 1)) / 2))
    if features.size != 2 * (4 ** n_qubits) ** 2:
        raise ValueError(f"feature length {features.size} does not match "
                         f"{n_qubits} qubits")
    size = 4 ** n_qubits
    half = size * size
    chi = features[:half].reshape(size, size) + 1j * features[half:].reshape(size, size)
    return ProcessMatrix(n_qubits=n_qubits, chi=chi)


# ----------------------------------------------------------------------
# Forward pass
# ----------------------------------------------------------------------

def _dense_forward(layers, x):
    caches = []
    h = x
    for layer in layers:
        pre = h @ layer.w.T + layer.b
        out = np.tanh(pre) if layer.activation == "tanh" else pre
        caches.append((h, out))
        h = out
    return h, caches


def _dense_backward(layers, caches, g_out, grads, component):
    g = g_out
    for idx in reversed(range(len(layers))):
        layer = layers[idx]
        inp, out = caches[idx]
        if layer.activation == "tanh":
            g = g * (1.0 - out * out)
        grads[(component, idx, "w")] += g.T @ inp
        grads[(component, idx, "b")] += g.sum(axis=0)
        g = g @ layer.w
    return g


def _build_lower(params: np.ndarray, dim: int) -> np.ndarray:
    lower = np.zeros((dim, dim), dtype=complex)
    lower[np.diag_indices(dim)] = params[:dim]
    k = dim
    for i in range(1, dim):
        for j in range(i):
            lower[i, j] = params[k] + 1j * params[k + 1]
            k += 2
    return lower


def _qprocess_forward(params: np.ndarray, dim: int, eps: float, n_qubits: int):
    """Cholesky product, trace normalization, one TP projection."""
    lower = _build_lower(params, dim)
    gram = lower @ lower.conj().T + eps * np.eye(dim)
    t = float(np.real(np.trace(gram)))
    y = gram / t
    lmat, lpinv, bvec = _tp_projector(n_qubits)
    flat = y.reshape(-1)
    chi = (flat - lpinv @ (lmat @ flat - bvec)).reshape(dim, dim)
    return chi, (lower, gram, t)


def _qprocess_backward(g_chi: np.ndarray, cache, dim: int, n_qubits: int) -> np.ndarray:
    """Pull a complex cotangent on chi back to the real Cholesky parameters.

    Complex gradients use the convention g = dL/dRe + i dL/dIm, under which
    a complex-linear map M pulls back as M^H.
    """
    lower, gram, t = cache
    lmat, lpinv, _ = _tp_projector(n_qubits)
    g = g_chi.reshape(-1)
    g_y = (g - lmat.conj().T @ (lpinv.conj().T @ g)).reshape(dim, dim)
    inner = float(np.real(np.sum(g_y.conj() * gram)))
    g_gram = g_y / t - (inner / t ** 2) * np.eye(dim)
    g_lower = (g_gram + g_gram.conj().T) @ lower
    g_params = np.empty(dim * dim)
    g_params[:dim] = np.real(np.diag(g_lower))
    k = dim
    for i in range(1, dim):
        for j in range(i):
            g_params[k] = g_lower[i, j].real
            g_params[k + 1] = g_lower[i, j].imag
            k += 2
    return g_params


@dataclass
class _ForwardCache:
    x: np.ndarray
    enc_caches: list
    h_enc: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    noise: np.ndarray
    z: np.ndarray
    dec_caches: list
    params: np.ndarray
    qp_caches: list
    chis: np.ndarray
    x_prime: np.ndarray
    recon: float
    kl: float
    total: float


def _forward(model: VaeModel, x: np.ndarray, noise: np.ndarray) -> _ForwardCache:
    """Full training forward pass on a batch, keeping every cache."""
    x = np.atleast_2d(x)
    noise = np.atleast_2d(noise)
    h_enc, enc_caches = _dense_forward(model.encoder, x)
    mu, mu_cache = _dense_forward([model.mu_head], h_enc)
    logvar, lv_cache = _dense_forward([model.logvar_head], h_enc)
    z = mu + noise * np.exp(logvar / 2)
    params, dec_caches = _dense_forward(model.decoder, z)
    dim = model.chi_dim
    chis = np.empty((x.shape[0], dim, dim), dtype=complex)
    qp_caches = []
    for s in range(x.shape[0]):
        chis[s], cache = _qprocess_forward(params[s], dim, model.eps, model.n_qubits)
        qp_caches.append(cache)
    half = dim * dim
    x_prime = np.concatenate(
        [chis.real.reshape(x.shape[0], half), chis.imag.reshape(x.shape[0], half)],
        axis=1)
    diff = x - x_prime
    recon = float(np.mean(np.sum(diff * diff, axis=1)))
    kl = float(np.mean(0.5 * np.sum(np.exp(logvar) + mu ** 2 - 1.0 - logvar, axis=1)))
    total = recon + model.beta * kl
    return _ForwardCache(x=x, enc_caches=enc_caches, h_enc=h_enc, mu=mu,
                         logvar=logvar, noise=noise, z=z, dec_caches=dec_caches,
                         params=params, qp_caches=qp_caches, chis=chis,
                         x_prime=x_prime, recon=recon, kl=kl, total=total)


def _zero_grads(model: VaeModel) -> dict:
    return {(comp, idx, name): np.zeros_like(getattr(layer, name))
            for comp, idx, layer in model.named_layers()
            for name in ("w", "b")}


def _backward(model: VaeModel, fwd: _ForwardCache) -> dict:
    """Gradients of the total loss for every weight and bias."""
    grads = _zero_grads(model)
    batch = fwd.x.shape[0]
    dim = model.chi_dim
    half = dim * dim

    g_xprime = 2.0 * (fwd.x_prime - fwd.x) / batch
    g_params = np.empty_like(fwd.params)
    for s in range(batch):
        g_chi = (g_xprime[s, :half] + 1j * g_xprime[s, half:]).reshape(dim, dim)
        g_params[s] = _qprocess_backward(g_chi, fwd.qp_caches[s], dim, model.n_qubits)

    g_z = _dense_backward(model.decoder, fwd.dec_caches, g_params, grads, "decoder")

    std = np.exp(fwd.logvar / 2)
    g_mu = g_z.copy()
    g_logvar = g_z * fwd.noise * std * 0.5
    # KL term (batch mean scaled by beta).
    g_mu += model.beta * fwd.mu / batch
    g_logvar += model.beta * 0.5 * (np.exp(fwd.logvar) - 1.0) / batch

    g_h = _dense_backward([model.mu_head], [(fwd.h_enc, fwd.mu)], g_mu, grads, "mu")
    g_h += _dense_backward([model.logvar_head], [(fwd.h_enc, fwd.logvar)],
                           g_logvar, grads, "logvar")
    _dense_backward(model.encoder, fwd.enc_caches, g_h, grads, "encoder")
    return grads


# ----------------------------------------------------------------------
# Public operations
# ----------------------------------------------------------------------

def encode(model: VaeModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Latent Gaussian parameters (mu, log variance) for input features."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"expected input of length {model.input_dim}, "
                         f"got {x.shape[-1]}")
    h, _ = _dense_forward(model.encoder, np.atleast_2d(x))
    mu, _ = _dense_forward([model.mu_head], h)
    logvar, _ = _dense_forward([model.logvar_head], h)
    if single:
        return mu[0], logvar[0]
    return mu, logvar


def reparameterize(mu: np.ndarray, log_var: np.ndarray,
                   noise: np.ndarray) -> np.ndarray:
    """z = mu + noise * exp(log_var / 2), elementwise."""
    mu = np.asarray(mu, dtype=float)
    log_var = np.asarray(log_var, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if mu.shape != log_var.shape or mu.shape != noise.shape:
        raise ValueError("mu, log_var, and noise must share a shape")
    return mu + noise * np.exp(log_var / 2)


def decode(model: VaeModel, z: np.ndarray, ensure_cptp: bool = True) -> ProcessMatrix:
    """Generate a process matrix from a latent vector.

    The output layer guarantees Hermiticity, unit trace, and exact trace
    preservation; positivity can in principle be nicked by the TP
    projection, so a Dykstra cleanup runs in the rare case the smallest
    eigenvalue drops below -1e-9 (a no-op for trained models in practice).
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.latent_dim:
        raise ValueError(f"expected latent vector of length {model.latent_dim}")
    params, _ = _dense_forward(model.decoder, z[None, :])
    chi, _ = _qprocess_forward(params[0], model.chi_dim, model.eps, model.n_qubits)
    if ensure_cptp:
        min_eig = np.linalg.eigvalsh((chi + chi.conj().T) / 2)[0]
        if min_eig < -1e-9:
            chi, _ = project_cptp(chi, tol=1e-12)
    return ProcessMatrix(n_qubits=model.n_qubits, chi=chi)


def loss(x: np.ndarray, x_prime_features: np.ndarray, mu: np.ndarray,
         log_var: np.ndarray, beta: float) -> Tuple[float, float, float]:
    """(total, reconstruction, KL) for one sample or a batch (batch-meaned)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xp = np.atleast_2d(np.asarray(x_prime_features, dtype=float))
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    log_var = np.atleast_2d(np.asarray(log_var, dtype=float))
    diff = x - xp
    recon = float(np.mean(np.sum(diff * diff, axis=1)))
    kl = float(np.mean(0.5 * np.sum(np.exp(log_var) + mu ** 2 - 1.0 - log_var,
                                    axis=1)))
    return recon + beta * kl, recon, kl


def train(model: VaeModel, dataset, epochs: int, batch_size: int,
          learning_rate: float, rng: np.random.Generator,
          momentum: float = 0.9) -> Tuple[VaeModel, List[TrainingRecord]]:
    """Minibatch gradient descent (with momentum) on the VAE loss.

    ``dataset`` is a list of ProcessMatrix error matrices. Returns a trained
    copy of the model plus one record per epoch; the input model is left
    untouched. Raises on non-finite loss.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    if epochs < 1 or batch_size < 1 or learning_rate <= 0:
        raise ValueError("epochs, batch_size, and learning_rate must be positive")
    model = copy.deepcopy(model)
    x_all = np.stack([chi_to_features(chi) for chi in dataset])
    n = x_all.shape[0]
    velocity = _zero_grads(model)
    records = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        recon_sum = 0.0
        kl_sum = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = x_all[idx]
            noise = rng.standard_normal((len(idx), model.latent_dim))
            fwd = _forward(model, batch, noise)
            if not np.isfinite(fwd.total):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: loss={fwd.total}")
            grads = _backward(model, fwd)
            for key, grad in grads.items():
                velocity[key] = momentum * velocity[key] - learning_rate * grad
                comp, layer_idx, name = key
                layer = model.layer(comp, layer_idx)
                setattr(layer, name, getattr(layer, name) + velocity[key])
            recon_sum += fwd.recon * len(idx)
            kl_sum += fwd.kl * len(idx)
        recon_epoch = recon_sum / n
        kl_epoch = kl_sum / n
        records.append(TrainingRecord(
            epoch=epoch, total_loss=recon_epoch + model.beta * kl_epoch,
            recon_loss=recon_epoch, kl_loss=kl_epoch))
    model.training_history = model.training_history + records
    return model, records


def latent_diagnostics(model: VaeModel, dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the encoded latent means over a dataset."""
    x_all = np.stack([chi_to_features(chi) for chi in dataset])
    mu, _ = encode(model, x_all)
    mean = mu.mean(axis=0)
    centered = mu - mean
    cov = centered.T @ centered / max(mu.shape[0] - 1, 1)
    return mean, cov


def sample_twins(model: VaeModel, count: int, rng: np.random.Generator) -> list:
    """Draw ``count`` twin error matrices from the latent prior."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = rng.standard_normal((count, model.latent_dim))
    return [decode(model, z[k]) for k in range(count)]


def ml_qpt(gate_data, model: VaeModel, n_twins: int,
           opts: ReconstructionOptions = DEFAULT_OPTIONS,
           rng: Optional[np.random.Generator] = None) -> list:
    """Mitigated reconstructions of one gate dataset under sampled twins.

    Returns the ensemble of chi estimates, one per twin; the fidelity
    distribution is computed downstream.
    """
    if rng is None:
        rng = np.random.default_rng(model.seed + 1)
    twins = sample_twins(model, n_twins, rng)
    return [em_qpt(gate_data, twin, opts) for twin in twins]
