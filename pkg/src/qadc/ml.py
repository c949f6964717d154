"""From-scratch dense networks: denoising autoencoder and phase regressor.

Plain numpy forward/backward passes with a hand-rolled Adam optimizer; no ML
runtime.  Training is single-threaded and seed-deterministic end to end (the
reproducibility contract outranks speed at these sizes).

The denoising autoencoder maps noise-corrupted conditional-probability rows to
clean ones (encoder 64/32, bottleneck 16, decoder 32/64, linear output).  The
phase regressor maps the 8 informative-bit probabilities at phi and at a fixed
shift phi + 0.44 rad (16 inputs) through three 52-neuron hidden layers to a
single linear output, removing the quantization bias of the raw digital
estimate and resolving boundary ambiguities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from qadc.analysis import (
    B_OUTCOMES,
    M_OUTCOMES,
    TWO_PI,
    _B_FROM_M,
    bit_chain_probabilities,
    wrap_difference,
)

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")

ESTIMATOR_PHASE_SHIFT = 0.44  # rad, fixed second input row


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths (input included) and one activation per affine layer."""

    widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.widths) < 2:
            raise ValueError("need an input and at least one layer")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be positive")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError("need one activation per affine layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4000
    batch_size: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class TrainingSet:
    """Inputs, targets and the generator parameters they came from."""

    inputs: np.ndarray
    targets: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have matching sample counts")


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    return x


def _act_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (pre > 0).astype(pre.dtype)
    if name == "tanh":
        return 1.0 - post**2
    if name == "sigmoid":
        return post * (1.0 - post)
    return np.ones_like(pre)


class Network:
    """Dense network with explicit weight/bias arrays (weights are [out, in])."""

    def __init__(self, spec: NetworkSpec, weights, biases):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (spec.widths[i + 1], spec.widths[i]):
                raise ValueError(f"layer {i}: weight shape {w.shape}")
            if b.shape != (spec.widths[i + 1],):
                raise ValueError(f"layer {i}: bias shape {b.shape}")

    @classmethod
    def initialize(cls, spec: NetworkSpec, rng: np.random.Generator) -> "Network":
        """Uniform init scaled by 1/sqrt(fan_in), biases zero."""
        weights, biases = [], []
        for i in range(len(spec.widths) - 1):
            fan_in = spec.widths[i]
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(spec.widths[i + 1], fan_in)))
            biases.append(np.zeros(spec.widths[i + 1]))
        return cls(spec, weights, biases)

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_json_dict(self, train_config: TrainConfig | None = None, seed: int | None = None) -> dict:
        doc = {
            "spec": {
                "widths": list(self.spec.widths),
                "activations": list(self.spec.activations),
            },
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        if train_config is not None:
            doc["train_config"] = {
                "epochs": train_config.epochs,
                "batch_size": train_config.batch_size,
                "learning_rate": train_config.learning_rate,
                "beta1": train_config.beta1,
                "beta2": train_config.beta2,
                "eps": train_config.eps,
                "seed": train_config.seed,
            }
        if seed is not None:
            doc["seed"] = seed
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Network":
        spec = NetworkSpec(tuple(doc["spec"]["widths"]), tuple(doc["spec"]["activations"]))
        weights = [
            np.asarray(w, dtype=float).reshape(spec.widths[i + 1], spec.widths[i])
            for i, w in enumerate(doc["weights"])
        ]
        biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        return cls(spec, weights, biases)


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Affine + activation composition; accepts a vector or a batch."""
    single = np.asarray(x, dtype=float).ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=float))
    if h.shape[1] != net.spec.widths[0]:
        raise ValueError(f"input width {h.shape[1]}, expected {net.spec.widths[0]}")
    for w, b, act in zip(net.weights, net.biases, net.spec.activations):
        h = _act(act, h @ w.T + b)
    return h[0] if single else h


def gradients(net: Network, x: np.ndarray, y: np.ndarray):
    """Backprop of the mean-squared error; returns (dW list, db list, loss)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    pres, posts = [], [x]
    h = x
    for w, b, act in zip(net.weights, net.biases, net.spec.activations):
        pre = h @ w.T + b
        h = _act(act, pre)
        pres.append(pre)
        posts.append(h)
    loss = float(np.mean((h - y) ** 2))
    delta = 2.0 * (h - y) / h.size
    d_weights, d_biases = [], []
    for i in reversed(range(len(net.weights))):
        delta = delta * _act_grad(net.spec.activations[i], pres[i], posts[i + 1])
        d_weights.append(delta.T @ posts[i])
        d_biases.append(delta.sum(axis=0))
        if i:
            delta = delta @ net.weights[i]
    return d_weights[::-1], d_biases[::-1], loss


class _Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = c.beta1 * self.m[i] + (1 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1 - c.beta2) * g**2
            m_hat = self.m[i] / (1 - c.beta1**self.t)
            v_hat = self.v[i] / (1 - c.beta2**self.t)
            p -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def train(net: Network, dataset: TrainingSet, cfg: TrainConfig) -> list[float]:
    """Mini-batch Adam on MSE, in place; returns the per-epoch loss trace."""
    x = np.atleast_2d(np.asarray(dataset.inputs, dtype=float))
    y = np.asarray(dataset.targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[1] != net.spec.widths[0] or y.shape[1] != net.spec.widths[-1]:
        raise ValueError("training set shapes do not match the network")
    rng = np.random.default_rng(cfg.seed)
    params = net.weights + net.biases
    opt = _Adam(params, cfg)
    n = x.shape[0]
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            dw, db, loss = gradients(net, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergence(
                    f"non-finite loss {loss} at epoch {epoch}, batch {n_batches}"
                )
            opt.step(params, dw + db)
            epoch_loss += loss
            n_batches += 1
        trace.append(epoch_loss / n_batches)
    return trace


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------


def build_dae(d_in: int) -> NetworkSpec:
    """Denoising autoencoder: [d_in, 64, 32, 16, 32, 64, d_in], ReLU hidden."""
    if d_in < 1:
        raise ValueError("input width must be positive")
    widths = (d_in, 64, 32, 16, 32, 64, d_in)
    return NetworkSpec(widths, ("relu",) * 5 + ("linear",))


def build_estimator() -> NetworkSpec:
    """Phase regressor: [16, 52, 52, 52, 1], sigmoid then tanh, linear output."""
    return NetworkSpec((16, 52, 52, 52, 1), ("sigmoid", "tanh", "tanh", "linear"))


# ---------------------------------------------------------------------------
# Probability-row utilities
# ---------------------------------------------------------------------------


def renormalize_rows(rows: np.ndarray) -> np.ndarray:
    """Clip negatives to zero and rescale rows to unit sum.

    All-zero rows fall back to the uniform distribution with a warning.
    """
    rows = np.maximum(np.asarray(rows, dtype=float), 0.0)
    totals = rows.sum(axis=1)
    dead = totals <= 0
    if np.any(dead):
        warnings.warn(f"{int(dead.sum())} all-zero rows replaced by uniform")
        rows[dead] = 1.0 / rows.shape[1]
        totals = rows.sum(axis=1)
    return rows / totals[:, None]


def corrupt_rows(rows: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian corruption of probability rows, clipped and renormalized."""
    noisy = np.asarray(rows, dtype=float) + rng.normal(0.0, sigma, size=np.shape(rows))
    return renormalize_rows(noisy)


def dae_denoise(net: Network, rows: np.ndarray) -> np.ndarray:
    """Denoise probability rows; outputs are valid distributions."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != net.spec.widths[0]:
        raise ValueError(
            f"row width {rows.shape[1]} does not match DAE input {net.spec.widths[0]}"
        )
    return renormalize_rows(forward(net, rows))


def ideal_full_rows(phases: np.ndarray, delta: float = 1.0) -> np.ndarray:
    """Ideal 128-outcome rows: informative-bit chain times uniform junk bits."""
    b_rows = bit_chain_probabilities(phases, delta)
    rows = np.empty((len(np.atleast_1d(phases)), M_OUTCOMES))
    for code in range(M_OUTCOMES):
        rows[:, code] = b_rows[:, _B_FROM_M[code]] / 16.0
    return rows


def dae_training_set(
    n_samples: int,
    sigma: float,
    rng: np.random.Generator,
    d_in: int = M_OUTCOMES,
    delta: float = 1.0,
) -> TrainingSet:
    """Corrupted ideal probability rows with clean targets, random phases."""
    phases = rng.uniform(0.0, TWO_PI, size=n_samples)
    if d_in == M_OUTCOMES:
        clean = ideal_full_rows(phases, delta)
    elif d_in == B_OUTCOMES:
        clean = bit_chain_probabilities(phases, delta)
    else:
        raise ValueError(f"unsupported DAE width {d_in} (use 128 or 8)")
    noisy = corrupt_rows(clean, sigma, rng)
    return TrainingSet(
        noisy, clean, {"sigma": sigma, "n_samples": n_samples, "delta": delta}
    )


# ---------------------------------------------------------------------------
# Phase regressor data and evaluation
# ---------------------------------------------------------------------------


def make_estimator_input(row_phi: np.ndarray, row_shifted: np.ndarray) -> np.ndarray:
    """Concatenate the 8-outcome rows at phi and at phi + 0.44 rad."""
    a = np.asarray(row_phi, dtype=float).ravel()
    b = np.asarray(row_shifted, dtype=float).ravel()
    if a.shape != (B_OUTCOMES,) or b.shape != (B_OUTCOMES,):
        raise ValueError("both rows must hold 8 marginal probabilities")
    return np.concatenate([a, b])


def shifted_rows(phases: np.ndarray, rows: np.ndarray, shift: float = ESTIMATOR_PHASE_SHIFT) -> np.ndarray:
    """Rows at phi + shift by circular linear interpolation on the grid.

    The shift is generally not a multiple of the grid spacing, so the two
    nearest grid rows are blended and renormalized.
    """
    phases = np.asarray(phases, dtype=float)
    rows = np.asarray(rows, dtype=float)
    n = len(phases)
    if n < 2:
        raise ValueError("need at least two grid rows to interpolate")
    spacing = TWO_PI / n
    pos = ((phases + shift) % TWO_PI) / spacing
    lo = np.floor(pos).astype(int) % n
    frac = pos - np.floor(pos)
    hi = (lo + 1) % n
    blended = (1.0 - frac)[:, None] * rows[lo] + frac[:, None] * rows[hi]
    return renormalize_rows(blended)


def estimator_inputs_from_rows(
    phases: np.ndarray, rows: np.ndarray, shift: float = ESTIMATOR_PHASE_SHIFT
) -> np.ndarray:
    """[n_phases, 16] regressor inputs from a grid of 8-outcome rows."""
    shifted = shifted_rows(phases, rows, shift)
    return np.concatenate([rows, shifted], axis=1)


def estimator_training_set(
    n_phases: int,
    sigma: float,
    rng: np.random.Generator,
    replicas: int = 4,
    delta: float = 1.0,
) -> TrainingSet:
    """Simulated-model regressor data: noisy (p(b|phi), p(b|phi+shift)) pairs.

    The shifted row is evaluated analytically (no interpolation error in
    training); corruption is applied independently to both rows.
    """
    grid = TWO_PI * np.arange(n_phases) / n_phases
    inputs, targets = [], []
    for _ in range(replicas):
        jitter = rng.uniform(0.0, TWO_PI / n_phases)
        phases = (grid + jitter) % TWO_PI
        clean_a = bit_chain_probabilities(phases, delta)
        clean_b = bit_chain_probabilities((phases + ESTIMATOR_PHASE_SHIFT) % TWO_PI, delta)
        noisy_a = corrupt_rows(clean_a, sigma, rng) if sigma > 0 else clean_a
        noisy_b = corrupt_rows(clean_b, sigma, rng) if sigma > 0 else clean_b
        inputs.append(np.concatenate([noisy_a, noisy_b], axis=1))
        targets.append(phases)
    return TrainingSet(
        np.concatenate(inputs, axis=0),
        np.concatenate(targets, axis=0),
        {"sigma": sigma, "n_phases": n_phases, "replicas": replicas, "delta": delta},
    )


def circular_rmse(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Root-mean-square circular error for phase-valued estimates."""
    diffs = [wrap_difference(float(p), float(t)) for p, t in zip(predicted, truth)]
    return float(np.sqrt(np.mean(np.square(diffs))))


def evaluate_estimator(net: Network, phases: np.ndarray, inputs: np.ndarray) -> dict:
    """Prediction metrics on a held-out grid.

    ``rmse`` is circular (phase-valued target); ``rmse_raw`` ignores the wrap;
    ``branch_accuracy`` is the fraction of phases in (pi, 2*pi) recovered with
    circular error below pi/2, probing the 2*pi disambiguation.
    """
    predicted = forward(net, inputs)[:, 0] % TWO_PI
    phases = np.asarray(phases, dtype=float)
    rmse = circular_rmse(predicted, phases)
    rmse_raw = float(np.sqrt(np.mean((predicted - phases) ** 2)))
    upper = (phases > math.pi) & (phases < TWO_PI)
    if upper.any():
        errs = np.array(
            [abs(wrap_difference(p, t)) for p, t in zip(predicted[upper], phases[upper])]
        )
        branch = float(np.mean(errs < math.pi / 2))
    else:
        branch = float("nan")
    return {
        "rmse": rmse,
        "rmse_raw": rmse_raw,
        "branch_accuracy": branch,
        "predictions": predicted,
    }


def train_and_eval_estimator(
    cfg: TrainConfig,
    n_train_phases: int = 160,
    noise_sigma: float = 0.01,
    replicas: int = 4,
    holdout_phases: int = 99,
    delta: float = 1.0,
) -> tuple[Network, list[float], dict]:
    """Train the regressor on simulated data and report held-out metrics.

    The held-out grid is offset from the training grids; inputs are clean
    analytic rows (the denoised-probability use case).
    """
    rng = np.random.default_rng(cfg.seed)
    dataset = estimator_training_set(n_train_phases, noise_sigma, rng, replicas, delta)
    net = Network.initialize(build_estimator(), rng)
    trace = train(net, dataset, cfg)
    grid = (TWO_PI * np.arange(holdout_phases) / holdout_phases + 0.013) % TWO_PI
    clean_a = bit_chain_probabilities(grid, delta)
    clean_b = bit_chain_probabilities((grid + ESTIMATOR_PHASE_SHIFT) % TWO_PI, delta)
    inputs = np.concatenate([clean_a, clean_b], axis=1)
    metrics = evaluate_estimator(net, grid, inputs)
    metrics["final_loss"] = trace[-1]
    return net, trace, metrics
