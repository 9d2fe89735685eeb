"""Small fully-connected networks with hand-written backprop and Adam.

Everything is plain float64 numpy. Forward passes are pure functions of
(parameters, input); backward passes return exact analytic gradients that
are checked against central finite differences in the test suite. No
autodiff graph, no GPU.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SNAPSHOT_MAGIC = b"MLP1"
SNAPSHOT_VERSION = 1


class MlpConfigError(ValueError):
    """Raised on inconsistent network configuration or shape mismatch."""


@dataclass
class MlpCache:
    """Activation record from one forward pass, consumed by backward()."""

    x: np.ndarray                 # input, shape (B, n_in)
    pre: list[np.ndarray]         # pre-activations per layer, each (B, n_l)
    post: list[np.ndarray]        # post-activations per layer (last = output)
    squeeze: bool                 # input arrived as a bare vector


@dataclass
class GradBundle:
    """Parameter and input gradients matching an Mlp's shapes."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_input: np.ndarray

    def scaled(self, factor: float) -> "GradBundle":
        return GradBundle(
            [factor * g for g in self.d_weights],
            [factor * g for g in self.d_biases],
            factor * self.d_input,
        )


class Mlp:
    """Feed-forward network: ReLU hidden layers, identity or scaled-tanh head.

    Weights are stored as (fan_in, fan_out) matrices so a batch forward is
    ``x @ W + b``. Initialization is uniform with 1/sqrt(fan_in) range,
    drawn from a generator seeded with ``seed`` so construction is
    reproducible.
    """

    def __init__(
        self,
        layer_sizes: list[int],
        output_activation: str = "identity",
        output_scale: float = 1.0,
        seed: int = 0,
    ):
        if len(layer_sizes) < 2:
            raise MlpConfigError("need at least an input and an output layer")
        if any(int(n) <= 0 for n in layer_sizes):
            raise MlpConfigError(f"layer sizes must be positive, got {layer_sizes}")
        if output_activation not in ("identity", "tanh"):
            raise MlpConfigError(f"unknown output activation {output_activation!r}")
        if output_activation == "tanh" and output_scale <= 0:
            raise MlpConfigError("tanh head needs a positive output_scale")

        self.layer_sizes = [int(n) for n in layer_sizes]
        self.output_activation = output_activation
        self.output_scale = float(output_scale)
        self.seed = int(seed)

        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def _promote(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise MlpConfigError(
                f"input of shape {x.shape} does not match input dim {self.input_dim}"
            )
        return x, squeeze

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, squeeze = self._promote(x)
        h = x
        for i in range(self.n_layers - 1):
            h = np.maximum(h @ self.weights[i] + self.biases[i], 0.0)
        out = h @ self.weights[-1] + self.biases[-1]
        if self.output_activation == "tanh":
            out = self.output_scale * np.tanh(out)
        return out[0] if squeeze else out

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        x, squeeze = self._promote(x)
        pre: list[np.ndarray] = []
        post: list[np.ndarray] = []
        h = x
        for i in range(self.n_layers - 1):
            z = h @ self.weights[i] + self.biases[i]
            h = np.maximum(z, 0.0)
            pre.append(z)
            post.append(h)
        z = h @ self.weights[-1] + self.biases[-1]
        out = self.output_scale * np.tanh(z) if self.output_activation == "tanh" else z
        pre.append(z)
        post.append(out)
        cache = MlpCache(x=x, pre=pre, post=post, squeeze=squeeze)
        return (out[0] if squeeze else out), cache

    def backward(
        self,
        cache: MlpCache,
        grad_out: np.ndarray,
        grad_preact: np.ndarray | None = None,
    ) -> GradBundle:
        """Backpropagate upstream gradients through a cached forward pass.

        ``grad_out`` is d(loss)/d(output). ``grad_preact``, if given, is an
        extra d(loss)/d(output-layer pre-activation) term, added after the
        head derivative; it carries the actor's pre-activation regularizer.
        """
        if len(cache.pre) != self.n_layers:
            raise MlpConfigError("cache does not match this network's depth")
        g = np.asarray(grad_out, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.pre[-1].shape:
            raise MlpConfigError(
                f"grad_out shape {g.shape} does not match output shape "
                f"{cache.pre[-1].shape}"
            )

        if self.output_activation == "tanh":
            t = np.tanh(cache.pre[-1])
            dz = g * self.output_scale * (1.0 - t * t)
        else:
            dz = g
        if grad_preact is not None:
            gp = np.asarray(grad_preact, dtype=np.float64)
            if cache.squeeze:
                gp = gp[None, :]
            dz = dz + gp

        d_weights: list[np.ndarray] = [np.empty(0)] * self.n_layers
        d_biases: list[np.ndarray] = [np.empty(0)] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            inp = cache.x if i == 0 else cache.post[i - 1]
            d_weights[i] = inp.T @ dz
            d_biases[i] = dz.sum(axis=0)
            dx = dz @ self.weights[i].T
            if i > 0:
                dz = dx * (cache.pre[i - 1] > 0.0)
        d_input = dx[0] if cache.squeeze else dx
        return GradBundle(d_weights, d_biases, d_input)

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays, weights then bias per layer."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.layer_sizes = list(self.layer_sizes)
        dup.output_activation = self.output_activation
        dup.output_scale = self.output_scale
        dup.seed = self.seed
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def copy_params_from(self, other: "Mlp") -> None:
        if other.layer_sizes != self.layer_sizes:
            raise MlpConfigError(
                f"incompatible architectures {other.layer_sizes} vs {self.layer_sizes}"
            )
        for mine, theirs in zip(self.weights, other.weights):
            mine[...] = theirs
        for mine, theirs in zip(self.biases, other.biases):
            mine[...] = theirs

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())


class AdamState:
    """First/second moment accumulators plus step counter for one Mlp."""

    def __init__(
        self,
        net: Mlp,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise MlpConfigError("learning rate must be positive")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]


def adam_step(net: Mlp, grads: GradBundle, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``net`` and ``state``.

    Gradients containing NaN abort the run; letting them through would
    silently poison every later update.
    """
    params = net.parameters()
    grad_list: list[np.ndarray] = []
    for dw, db in zip(grads.d_weights, grads.d_biases):
        grad_list.append(dw)
        grad_list.append(db)
    if len(grad_list) != len(params):
        raise MlpConfigError("gradient bundle does not match network depth")
    for p, g in zip(params, grad_list):
        if p.shape != g.shape:
            raise MlpConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient in adam_step; aborting run")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    lr = state.learning_rate
    for p, g, m, v in zip(params, grad_list, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)


def grad_check(net: Mlp, x: np.ndarray, eps: float, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    The vector-valued forward map is reduced to a scalar through a fixed
    random projection ``u``, so the analytic side is one backward pass and
    the numeric side is two forwards per parameter entry. The error metric
    is |a - n| / max(1e-8, |a| + |n|), maximised over every entry.
    """
    if eps <= 0:
        raise MlpConfigError("eps must be positive")
    u = np.random.default_rng(seed).standard_normal(net.output_dim)
    out, cache = net.forward_cached(x)
    analytic = net.backward(cache, np.broadcast_to(u, out.shape))

    def scalar() -> float:
        return float(np.sum(net.forward(x) * u))

    worst = 0.0
    analytic_list: list[np.ndarray] = []
    for dw, db in zip(analytic.d_weights, analytic.d_biases):
        analytic_list.append(dw)
        analytic_list.append(db)
    for p, a in zip(net.parameters(), analytic_list):
        flat = p.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = scalar()
            flat[i] = orig - eps
            f_minus = scalar()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(1e-8, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst


def min_hidden_preactivation(net: Mlp, x: np.ndarray) -> float:
    """Smallest |pre-activation| over hidden layers; guards grad checks
    against ReLU kinks (central differences are invalid within eps of 0)."""
    _, cache = net.forward_cached(x)
    margins = [np.min(np.abs(z)) for z in cache.pre[:-1]]
    return float(min(margins)) if margins else np.inf


def save_mlp(net: Mlp, path) -> None:
    """Write parameters: magic, version, layer sizes, then per layer the
    row-major float64 little-endian weight matrix followed by the bias."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, len(net.layer_sizes)))
        fh.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_snapshot(path) -> tuple[list[int], list[np.ndarray], list[np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise MlpConfigError(f"{path}: not a network snapshot (magic {magic!r})")
        version, n_sizes = struct.unpack("<II", fh.read(8))
        if version != SNAPSHOT_VERSION:
            raise MlpConfigError(f"{path}: unsupported snapshot version {version}")
        sizes = list(struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes)))
        weights: list[np.ndarray] = []
        biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            buf = fh.read(8 * fan_in * fan_out)
            weights.append(
                np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(fan_in, fan_out)
            )
            biases.append(np.frombuffer(fh.read(8 * fan_out), dtype="<f8").astype(np.float64))
        if fh.read(1):
            raise MlpConfigError(f"{path}: trailing bytes after parameters")
    return sizes, weights, biases


def load_mlp(
    path,
    output_activation: str = "identity",
    output_scale: float = 1.0,
) -> Mlp:
    """Reconstruct a network from a snapshot file.

    The head configuration is not part of the format, so the caller states
    it; architectures are taken from the stored layer sizes.
    """
    sizes, weights, biases = _read_snapshot(path)
    net = Mlp(sizes, output_activation=output_activation, output_scale=output_scale)
    net.weights = weights
    net.biases = biases
    return net


def load_params_into(net: Mlp, path) -> None:
    """Load a snapshot into an existing network, checking architecture."""
    sizes, weights, biases = _read_snapshot(path)
    if sizes != net.layer_sizes:
        raise MlpConfigError(
            f"{path}: snapshot sizes {sizes} do not match network {net.layer_sizes}"
        )
    net.weights = weights
    net.biases = biases
