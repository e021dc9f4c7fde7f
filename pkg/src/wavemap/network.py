"""Dense networks written directly in numpy.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer acts on a
batch of rows as ``X @ W + b``.  Depth counts layers of neurons, input and
output included: an FCNN of depth ``D`` has ``D - 1`` affine maps with an
activation after each but the last.  A ResNet has an entry affine map,
residual blocks ``y ← y + H(y)`` and an exit affine map; a block of depth
``D_i`` holds ``D_i - 1`` activated affine layers of width ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import containers

ACTIVATIONS = ("relu", "tanh", "sigmoid", "elu")


@dataclass(frozen=True)
class Architecture:
    kind: str
    m_in: int
    m_out: int
    width: int = 100
    depth: int = 5
    blocks: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("fcnn", "resnet"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if min(self.m_in, self.m_out, self.width) < 1:
            raise ValueError("layer widths must be positive")
        if self.kind == "fcnn" and self.depth < 2:
            raise ValueError("FCNN depth must be at least 2")
        if self.kind == "resnet" and (not self.blocks or min(self.blocks) < 2):
            raise ValueError("ResNet needs at least one block, each of depth >= 2")
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))

    def layer_shapes(self) -> list[tuple[int, int]]:
        M = self.width
        if self.kind == "fcnn":
            if self.depth == 2:
                return [(self.m_in, self.m_out)]
            return [(self.m_in, M)] + [(M, M)] * (self.depth - 3) + [(M, self.m_out)]
        return [(self.m_in, M)] + [(M, M)] * sum(b - 1 for b in self.blocks) + [(M, self.m_out)]

    def parameter_count(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "m_in": self.m_in, "m_out": self.m_out,
            "width": self.width, "depth": self.depth, "blocks": list(self.blocks),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Architecture:
        return cls(d["kind"], d["m_in"], d["m_out"], d["width"], d["depth"], tuple(d["blocks"]))


@dataclass
class NetworkParams:
    arch: Architecture
    activation: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    alpha: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        shapes = self.arch.layer_shapes()
        if [w.shape for w in self.weights] != shapes or [b.shape for b in self.biases] != [(s[1],) for s in shapes]:
            raise ValueError("weight shapes do not match the architecture")

    def copy(self) -> NetworkParams:
        return NetworkParams(
            self.arch, self.activation, [w.copy() for w in self.weights],
            [b.copy() for b in self.biases], self.alpha, dict(self.meta),
        )

    def arrays(self) -> list[np.ndarray]:
        """Parameters in a fixed order: W_1, b_1, W_2, b_2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> NetworkParams:
        new = self.copy()
        pos = 0
        for a in new.arrays():
            a[...] = vec[pos : pos + a.size].reshape(a.shape)
            pos += a.size
        return new

    def to_bytes(self) -> bytes:
        meta = {
            "architecture": self.arch.to_dict(),
            "activation": self.activation,
            "alpha": self.alpha,
            **self.meta,
        }
        return containers.pack(containers.MODEL_MAGIC, meta, self.arrays())

    @classmethod
    def from_bytes(cls, data: bytes) -> NetworkParams:
        meta, arrays = containers.unpack(data, containers.MODEL_MAGIC)
        arch = Architecture.from_dict(meta.pop("architecture"))
        act = meta.pop("activation")
        alpha = meta.pop("alpha")
        ws = [a for a in arrays[0::2]]
        bs = [a.reshape(-1) for a in arrays[1::2]]
        return cls(arch, act, ws, bs, alpha, meta)

    def save(self, path: str | Path) -> bytes:
        blob = self.to_bytes()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(blob)
        return blob

    @classmethod
    def load(cls, path: str | Path) -> NetworkParams:
        return cls.from_bytes(Path(path).read_bytes())


def activation_apply(name: str, x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return expit(x)
    if name == "elu":
        return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


def activation_derivative(name: str, x: np.ndarray, alpha: float = 1.0, fx: np.ndarray | None = None) -> np.ndarray:
    """Derivative at the pre-activation ``x``; ``fx`` reuses an already computed ``φ(x)``."""
    if name == "relu":
        return (x > 0).astype(float)
    if fx is None:
        fx = activation_apply(name, x, alpha)
    if name == "tanh":
        return 1.0 - fx * fx
    if name == "sigmoid":
        return fx * (1.0 - fx)
    if name == "elu":
        # elu'(0) is taken as 1
        return np.where(x >= 0, 1.0, alpha * np.exp(np.minimum(x, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


def he_init(arch: Architecture, activation: str, seed: int, alpha: float = 1.0) -> NetworkParams:
    """Zero biases, weights ~ N(0, 2/fan_in)."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in arch.layer_shapes():
        ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return NetworkParams(arch, activation, ws, bs, alpha, {"seed": seed})


def _forward_trace(params: NetworkParams, X: np.ndarray):
    """Forward pass keeping what backward needs.

    Returns the output and one ``(layer_input, pre_activation, activated)``
    record per affine layer (the last two are ``None`` for bare affine maps).
    """
    W, b = params.weights, params.biases
    act, a = params.activation, params.alpha
    trace = []
    h = X
    if params.arch.kind == "fcnn":
        for j in range(len(W) - 1):
            z = h @ W[j] + b[j]
            f = activation_apply(act, z, a)
            trace.append((h, z, f))
            h = f
        out = h @ W[-1] + b[-1]
        trace.append((h, None, None))
        return out, trace
    y = h @ W[0] + b[0]
    trace.append((h, None, None))
    j = 1
    for depth in params.arch.blocks:
        g = y
        for _ in range(depth - 1):
            z = g @ W[j] + b[j]
            f = activation_apply(act, z, a)
            trace.append((g, z, f))
            g = f
            j += 1
        y = y + g
    out = y @ W[-1] + b[-1]
    trace.append((y, None, None))
    return out, trace


def forward(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != params.arch.m_in:
        raise ValueError(f"input width {X2.shape[1]} does not match network input {params.arch.m_in}")
    # rows go through the stacked (N, 1, m) product so each row sees the same
    # BLAS call whatever the batch size; batch and row outputs agree bit for bit
    out = _forward_trace(params, X2[:, None, :])[0][:, 0, :]
    return out[0] if single else out


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """``(1/N) Σ_ℓ ‖pred_ℓ - target_ℓ‖²``."""
    r = pred - target
    return float(np.sum(r * r) / pred.shape[0])


def backward(params: NetworkParams, X: np.ndarray, Y: np.ndarray):
    """Loss and its exact gradient.

    The forward pass here multiplies the whole batch at once, which is much
    faster than :func:`forward`'s row-stable path and may differ from it in
    the last bits.  Returns ``(loss, grad_weights, grad_biases)`` for the mean-squared loss
    ``(1/N) Σ_ℓ ‖N(X_ℓ) - Y_ℓ‖²``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != params.arch.m_in or Y.shape[1] != params.arch.m_out or X.shape[0] != Y.shape[0]:
        raise ValueError(
            f"batch shapes {X.shape} -> {Y.shape} do not fit network {params.arch.m_in} -> {params.arch.m_out}"
        )
    out, trace = _forward_trace(params, X)
    resid = out - Y
    n = X.shape[0]
    loss = float(np.sum(resid * resid) / n)
    delta = 2.0 * resid / n
    W = params.weights
    act, a = params.activation, params.alpha
    gW: list[np.ndarray] = [None] * len(W)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(W)  # type: ignore[list-item]

    def affine_back(j: int, delta: np.ndarray) -> np.ndarray | None:
        h = trace[j][0]
        gW[j] = h.T @ delta
        gb[j] = delta.sum(axis=0)
        # the gradient with respect to the network input is never needed
        return delta @ W[j].T if j > 0 else None

    last = len(W) - 1
    grad = affine_back(last, delta)
    if params.arch.kind == "fcnn":
        for j in range(last - 1, -1, -1):
            _, z, f = trace[j]
            grad = affine_back(j, grad * activation_derivative(act, z, a, f))
        return loss, gW, gb
    j = last - 1
    for depth in reversed(params.arch.blocks):
        skip = grad
        g = grad
        for _ in range(depth - 1):
            _, z, f = trace[j]
            g = affine_back(j, g * activation_derivative(act, z, a, f))
            j -= 1
        grad = skip + g
    affine_back(0, grad)
    return loss, gW, gb
