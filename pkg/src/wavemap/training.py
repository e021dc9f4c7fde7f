"""Losses, optimizers and the epoch loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .network import NetworkParams, backward, forward, mse_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, checkpoint: str | None):
        super().__init__(f"non-finite loss at epoch {epoch}; last finite checkpoint: {checkpoint}")
        self.epoch = epoch
        self.checkpoint = checkpoint


def loss(params: NetworkParams, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over samples of the squared error summed over the output row.

    For multi-snapshot targets the snapshots are concatenated in the row, so
    the same expression covers both dataset kinds.
    """
    inputs = np.atleast_2d(inputs)
    targets = np.atleast_2d(targets)
    if targets.shape[1] != params.arch.m_out or inputs.shape[0] != targets.shape[0]:
        raise ValueError(f"targets of shape {targets.shape} do not match the network output {params.arch.m_out}")
    return mse_loss(forward(params, inputs), targets)


def sgd_step(params: NetworkParams, inputs: np.ndarray, targets: np.ndarray, index: int, rate: float) -> NetworkParams:
    """``W ← W - α ∇L_i`` on the single sample ``index``."""
    _, gW, gb = backward(params, inputs[index : index + 1], targets[index : index + 1])
    new = params.copy()
    for w, b, dw, db in zip(new.weights, new.biases, gW, gb):
        w -= rate * dw
        b -= rate * db
    return new


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: NetworkParams, **kw) -> AdamState:
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


def adam_step(params: NetworkParams, state: AdamState, grads: Sequence[np.ndarray], rate: float) -> None:
    """Bias-corrected Adam update of ``params`` in place.

    ``grads`` follows :meth:`NetworkParams.arrays` ordering.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for p, g, m, v in zip(params.arrays(), grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


def _interleave(gW, gb) -> list[np.ndarray]:
    out = []
    for w, b in zip(gW, gb):
        out += [w, b]
    return out


def flat_loss_grad(params: NetworkParams, inputs: np.ndarray, targets: np.ndarray):
    """Loss and flattened gradient, for the quasi-Newton phase."""
    value, gW, gb = backward(params, inputs, targets)
    return value, np.concatenate([a.ravel() for a in _interleave(gW, gb)])


@dataclass
class LbfgsResult:
    params: NetworkParams
    iterations: int
    losses: list[float]
    reason: str
    line_search_failed: bool = False


def _strong_wolfe(phi, phi0: float, dphi0: float, c1: float, c2: float, alpha1: float = 1.0, max_evals: int = 30):
    """Line search for the strong Wolfe conditions (bracketing + zoom by bisection/cubic).

    ``phi(a)`` returns ``(value, slope, payload)``.  Returns
    ``(alpha, value, payload)`` or ``None`` on failure.
    """
    a_prev, f_prev, d_prev = 0.0, phi0, dphi0
    a = alpha1
    evals = 0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        nonlocal evals
        while evals < max_evals:
            # cubic interpolation, safeguarded to the interior of the bracket
            d1 = d_lo + d_hi - 3 * (f_lo - f_hi) / (lo - hi)
            rad = d1 * d1 - d_lo * d_hi
            trial = None
            if rad >= 0:
                d2 = np.sign(hi - lo) * np.sqrt(rad)
                denom = d_hi - d_lo + 2 * d2
                if denom != 0:
                    trial = hi - (hi - lo) * (d_hi + d2 - d1) / denom
            left, right = min(lo, hi), max(lo, hi)
            span = right - left
            if trial is None or not (left + 0.1 * span <= trial <= right - 0.1 * span):
                trial = 0.5 * (lo + hi)
            f, d, payload = phi(trial)
            evals += 1
            if f > phi0 + c1 * trial * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = trial, f, d
            else:
                if abs(d) <= -c2 * dphi0:
                    return trial, f, payload
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = trial, f, d
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    while evals < max_evals:
        f, d, payload = phi(a)
        evals += 1
        if not np.isfinite(f):
            a = 0.5 * (a_prev + a)
            continue
        if f > phi0 + c1 * a * dphi0 or (evals > 1 and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f, d)
        if abs(d) <= -c2 * dphi0:
            return a, f, payload
        if d >= 0:
            return zoom(a, f, d, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f, d
        a = 2.0 * a
    return None


def lbfgs_refine(
    params: NetworkParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    max_iters: int = 100,
    history: int = 10,
    c1: float = 1e-4,
    c2: float = 0.9,
    gtol: float = 1e-8,
    ftol: float = 1e-12,
) -> LbfgsResult:
    """Full-batch L-BFGS (two-loop recursion) with a strong-Wolfe line search.

    The loss never increases across accepted steps; a failed line search
    stops the run and returns the best point so far.
    """
    if history < 1:
        raise ValueError("history must be at least 1")
    x = params.flat()
    f, g = flat_loss_grad(params, inputs, targets)
    losses = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    reason = "max_iters"
    failed = False
    it = 0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(g)) < gtol:
            reason, it = "gradient", it - 1
            break
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if s_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            q *= min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q += (a - b) * s
        direction = -q
        slope = g @ direction
        if slope >= 0:
            s_hist.clear()
            y_hist.clear()
            direction = -g
            slope = -(g @ g)

        def phi(step, _x=x, _d=direction):
            fv, gv = flat_loss_grad(params.with_flat(_x + step * _d), inputs, targets)
            return fv, gv @ _d, gv

        found = _strong_wolfe(phi, f, slope, c1, c2)
        if found is None:
            reason, failed, it = "line_search", True, it - 1
            log.warning("L-BFGS line search failed; keeping the best point so far")
            break
        step, f_new, g_new = found
        x_new = x + step * direction
        s_vec, y_vec = x_new - x, g_new - g
        if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
        rel = (f - f_new) / max(abs(f), 1e-300)
        x, f, g = x_new, f_new, g_new
        losses.append(f)
        if rel < ftol:
            reason = "loss_stalled"
            break
    return LbfgsResult(params.with_flat(x), it, losses, reason, failed)


@dataclass
class TrainConfig:
    epochs: int = 20000
    lr: float = 1e-3
    decay_every: int = 0
    decay_factor: float = 0.5
    batch: str = "full"
    batch_size: int = 32
    seed: int = 0
    lbfgs_iters: int = 0
    lbfgs_history: int = 10
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch not in ("full", "minibatch", "sample"):
            raise ValueError(f"unknown batch mode {self.batch!r}")
        if self.lbfgs_history < 1:
            raise ValueError("L-BFGS history must be at least 1")

    def rate(self, epoch: int) -> float:
        if self.decay_every > 0:
            return self.lr * self.decay_factor ** (epoch // self.decay_every)
        return self.lr

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "checkpoint_dir"}


@dataclass
class TrainResult:
    params: NetworkParams
    losses: list[float] = field(default_factory=list)
    lbfgs: LbfgsResult | None = None

    def curve(self) -> list[tuple[int, float]]:
        rows = list(enumerate(self.losses))
        if self.lbfgs is not None:
            rows += [(len(self.losses) + i, v) for i, v in enumerate(self.lbfgs.losses[1:])]
        return rows

    @property
    def final_loss(self) -> float:
        curve = self.curve()
        return curve[-1][1] if curve else float("nan")


def write_loss_csv(path: str | Path, result: TrainResult) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for epoch, value in result.curve():
            w.writerow([epoch, repr(float(value))])


def _batches(n: int, config: TrainConfig, rng: np.random.Generator):
    if config.batch == "full":
        yield np.arange(n)
        return
    order = rng.permutation(n)
    size = 1 if config.batch == "sample" else config.batch_size
    for start in range(0, n, size):
        yield np.sort(order[start : start + size])


def train(config: TrainConfig, inputs: np.ndarray, targets: np.ndarray, params: NetworkParams) -> TrainResult:
    """Adam epochs followed by an optional L-BFGS refinement.

    The recorded loss of an epoch is the full-batch loss at the start of
    that epoch's first step.
    """
    if inputs.shape[1] != params.arch.m_in or targets.shape[1] != params.arch.m_out:
        raise ValueError(
            f"dataset is {inputs.shape[1]} -> {targets.shape[1]}, network is {params.arch.m_in} -> {params.arch.m_out}"
        )
    params = params.copy()
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(params)
    losses: list[float] = []
    last_ckpt: str | None = None
    n = inputs.shape[0]
    for epoch in range(config.epochs):
        rate = config.rate(epoch)
        first = True
        for idx in _batches(n, config, rng):
            value, gW, gb = backward(params, inputs[idx], targets[idx])
            if first:
                if config.batch != "full":
                    value = loss(params, inputs, targets)
                if not np.isfinite(value):
                    raise TrainingDiverged(epoch, last_ckpt)
                losses.append(value)
                first = False
            adam_step(params, state, _interleave(gW, gb), rate)
        if config.checkpoint_every and config.checkpoint_dir and (epoch + 1) % config.checkpoint_every == 0:
            path = Path(config.checkpoint_dir) / f"checkpoint_{epoch + 1:06d}.wpkm"
            params.save(path)
            last_ckpt = str(path)
    result = TrainResult(params, losses)
    if config.lbfgs_iters > 0:
        result.lbfgs = lbfgs_refine(params, inputs, targets, config.lbfgs_iters, config.lbfgs_history)
        result.params = result.lbfgs.params
    return result
