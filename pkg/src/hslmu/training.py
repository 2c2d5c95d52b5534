"""Training: backprop through time, Adam, resolution schedules, initialization.

The forward pass runs the genuinely quantized dynamics at the resolutions in
effect for the current epoch.  The backward pass differentiates the ideal
activation functions at the recorded filtered pre-activations and treats the
quantization residual mechanism as zero-gradient noise, so gradients flow
through the linear synapse filters exactly and never depend on the resolution.
Between epochs the resolutions sweep geometrically from an easy high value
down to the deployment target, after which training fine-tunes at the target
until validation loss stops improving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import CellParams, HsLmuCell, StepRecord

__all__ = [
    "TrainPlan",
    "NumericalFailure",
    "schedule_omega",
    "initialize_parameters",
    "softmax_crossentropy",
    "bptt_gradients",
    "backward_from_records",
    "AdamState",
    "adam_step",
    "clip_global_norm",
    "EpochStats",
    "TrainResult",
    "train_model",
]


class NumericalFailure(RuntimeError):
    """Loss or gradients went non-finite; carries the last finite parameters."""

    def __init__(self, message: str, last_good: CellParams | None = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainPlan:
    """Hyperparameters of one training run."""

    omega_hidden: tuple[float, float] = (16.0, 1.0)  # (high, low)
    omega_memory: tuple[float, float] = (32.0, 2.0)
    interp_epochs: int = 10
    fine_tune_patience: int = 5
    max_epochs: int = 60
    batch_size: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 0.01
    grad_clip: float = 10.0
    bptt_chunk: int = 128  # sequences backpropagated at once within a minibatch
    seed: int = 0

    def __post_init__(self) -> None:
        for name, (hi, lo) in (("omega_hidden", self.omega_hidden), ("omega_memory", self.omega_memory)):
            if not (hi >= lo > 0):
                raise ValueError(f"{name} must satisfy high >= low > 0, got {hi}, {lo}")
        if self.interp_epochs < 2:
            raise ValueError("interp_epochs < 2 degenerates the resolution sweep")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")


def schedule_omega(high: float, low: float, interp_epochs: int, epoch: int) -> float:
    """Resolution for an epoch: geometric sweep from high to low, then flat.

    The sweep hits ``low`` exactly at epoch ``interp_epochs - 1``.
    """
    if interp_epochs < 2:
        raise ValueError("interp_epochs < 2 degenerates the resolution sweep")
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch >= interp_epochs:
        return low
    return high * (low / high) ** (epoch / (interp_epochs - 1))


def initialize_parameters(cell: HsLmuCell, rng: np.random.Generator) -> CellParams:
    """Zero almost everything; the exceptions give the memory a useful start.

    The input encoder starts at one so the write signal is the raw input, the
    memory readout starts Xavier-normal so hidden neurons see the window from
    step one, and the output layer starts Xavier-uniform.
    """
    cfg = cell.config
    n, d, p, c = cfg.n_hidden, cfg.memory_order, cfg.input_dim, cfg.n_classes
    wm_std = math.sqrt(2.0 / (n + d))
    wout_limit = math.sqrt(6.0 / (n + c))
    return CellParams(
        W_x=np.zeros((n, p)),
        W_h=np.zeros((n, n)),
        W_m=rng.normal(0.0, wm_std, size=(n, d)),
        b_h=np.zeros(n),
        e_x=np.ones(p),
        e_h=np.zeros(n),
        e_m=np.zeros(d),
        W_out=rng.uniform(-wout_limit, wout_limit, size=(c, n)),
        b_out=np.zeros(c),
        A_H=cell.system.A_H.copy(),
        B_H=cell.system.B_H.copy(),
    )


def softmax_crossentropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    B = logits.shape[0]
    nll = -np.log(probs[np.arange(B), labels] + 1e-300)
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    return float(nll.mean()), dlogits / B


def backward_from_records(
    cell: HsLmuCell, params: CellParams, rec: StepRecord, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    """Reverse accumulation over one recorded forward pass.

    Consumes exactly the recorded streams; nowhere does the resolution enter,
    which is the straight-through contract.  Returns gradients for the
    trainable tensors only (sums over the batch, unscaled).
    """
    cfg = cell.config
    a_h, a_m, a_o = cell.a_h, cell.a_m, cell.a_out
    T = rec.x.shape[0]
    f_h, f_m = cfg.f_hidden, cfg.f_memory

    grads = {name: np.zeros_like(getattr(params, name)) for name in CellParams.TRAINABLE}
    grads["b_out"] += dlogits.sum(axis=0)

    g_q = dlogits
    g_h_next = np.zeros_like(rec.h[0])
    g_m_next = np.zeros_like(rec.m[0])
    g_ph_carry = np.zeros_like(rec.h[0])
    g_pm_carry = np.zeros_like(rec.m[0])

    for t in range(T - 1, -1, -1):
        x_t, h_prev, m_prev = rec.x[t], rec.h[t], rec.m[t]
        h_t, m_t = rec.h[t + 1], rec.m[t + 1]

        g_h = g_h_next + (1.0 - a_o) * (g_q @ params.W_out)
        grads["W_out"] += (1.0 - a_o) * (g_q.T @ h_t)

        g_p_h = g_h * f_h.grad(rec.p_h[t]) + g_ph_carry
        g_z_h = (1.0 - a_h) * g_p_h
        grads["W_x"] += g_z_h.T @ x_t
        grads["W_h"] += g_z_h.T @ h_prev
        grads["W_m"] += g_z_h.T @ m_t
        grads["b_h"] += g_z_h.sum(axis=0)

        g_m = g_m_next + g_z_h @ params.W_m
        g_p_m = g_m * f_m.grad(rec.p_m[t]) + g_pm_carry
        g_z_m = (1.0 - a_m) * g_p_m
        g_u = g_z_m @ params.B_H

        grads["e_x"] += g_u @ x_t
        grads["e_h"] += g_u @ h_prev
        grads["e_m"] += g_u @ m_prev

        g_h_next = g_z_h @ params.W_h + g_u[:, None] * params.e_h[None, :]
        g_m_next = g_z_m @ params.A_H + g_u[:, None] * params.e_m[None, :]
        g_ph_carry = a_h * g_p_h
        g_pm_carry = a_m * g_p_m
        g_q = a_o * g_q

    return grads


def bptt_gradients(
    cell: HsLmuCell,
    params: CellParams,
    X: np.ndarray,
    y: np.ndarray,
    omega_h: float,
    omega_m: float,
    rng: np.random.Generator | None,
    quantize: bool = True,
    l2_lambda: float = 0.0,
    chunk: int | None = None,
    residuals: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], float, float]:
    """Loss, gradients, and accuracy for one minibatch.

    Sequences are processed in fixed-order chunks (bounding the stored
    activity streams) and their gradients summed deterministically before the
    result is normalized by the batch size.
    """
    if X.ndim == 2:
        X = X[:, :, None]
    B = X.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    chunk = B if chunk is None else max(1, chunk)

    grads = {name: np.zeros_like(getattr(params, name)) for name in CellParams.TRAINABLE}
    loss_sum = 0.0
    correct = 0
    for start in range(0, B, chunk):
        Xc, yc = X[start : start + chunk], y[start : start + chunk]
        res_c = None
        if residuals is not None:
            res_c = (residuals[0][start : start + chunk], residuals[1][start : start + chunk])
        logits, rec = cell.forward(
            params, Xc, omega_h, omega_m, rng, quantize=quantize, record=True, residuals=res_c
        )
        ce, dlogits = softmax_crossentropy(logits, yc)
        part = backward_from_records(cell, params, rec, dlogits)
        w = len(yc) / B  # chunk means -> batch mean
        for name in grads:
            grads[name] += part[name] * w
        loss_sum += ce * len(yc)
        correct += int((logits.argmax(axis=1) == yc).sum())

    loss = loss_sum / B
    if l2_lambda:
        loss += l2_lambda * float(np.sum(params.W_out**2))
        grads["W_out"] += 2.0 * l2_lambda * params.W_out
    if not math.isfinite(loss):
        raise NumericalFailure(f"non-finite loss {loss!r} during gradient computation")
    return grads, loss, correct / B


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: CellParams) -> "AdamState":
        zeros = lambda: {n: np.zeros_like(getattr(params, n)) for n in CellParams.TRAINABLE}
        return cls(m=zeros(), v=zeros())


def clip_global_norm(grads: dict[str, np.ndarray], cap: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most cap."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if cap > 0 and total > cap:
        scale = cap / total
        for g in grads.values():
            g *= scale
    return total


def adam_step(
    params: CellParams, grads: dict[str, np.ndarray], state: AdamState, plan: TrainPlan
) -> None:
    """Bias-corrected Adam update of the trainable tensors, in place."""
    state.t += 1
    b1, b2 = plan.beta1, plan.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name in CellParams.TRAINABLE:
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        getattr(params, name)[...] -= plan.learning_rate * m_hat / (np.sqrt(v_hat) + plan.epsilon)


def evaluate(
    cell: HsLmuCell,
    params: CellParams,
    X: np.ndarray,
    y: np.ndarray,
    omega_h: float,
    omega_m: float,
    rng: np.random.Generator | None,
    batch_size: int = 500,
    l2_lambda: float = 0.0,
) -> tuple[float, float]:
    """Mean loss and accuracy over a split at fixed resolutions."""
    losses, correct = 0.0, 0
    for start in range(0, len(y), batch_size):
        Xc, yc = X[start : start + batch_size], y[start : start + batch_size]
        logits, _ = cell.forward(params, Xc, omega_h, omega_m, rng, quantize=True)
        ce, _ = softmax_crossentropy(logits, yc)
        losses += ce * len(yc)
        correct += int((logits.argmax(axis=1) == yc).sum())
    loss = losses / len(y)
    if l2_lambda:
        loss += l2_lambda * float(np.sum(params.W_out**2))
    return loss, correct / len(y)


@dataclass
class EpochStats:
    epoch: int
    omega_h: float
    omega_m: float
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    best_params: CellParams
    final_params: CellParams
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_early: bool = False
    adam: AdamState | None = None


def train_model(
    cell: HsLmuCell,
    params: CellParams,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    plan: TrainPlan,
    shuffle_rng: np.random.Generator,
    residual_rng: np.random.Generator,
    on_epoch=None,
) -> TrainResult:
    """Resolution sweep followed by fine-tuning with early stopping.

    The best model is the one with the lowest validation loss among epochs
    where both resolutions have reached their deployment targets.  Raises
    NumericalFailure (carrying the last finite parameters) on divergence.
    """
    X_train, y_train = train_data
    X_val, y_val = val_data
    result = TrainResult(best_params=params.copy(), final_params=params)
    adam = AdamState.for_params(params)
    last_good = params.copy()
    since_best = 0

    for epoch in range(plan.max_epochs):
        omega_h = schedule_omega(*plan.omega_hidden, plan.interp_epochs, epoch)
        omega_m = schedule_omega(*plan.omega_memory, plan.interp_epochs, epoch)
        at_target = epoch >= plan.interp_epochs - 1

        order = shuffle_rng.permutation(len(y_train))
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(order), plan.batch_size):
            idx = order[start : start + plan.batch_size]
            try:
                grads, loss, _ = bptt_gradients(
                    cell,
                    params,
                    X_train[idx],
                    y_train[idx],
                    omega_h,
                    omega_m,
                    residual_rng,
                    l2_lambda=plan.l2_lambda,
                    chunk=plan.bptt_chunk,
                )
            except NumericalFailure as exc:
                raise NumericalFailure(
                    f"epoch {epoch} aborted: {exc}", last_good=last_good
                ) from exc
            clip_global_norm(grads, plan.grad_clip)
            adam_step(params, grads, adam, plan)
            epoch_loss += loss * len(idx)
            seen += len(idx)
        last_good = params.copy()

        val_loss, val_acc = evaluate(
            cell, params, X_val, y_val, omega_h, omega_m, residual_rng,
            batch_size=plan.batch_size, l2_lambda=plan.l2_lambda,
        )
        stats = EpochStats(epoch, omega_h, omega_m, epoch_loss / seen, val_loss, val_acc)
        result.history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)

        if at_target:
            if val_loss < result.best_val_loss:
                result.best_val_loss = val_loss
                result.best_epoch = epoch
                result.best_params = params.copy()
                since_best = 0
            else:
                since_best += 1
                if since_best > plan.fine_tune_patience:
                    result.stopped_early = True
                    break

    if result.best_epoch < 0:  # sweep never reached the target resolutions
        result.best_params = params.copy()
        result.best_epoch = len(result.history) - 1
    result.final_params = params
    result.adam = adam
    return result
