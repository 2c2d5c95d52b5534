"""Temporally-diffused activation quantizer and the activation functions it wraps.

A quantizer instance converts an ideal activation value ``a_t = f(x_t)`` into
an integer number of unit events per step, ``k``, emitted as ``k / omega``.
The fractional remainder is carried in a per-neuron residual ``v`` so that the
rounding error diffuses forward in time instead of accumulating: over any
consecutive window of steps the summed output deviates from the summed ideal
activation by strictly less than ``1 / omega``.

``omega`` acts like a resolution knob.  At ``omega = 1`` a non-negative
activation emits plain binary spikes; as ``omega`` grows the output converges
to the ideal real-valued activation.  ``omega`` may be fractional; outputs are
always integer multiples of ``1 / omega``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantizerState",
    "Activation",
    "relu",
    "sigmoid",
    "tanh",
    "hard_clip",
    "lif_rate",
    "make_activation",
    "diffuse",
    "quantize_step",
    "init_residuals",
]


def _check_omega(omega: float) -> None:
    if not (omega > 0) or not math.isfinite(omega):
        raise ValueError(f"resolution omega must be a finite positive number, got {omega!r}")


@dataclass
class QuantizerState:
    """Diffusion residual(s) plus the resolution in effect for one sequence.

    ``v`` stays in ``[0, 1)`` after every step; it is the fraction of the next
    unit event already accumulated.
    """

    v: np.ndarray
    omega: float

    def __post_init__(self) -> None:
        _check_omega(self.omega)
        self.v = np.asarray(self.v, dtype=float)
        if np.any(self.v < 0.0) or np.any(self.v >= 1.0):
            raise ValueError("residual v must lie in [0, 1)")


def diffuse(v: np.ndarray, a: np.ndarray, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """One quantization step on raw arrays; returns ``(v_next, counts k)``.

    The emitted value is ``k / omega``.  ``floor`` is the mathematical floor,
    so negative activations produce negative counts and the windowed-error
    bound holds with signed activations too.
    """
    s = v + a * omega
    k = np.floor(s)
    return s - k, k


def quantize_step(state: QuantizerState, activation_value) -> tuple[QuantizerState, np.ndarray]:
    """Advance the quantizer by one step and emit the quantized activation."""
    a = np.asarray(activation_value, dtype=float)
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("non-finite activation value reached the quantizer")
    v_next, k = diffuse(state.v, a, state.omega)
    return QuantizerState(v=v_next, omega=state.omega), k / state.omega


def init_residuals(count: int, rng: np.random.Generator | int) -> np.ndarray:
    """Draw independent initial residuals, one per neuron, uniform on [0, 1)."""
    if count < 1:
        raise ValueError("need at least one neuron")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return rng.random(count)


# ---------------------------------------------------------------------------
# Activation functions.  Each exposes the ideal value and its derivative; the
# derivative is what backpropagation uses, regardless of the resolution the
# forward pass ran at.
# ---------------------------------------------------------------------------


class Activation:
    """An ideal activation ``f`` with its analytic derivative.

    Implementations keep ``|f(x)| <= 1`` over the input domain the network
    feeds them, so the quantizer's windowed-error bound applies unchanged.
    """

    name = "base"

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _Relu(Activation):
    name = "relu"

    def value(self, x):
        return np.maximum(np.asarray(x, dtype=float), 0.0)

    def grad(self, x):
        return (np.asarray(x, dtype=float) > 0.0).astype(float)


class _Sigmoid(Activation):
    name = "sigmoid"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    def grad(self, x):
        s = self.value(x)
        return s * (1.0 - s)


class _Tanh(Activation):
    name = "tanh"

    def value(self, x):
        return np.tanh(np.asarray(x, dtype=float))

    def grad(self, x):
        t = np.tanh(np.asarray(x, dtype=float))
        return 1.0 - t * t


class _HardClip(Activation):
    """Identity saturated to [-1, +1]; the memory population's nonlinearity."""

    name = "clip"

    def value(self, x):
        return np.clip(np.asarray(x, dtype=float), -1.0, 1.0)

    def grad(self, x):
        return (np.abs(np.asarray(x, dtype=float)) <= 1.0).astype(float)


class _LifRate(Activation):
    """Steady-state firing rate of a leaky integrate-and-fire neuron.

    Time constants are in steps.  The drive is ``J = gain * x + 1`` so the
    firing threshold sits exactly at ``x = 0``:

        f(x) = 1 / (t_ref + tau_rc * ln(1 + 1 / (gain * x)))   for x > 0
        f(x) = 0                                               for x <= 0

    With the default constants the gain is solved so that f(1) = e / (1 + e),
    normalizing the operating range to [0, 1).  The derivative diverges as
    x -> 0+, so it is capped; the cap only binds in a thin sliver above
    threshold.
    """

    name = "lif_rate"

    def __init__(self, t_ref: float = 1.0, tau_rc: float = 10.0, grad_cap: float = 1e2):
        self.t_ref = float(t_ref)
        self.tau_rc = float(tau_rc)
        self.grad_cap = float(grad_cap)
        # f(1) = e/(1+e)  <=>  t_ref + tau_rc*ln(1 + 1/g) = (1+e)/e
        target = (1.0 + math.e) / math.e - self.t_ref
        if target <= 0:
            raise ValueError("t_ref too long to normalize f(1) = e/(1+e)")
        self.gain = 1.0 / (math.exp(target / self.tau_rc) - 1.0)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0.0
        xp = x[pos]
        out[pos] = 1.0 / (self.t_ref + self.tau_rc * np.log1p(1.0 / (self.gain * xp)))
        return out

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0.0
        xp = x[pos]
        f = 1.0 / (self.t_ref + self.tau_rc * np.log1p(1.0 / (self.gain * xp)))
        g = f * f * self.tau_rc / (self.gain * xp * xp + xp)
        out[pos] = np.minimum(g, self.grad_cap)
        return out


def relu() -> Activation:
    return _Relu()


def sigmoid() -> Activation:
    return _Sigmoid()


def tanh() -> Activation:
    return _Tanh()


def hard_clip() -> Activation:
    return _HardClip()


def lif_rate(t_ref: float = 1.0, tau_rc: float = 10.0, grad_cap: float = 1e2) -> Activation:
    return _LifRate(t_ref=t_ref, tau_rc=tau_rc, grad_cap=grad_cap)


_FACTORIES = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "clip": hard_clip,
    "lif_rate": lif_rate,
}


def make_activation(kind: str, **params) -> Activation:
    """Build an activation by name; unknown names are configuration errors."""
    try:
        factory = _FACTORIES[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}; choose from {sorted(_FACTORIES)}") from None
    return factory(**params)
