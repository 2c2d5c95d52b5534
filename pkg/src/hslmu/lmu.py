"""Linear memory core: sliding-window state-space matrices and synapse filters.

The memory is a fixed linear system whose state holds the coefficients of the
recent input history projected onto shifted Legendre polynomials.  This module
builds the closed-form continuous matrices, discretizes them with zero-order
hold, and rescales them so that driving the system through a first-order
lowpass synapse reproduces the unfiltered trajectory exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

__all__ = [
    "legendre_state_matrices",
    "discretize_zoh",
    "compensate_lowpass",
    "LmuSystem",
    "lowpass_decay",
    "LowpassFilter",
    "lowpass_filter",
    "shifted_legendre",
    "legendre_reconstruct",
]


def legendre_state_matrices(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form (A, B) of the continuous sliding-window system.

    a_ij = (2i+1) * (-1 if i < j else (-1)^(i-j+1)),  b_i = (2i+1) * (-1)^i.
    """
    if order < 1:
        raise ValueError("memory order must be >= 1")
    i = np.arange(order)[:, None]
    j = np.arange(order)[None, :]
    scale = 2.0 * i + 1.0
    lower = np.where((i - j + 1) % 2 == 0, 1.0, -1.0)  # (-1)^(i-j+1) for i >= j
    A = scale * np.where(i < j, -1.0, lower)
    B = ((2.0 * np.arange(order) + 1.0) * np.where(np.arange(order) % 2 == 0, 1.0, -1.0))
    return A, B


def discretize_zoh(A: np.ndarray, B: np.ndarray, theta_bar: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization at a step of ``1 / theta_bar``.

    A_bar = exp(A / theta_bar); B_bar solves A @ B_bar = (A_bar - I) @ B, so no
    explicit inverse of A is formed.
    """
    if not theta_bar > 0:
        raise ValueError("window length theta_bar must be positive")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(-1)
    A_bar = expm(A / theta_bar)
    rhs = (A_bar - np.eye(A.shape[0])) @ B
    try:
        B_bar = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"state matrix is ill-conditioned, cannot discretize: {exc}") from exc
    return A_bar, B_bar


def lowpass_decay(tau_bar: float) -> float:
    """Per-step decay a = exp(-1/tau_bar) of the ZOH-discretized lowpass."""
    if not tau_bar > 0:
        raise ValueError("filter time constant tau_bar must be positive")
    return math.exp(-1.0 / tau_bar)


def compensate_lowpass(
    A_bar: np.ndarray, B_bar: np.ndarray, tau_bar: float
) -> tuple[np.ndarray, np.ndarray]:
    """Rescale (A_bar, B_bar) so the lowpass-filtered recurrence is exact.

    With a = exp(-1/tau_bar):

        A_H = (A_bar - a*I) / (1 - a),   B_H = B_bar / (1 - a)

    and then  a*m + (1-a)*(A_H m + B_H u)  ==  A_bar m + B_bar u  identically.
    """
    a = lowpass_decay(tau_bar)
    A_bar = np.asarray(A_bar, dtype=float)
    B_bar = np.asarray(B_bar, dtype=float)
    A_H = (A_bar - a * np.eye(A_bar.shape[0])) / (1.0 - a)
    B_H = B_bar / (1.0 - a)
    return A_H, B_H


@dataclass
class LmuSystem:
    """All matrix forms of one memory configuration, computed once and frozen.

    ``order`` is the number of Legendre coefficients tracked, ``theta_bar`` the
    window length in steps, and ``tau_bar`` the synapse time constant of the
    lowpass feeding the memory population.
    """

    order: int
    theta_bar: float
    tau_bar: float
    A: np.ndarray = field(init=False)
    B: np.ndarray = field(init=False)
    A_bar: np.ndarray = field(init=False)
    B_bar: np.ndarray = field(init=False)
    A_H: np.ndarray = field(init=False)
    B_H: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.A, self.B = legendre_state_matrices(self.order)
        self.A_bar, self.B_bar = discretize_zoh(self.A, self.B, self.theta_bar)
        self.A_H, self.B_H = compensate_lowpass(self.A_bar, self.B_bar, self.tau_bar)


class LowpassFilter:
    """First-order lowpass with unit DC gain: y_t = a*y_{t-1} + (1-a)*x_t.

    State starts at zero (the resting value of both populations).
    """

    def __init__(self, tau_bar: float, shape: int | tuple[int, ...]):
        self.decay = lowpass_decay(tau_bar)
        self.y = np.zeros(shape)

    def step(self, x: np.ndarray) -> np.ndarray:
        self.y = self.decay * self.y + (1.0 - self.decay) * x
        return self.y

    def reset(self) -> None:
        self.y = np.zeros_like(self.y)


def lowpass_filter(stream: np.ndarray, tau_bar: float, axis: int = 0) -> np.ndarray:
    """Filter a whole recorded stream at once (zero initial state)."""
    from scipy.signal import lfilter

    a = lowpass_decay(tau_bar)
    return lfilter([1.0 - a], [1.0, -a], np.asarray(stream, dtype=float), axis=axis)


def shifted_legendre(degrees: int, r) -> np.ndarray:
    """Evaluate shifted Legendre polynomials P_0..P_{degrees-1} at r in [0, 1].

    Uses the three-term recurrence on x = 2r - 1; the explicit binomial sum
    overflows for large degree, so it is only used as a cross-check in tests.
    Returns an array of shape (degrees,) + shape(r).
    """
    if degrees < 1:
        raise ValueError("need at least one polynomial degree")
    r = np.asarray(r, dtype=float)
    x = 2.0 * r - 1.0
    out = np.empty((degrees,) + x.shape)
    out[0] = 1.0
    if degrees > 1:
        out[1] = x
    for i in range(1, degrees - 1):
        out[i + 1] = ((2 * i + 1) * x * out[i] - i * out[i - 1]) / (i + 1)
    return out


def legendre_reconstruct(m: np.ndarray, r: float) -> np.ndarray:
    """Estimate the input seen ``r`` windows ago from the memory state.

    ``r = 0`` reads the current input, ``r = 1`` the oldest end of the window.
    ``m`` may be (order,) or (..., order); coefficients contract the last axis.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError("relative delay r must lie in [0, 1]")
    m = np.asarray(m, dtype=float)
    coeffs = shifted_legendre(m.shape[-1], r)
    return m @ coeffs
