"""Activity metrics: bit-width, significant bits, sparsity, SNR, operation census.

All functions consume recorded integer event counts (one integer per neuron
per step), which is exactly what travels between populations: the emitted
value is always count / resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lmu import lowpass_filter

__all__ = [
    "PopulationActivity",
    "bitwidth_metric",
    "population_bitwidth",
    "significant_bits_metric",
    "significant_bits",
    "sparsity_metric",
    "measured_snr",
    "op_census",
]


@dataclass
class PopulationActivity:
    """Integer event counts of one population, shaped (steps, ..., neurons)."""

    counts: np.ndarray
    omega: float

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts)
        if self.counts.size == 0:
            raise ValueError("empty activity stream")
        if not np.all(self.counts == np.round(self.counts)):
            raise ValueError("activity counts must be integers")
        self.counts = self.counts.astype(np.int64)

    @property
    def n_neurons(self) -> int:
        return self.counts.shape[-1]


def population_bitwidth(pop: PopulationActivity) -> tuple[int, int]:
    """(bits, levels) needed for every level in the observed count range.

    The range spans observed min..max inclusive, so a sign bit for negative
    counts is automatic.  A population that only ever emits one value still
    needs one bit.
    """
    lo, hi = int(pop.counts.min()), int(pop.counts.max())
    levels = hi - lo + 1
    bits = max(1, math.ceil(math.log2(levels))) if levels > 1 else 1
    return bits, levels


def bitwidth_metric(populations: dict[str, PopulationActivity]) -> float:
    """Worst-case bits per neuron per step, averaged over neurons."""
    if not populations:
        raise ValueError("no populations supplied")
    total_bits = 0.0
    total_neurons = 0
    for pop in populations.values():
        bits, _ = population_bitwidth(pop)
        total_bits += bits * pop.n_neurons
        total_neurons += pop.n_neurons
    return total_bits / total_neurons


def significant_bits(k: np.ndarray) -> np.ndarray:
    """Per-count significant bits: strip trailing zero bits, add a sign bit.

    Zero counts carry zero bits (nothing is transmitted or multiplied).
    """
    k = np.asarray(k, dtype=np.int64)
    mag = np.abs(k)
    out = np.zeros(k.shape, dtype=float)
    nz = mag > 0
    m = mag[nz]
    # bit length minus count of trailing zero bits
    bitlen = np.floor(np.log2(m)).astype(np.int64) + 1
    trailing = np.zeros_like(m)
    work = m.copy()
    while np.any(work % 2 == 0):
        even = work % 2 == 0
        trailing[even] += 1
        work[even] //= 2
    out[nz] = bitlen - trailing + (k[nz] < 0)
    return out


def significant_bits_metric(populations: dict[str, PopulationActivity]) -> float:
    """Mean significant bits per neuron-step, weighted by population size."""
    if not populations:
        raise ValueError("no populations supplied")
    total = 0.0
    weight = 0
    for pop in populations.values():
        total += float(significant_bits(pop.counts).mean()) * pop.n_neurons
        weight += pop.n_neurons
    return total / weight


def sparsity_metric(pop: PopulationActivity) -> tuple[float, float]:
    """(zero fraction, nonzero fraction) over all neuron-steps."""
    zero = float((pop.counts == 0).mean())
    return zero, 1.0 - zero


def measured_snr(ideal: np.ndarray, quantized: np.ndarray, tau_bar: float) -> float:
    """Filtered signal power over filtered quantization-error power.

    Both streams pass through the same synapse lowpass; the first 5 * tau_bar
    steps are discarded so the filter transient does not pollute the ratio.
    Returns inf when the filtered error vanishes.
    """
    ideal = np.asarray(ideal, dtype=float)
    quantized = np.asarray(quantized, dtype=float)
    if ideal.shape != quantized.shape:
        raise ValueError("streams must have equal length")
    warmup = int(math.ceil(5 * tau_bar))
    if ideal.shape[0] <= warmup:
        raise ValueError(f"stream too short: need more than {warmup} steps for tau={tau_bar}")
    sig = lowpass_filter(ideal, tau_bar)[warmup:]
    err = lowpass_filter(quantized - ideal, tau_bar)[warmup:]
    p_sig = float(np.mean(sig**2))
    p_err = float(np.mean(err**2))
    if p_sig == 0.0:
        raise ValueError("signal power is zero; SNR undefined")
    if p_err == 0.0:
        return math.inf
    return p_sig / p_err


def op_census(
    populations: dict[str, PopulationActivity], fanouts: dict[str, int]
) -> dict[str, dict[str, float]]:
    """Weight-operation counts implied by the recorded activity.

    Each nonzero count touches ``fanout`` weights: a unit count only adds the
    weight, a larger count needs a small-integer multiply-add, and a zero
    count skips its weights entirely.  Totals are over the whole record;
    ``per_step`` divides by the number of steps.
    """
    out = {}
    for name, pop in populations.items():
        fanout = fanouts[name]
        k = pop.counts
        steps = k.shape[0]
        zero = int((k == 0).sum())
        unit = int((np.abs(k) == 1).sum())
        multi = int((np.abs(k) > 1).sum())
        out[name] = {
            "skipped": zero * fanout,
            "adds": unit * fanout,
            "multiply_adds": multi * fanout,
            "steps": steps,
            "per_step_skipped": zero * fanout / steps,
            "per_step_adds": unit * fanout / steps,
            "per_step_multiply_adds": multi * fanout / steps,
        }
    return out
