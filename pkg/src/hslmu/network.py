"""The hybrid-spiking recurrent cell and full-sequence inference.

One step couples two populations.  The memory population runs the frozen
linear window system on a learned scalar write signal and is quantized through
a saturating identity, so it can emit positive and negative unit events.  The
hidden population applies learned weights to the input, its own previous
activity, and the fresh memory activity, and is quantized through a leaky
integrate-and-fire rate curve, so it emits non-negative events.  Both
populations read their drive through first-order lowpass synapses; the memory
matrices are pre-compensated so that filtering introduces no distortion.

Per-step evaluation order (the only schedule consistent with which values each
equation consumes):

    1. write signal   u_t   from x_t, h_{t-1}, m_{t-1}
    2. memory         m_t   from filtered A_H m_{t-1} + B_H u_t, quantized
    3. hidden         h_t   from filtered W_x x_t + W_h h_{t-1} + W_m m_t + b_h
    4. readout        q_t   lowpass of W_out h_t; logits at the last step are
                            q_T + b_out
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lmu import LmuSystem, lowpass_decay
from .quantizer import Activation, diffuse, hard_clip, lif_rate

__all__ = ["CellConfig", "CellParams", "CellState", "StepRecord", "HsLmuCell", "count_states"]


@dataclass
class CellConfig:
    """Architecture and neuron configuration of one cell instance."""

    n_hidden: int
    memory_order: int
    input_dim: int = 1
    n_classes: int = 10
    theta_bar: float = 784.0
    tau_memory: float = 200.0
    tau_hidden: float = 10.0
    tau_out: float = 10.0
    f_hidden: Activation = field(default_factory=lif_rate)
    f_memory: Activation = field(default_factory=hard_clip)

    def __post_init__(self) -> None:
        if self.n_hidden < 1 or self.memory_order < 1:
            raise ValueError("n_hidden and memory_order must be >= 1")
        if self.input_dim < 1 or self.n_classes < 2:
            raise ValueError("need input_dim >= 1 and n_classes >= 2")


@dataclass
class CellParams:
    """Trainable tensors plus the frozen memory matrices.

    ``A_H`` and ``B_H`` come from the window system and are never updated by
    training.
    """

    W_x: np.ndarray  # (n, input_dim)
    W_h: np.ndarray  # (n, n)
    W_m: np.ndarray  # (n, d)
    b_h: np.ndarray  # (n,)
    e_x: np.ndarray  # (input_dim,)
    e_h: np.ndarray  # (n,)
    e_m: np.ndarray  # (d,)
    W_out: np.ndarray  # (n_classes, n)
    b_out: np.ndarray  # (n_classes,)
    A_H: np.ndarray  # (d, d), frozen
    B_H: np.ndarray  # (d,), frozen

    TRAINABLE = ("W_x", "W_h", "W_m", "b_h", "e_x", "e_h", "e_m", "W_out", "b_out")
    FROZEN = ("A_H", "B_H")

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.TRAINABLE + self.FROZEN}

    def copy(self) -> "CellParams":
        return CellParams(**{k: v.copy() for k, v in self.tensors().items()})


@dataclass
class CellState:
    """Everything that persists from one step to the next within a sequence."""

    h: np.ndarray  # (B, n) previous hidden activity
    m: np.ndarray  # (B, d) previous memory activity
    v_h: np.ndarray  # (B, n) hidden quantizer residuals
    v_m: np.ndarray  # (B, d) memory quantizer residuals
    p_h: np.ndarray  # (B, n) hidden lowpass state (filtered pre-activation)
    p_m: np.ndarray  # (B, d) memory lowpass state
    q: np.ndarray  # (B, C) readout lowpass state


@dataclass
class StepRecord:
    """Streams the backward pass (and the activity metrics) consume.

    ``h`` and ``m`` have a leading zero row for the initial state; ``k_*`` are
    the raw integer event counts, ``p_*`` the filtered pre-activations.
    """

    x: np.ndarray  # (T, B, input_dim)
    h: np.ndarray  # (T+1, B, n)
    m: np.ndarray  # (T+1, B, d)
    p_h: np.ndarray  # (T, B, n)
    p_m: np.ndarray  # (T, B, d)
    k_h: np.ndarray  # (T, B, n) integer counts
    k_m: np.ndarray  # (T, B, d) integer counts


class HsLmuCell:
    """Binds a configuration to the frozen memory system and runs sequences."""

    def __init__(self, config: CellConfig):
        self.config = config
        self.system = LmuSystem(config.memory_order, config.theta_bar, config.tau_memory)
        self.a_m = lowpass_decay(config.tau_memory)
        self.a_h = lowpass_decay(config.tau_hidden)
        self.a_out = lowpass_decay(config.tau_out)

    # -- state management ---------------------------------------------------

    def init_state(
        self,
        batch: int,
        rng: np.random.Generator | None,
        residuals: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> CellState:
        """Fresh per-sequence state.

        Quantizer residuals come from ``residuals`` (hidden, memory) when
        given, else are drawn U[0,1) from ``rng``, else start at zero.
        """
        cfg = self.config
        if residuals is not None:
            v_h = np.array(residuals[0], dtype=float)
            v_m = np.array(residuals[1], dtype=float)
        elif rng is None:
            v_h = np.zeros((batch, cfg.n_hidden))
            v_m = np.zeros((batch, cfg.memory_order))
        else:
            v_h = rng.random((batch, cfg.n_hidden))
            v_m = rng.random((batch, cfg.memory_order))
        return CellState(
            h=np.zeros((batch, cfg.n_hidden)),
            m=np.zeros((batch, cfg.memory_order)),
            v_h=v_h,
            v_m=v_m,
            p_h=np.zeros((batch, cfg.n_hidden)),
            p_m=np.zeros((batch, cfg.memory_order)),
            q=np.zeros((batch, cfg.n_classes)),
        )

    # -- single step ---------------------------------------------------------

    def step(
        self,
        params: CellParams,
        state: CellState,
        x_t: np.ndarray,
        omega_h: float,
        omega_m: float,
        quantize: bool = True,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Advance one step in place; returns (h, m, p_h, p_m, k_h, k_m).

        With ``quantize=False`` the ideal activations are emitted unchanged
        (the infinite-resolution limit); counts are then reported as zero.
        """
        cfg = self.config
        if x_t.shape[-1] != cfg.input_dim:
            raise ValueError(f"input has dim {x_t.shape[-1]}, cell expects {cfg.input_dim}")

        u = x_t @ params.e_x + state.h @ params.e_h + state.m @ params.e_m  # (B,)

        z_m = state.m @ params.A_H.T + np.outer(u, params.B_H)
        p_m = self.a_m * state.p_m + (1.0 - self.a_m) * z_m
        a_mem = cfg.f_memory.value(p_m)
        if quantize:
            state.v_m, k_m = diffuse(state.v_m, a_mem, omega_m)
            m_t = k_m / omega_m
        else:
            k_m = np.zeros_like(a_mem)
            m_t = a_mem

        z_h = x_t @ params.W_x.T + state.h @ params.W_h.T + m_t @ params.W_m.T + params.b_h
        p_h = self.a_h * state.p_h + (1.0 - self.a_h) * z_h
        a_hid = cfg.f_hidden.value(p_h)
        if quantize:
            state.v_h, k_h = diffuse(state.v_h, a_hid, omega_h)
            h_t = k_h / omega_h
        else:
            k_h = np.zeros_like(a_hid)
            h_t = a_hid

        state.q = self.a_out * state.q + (1.0 - self.a_out) * (h_t @ params.W_out.T)
        state.h, state.m, state.p_h, state.p_m = h_t, m_t, p_h, p_m
        return h_t, m_t, p_h, p_m, k_h, k_m

    # -- full sequences -------------------------------------------------------

    def forward(
        self,
        params: CellParams,
        X: np.ndarray,
        omega_h: float,
        omega_m: float,
        rng: np.random.Generator | None,
        quantize: bool = True,
        record: bool = False,
        residuals: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> tuple[np.ndarray, StepRecord | None]:
        """Run a batch of sequences; returns final-step logits (B, C).

        ``X`` is (B, T) or (B, T, input_dim).  State is created fresh here and
        discarded afterwards: sequences are independent trials.
        """
        if X.ndim == 2:
            X = X[:, :, None]
        B, T, _ = X.shape
        if T < 1:
            raise ValueError("sequences must have at least one step")
        state = self.init_state(B, rng, residuals=residuals)
        rec = None
        if record:
            cfg = self.config
            rec = StepRecord(
                x=np.ascontiguousarray(X.transpose(1, 0, 2)),
                h=np.zeros((T + 1, B, cfg.n_hidden)),
                m=np.zeros((T + 1, B, cfg.memory_order)),
                p_h=np.zeros((T, B, cfg.n_hidden)),
                p_m=np.zeros((T, B, cfg.memory_order)),
                k_h=np.zeros((T, B, cfg.n_hidden)),
                k_m=np.zeros((T, B, cfg.memory_order)),
            )
        for t in range(T):
            h, m, p_h, p_m, k_h, k_m = self.step(
                params, state, X[:, t, :], omega_h, omega_m, quantize=quantize
            )
            if rec is not None:
                rec.h[t + 1] = h
                rec.m[t + 1] = m
                rec.p_h[t] = p_h
                rec.p_m[t] = p_m
                rec.k_h[t] = k_h
                rec.k_m[t] = k_m
        logits = state.q + params.b_out
        return logits, rec


def count_states(config: CellConfig) -> int:
    """Number of scalars that persist across steps during inference.

    One quantizer residual and one synapse-filter state per recurrent neuron
    (hidden and memory populations alike), plus one filter channel per output
    class.
    """
    n, d = config.n_hidden, config.memory_order
    return (n + d) + (n + d) + config.n_classes
