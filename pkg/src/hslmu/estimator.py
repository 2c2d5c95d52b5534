"""Scikit-learn estimator wrapping the hybrid-spiking sequence classifier.

``fit`` expects each row of ``X`` to be one scalar sequence (values in
[-1, 1], one feature per time step) and runs the full resolution-sweep
training schedule.  After fitting, inference runs at the deployment
resolutions (the low ends of the sweeps).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .network import CellConfig, HsLmuCell
from .quantizer import hard_clip, lif_rate
from .seeds import stream_rng
from .training import TrainPlan, initialize_parameters, train_model

__all__ = ["HsLmuClassifier"]


class HsLmuClassifier(ClassifierMixin, BaseEstimator):
    """Hybrid-spiking recurrent classifier over scalar sequences.

    Parameters mirror the training plan; see ``TrainPlan`` for semantics.
    ``theta_bar=None`` sets the memory window to the sequence length.
    """

    def __init__(
        self,
        n_hidden: int = 32,
        memory_order: int = 32,
        theta_bar: float | None = None,
        omega_hidden: tuple[float, float] = (16.0, 1.0),
        omega_memory: tuple[float, float] = (32.0, 2.0),
        interp_epochs: int = 10,
        fine_tune_patience: int = 5,
        max_epochs: int = 60,
        batch_size: int = 100,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        l2_lambda: float = 0.01,
        grad_clip: float = 10.0,
        bptt_chunk: int = 128,
        tau_memory: float = 200.0,
        tau_hidden: float = 10.0,
        tau_out: float = 10.0,
        validation_fraction: float = 1 / 6,
        random_state: int = 0,
        verbose: int = 0,
    ):
        self.n_hidden = n_hidden
        self.memory_order = memory_order
        self.theta_bar = theta_bar
        self.omega_hidden = omega_hidden
        self.omega_memory = omega_memory
        self.interp_epochs = interp_epochs
        self.fine_tune_patience = fine_tune_patience
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.l2_lambda = l2_lambda
        self.grad_clip = grad_clip
        self.bptt_chunk = bptt_chunk
        self.tau_memory = tau_memory
        self.tau_hidden = tau_hidden
        self.tau_out = tau_out
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.verbose = verbose

    # -- plumbing -------------------------------------------------------------

    def _plan(self) -> TrainPlan:
        return TrainPlan(
            omega_hidden=tuple(self.omega_hidden),
            omega_memory=tuple(self.omega_memory),
            interp_epochs=self.interp_epochs,
            fine_tune_patience=self.fine_tune_patience,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            l2_lambda=self.l2_lambda,
            grad_clip=self.grad_clip,
            bptt_chunk=self.bptt_chunk,
            seed=self.random_state,
        )

    def _build_cell(self, seq_len: int, n_classes: int) -> HsLmuCell:
        return HsLmuCell(
            CellConfig(
                n_hidden=self.n_hidden,
                memory_order=self.memory_order,
                input_dim=1,
                n_classes=n_classes,
                theta_bar=float(seq_len if self.theta_bar is None else self.theta_bar),
                tau_memory=self.tau_memory,
                tau_hidden=self.tau_hidden,
                tau_out=self.tau_out,
                f_hidden=lif_rate(),
                f_memory=hard_clip(),
            )
        )

    # -- estimator API ----------------------------------------------------------

    def fit(self, X, y, validation=None):
        """Train on sequences X (n_samples, n_steps) with integer labels y.

        ``validation=(X_val, y_val)`` supplies an explicit early-stopping
        split; otherwise the trailing ``validation_fraction`` of X is held out.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]

        if validation is not None:
            X_val = check_array(validation[0], dtype=np.float64)
            y_val = np.searchsorted(self.classes_, np.asarray(validation[1]))
            X_tr, y_tr = X, y_idx
        else:
            n_val = max(1, int(round(len(y) * self.validation_fraction)))
            X_tr, y_tr = X[:-n_val], y_idx[:-n_val]
            X_val, y_val = X[-n_val:], y_idx[-n_val:]

        cell = self._build_cell(X.shape[1], len(self.classes_))
        params = initialize_parameters(cell, stream_rng(self.random_state, "init"))
        plan = self._plan()

        def log(stats):
            if self.verbose:
                print(
                    f"epoch {stats.epoch:3d}  omega_h={stats.omega_h:8.3f}  "
                    f"omega_m={stats.omega_m:8.3f}  train={stats.train_loss:.4f}  "
                    f"val={stats.val_loss:.4f}  acc={stats.val_accuracy:.4f}"
                )

        result = train_model(
            cell,
            params,
            (X_tr, y_tr),
            (X_val, y_val),
            plan,
            shuffle_rng=stream_rng(self.random_state, "shuffle"),
            residual_rng=stream_rng(self.random_state, "residuals"),
            on_epoch=log,
        )
        self.cell_ = cell
        self.params_ = result.best_params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.omega_hidden_ = plan.omega_hidden[1]
        self.omega_memory_ = plan.omega_memory[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} steps, classifier was fitted on {self.n_features_in_}"
            )
        logits, _ = self.cell_.forward(
            self.params_, X, self.omega_hidden_, self.omega_memory_,
            stream_rng(self.random_state, "eval"),
        )
        return logits

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[logits.argmax(axis=1)]

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        ez = np.exp(z)
        return ez / ez.sum(axis=1, keepdims=True)
