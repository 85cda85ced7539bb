"""Scikit-learn style front end over the functional training/inference core.

    model = PolygonDelineator(grid_size=64, epochs=20).fit(X, y)
    rings = model.predict(X_new)        # list of (V, 2) arrays or None
    score = model.score(X_test, y_test) # mean IoU

X is a float batch [N, 3, D, D] in [0, 1]; y is a list of vertex arrays or
PolygonRing objects in pixel coordinates [0, D).
"""

from __future__ import annotations

import numpy as np

from sklearn.base import BaseEstimator

from . import checkpoint as ckpt
from .metrics import EvalPair, report
from .network import ModelConfig, SequenceOverflowError, greedy_infer, init_params, teacher_forced_stats
from .parallel import map_samples
from .training import encode_samples, train
from .validation import check_image_batch, check_rings, check_same_length


class PolygonDelineator(BaseEstimator):
    """Autoregressive image-to-polygon model with greedy decoding.

    Parameters mirror the network/training configuration; all are stored
    verbatim (sklearn convention) and only validated at fit time.
    """

    def __init__(
        self,
        grid_size=64,
        channels=(16, 32, 64),
        blocks_per_stage=2,
        feature_dim=64,
        embed_dim=128,
        hidden_dim=128,
        attention_dim=64,
        n_lstm_layers=3,
        max_seq_len=30,
        pos_scale=0.1,
        learning_rate=2e-4,
        batch_size=32,
        epochs=20,
        seed=0,
    ):
        self.grid_size = grid_size
        self.channels = channels
        self.blocks_per_stage = blocks_per_stage
        self.feature_dim = feature_dim
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.attention_dim = attention_dim
        self.n_lstm_layers = n_lstm_layers
        self.max_seq_len = max_seq_len
        self.pos_scale = pos_scale
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def _make_config(self) -> ModelConfig:
        return ModelConfig(
            input_size=self.grid_size,
            channels=tuple(self.channels),
            blocks_per_stage=self.blocks_per_stage,
            feature_dim=self.feature_dim,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            attention_dim=self.attention_dim,
            n_lstm_layers=self.n_lstm_layers,
            max_seq_len=self.max_seq_len,
            pos_scale=self.pos_scale,
            seed=self.seed,
        )

    def fit(self, X, y, **train_kwargs):
        """Train from scratch on images X and ground-truth rings y."""
        X = check_image_batch(X, self.grid_size)
        rings = check_rings(y, self.grid_size)
        check_same_length(X, rings)
        config = self._make_config()
        result = train(
            list(zip(X, rings)),
            config,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            **train_kwargs,
        )
        self.config_ = config
        self.params_ = result.params
        self.adam_ = result.adam
        self.history_ = result.history
        self.n_skipped_ = result.n_skipped
        self.n_steps_ = result.steps
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("this PolygonDelineator instance is not fitted yet")

    def predict(self, X):
        """Greedy-decode each image; returns a list of (V, 2) float arrays (None on failure)."""
        self._check_fitted()
        X = check_image_batch(X, self.grid_size)
        results = map_samples(lambda x: greedy_infer(self.params_, self.config_, x), list(X))
        return [r.ring.vertices if r.ring is not None else None for r in results]

    def predict_full(self, X):
        """Like predict, but returns the full InferenceResult objects."""
        self._check_fitted()
        X = check_image_batch(X, self.grid_size)
        return map_samples(lambda x: greedy_infer(self.params_, self.config_, x), list(X))

    def score(self, X, y) -> float:
        """Mean rasterized IoU against ground truth (higher is better)."""
        self._check_fitted()
        X = check_image_batch(X, self.grid_size)
        rings = check_rings(y, self.grid_size)
        check_same_length(X, rings)
        results = self.predict_full(X)
        pairs = [EvalPair(pred=r.ring, gt=g) for r, g in zip(results, rings)]
        return report(pairs, frame=float(self.grid_size)).iou

    def evaluate(self, X, y, **report_kwargs):
        """Full metrics report (AP/AR, IoU, tangent error, vertex ratio, C-IoU)."""
        self._check_fitted()
        X = check_image_batch(X, self.grid_size)
        rings = check_rings(y, self.grid_size)
        check_same_length(X, rings)
        results = self.predict_full(X)
        pairs = [EvalPair(pred=r.ring, gt=g) for r, g in zip(results, rings)]
        report_kwargs.setdefault("frame", float(self.grid_size))
        return report(pairs, **report_kwargs)

    def teacher_forcing_stats(self, X, y):
        """(mean NLL, next-token accuracy) under teacher forcing."""
        self._check_fitted()
        X = check_image_batch(X, self.grid_size)
        rings = check_rings(y, self.grid_size)
        check_same_length(X, rings)
        try:
            images, seqs, _ = encode_samples(list(zip(X, rings)), self.config_)
        except SequenceOverflowError:
            raise ValueError("no ring in y fits within max_seq_len")
        return teacher_forced_stats(self.params_, self.config_, images, seqs, self.batch_size)

    def save(self, path, metadata=None):
        self._check_fitted()
        ckpt.save_checkpoint(path, self.config_, self.params_, adam=self.adam_, metadata=metadata)

    @classmethod
    def load(cls, path) -> "PolygonDelineator":
        c = ckpt.load_checkpoint(path)
        cfg = c.config
        est = cls(
            grid_size=cfg.input_size,
            channels=cfg.channels,
            blocks_per_stage=cfg.blocks_per_stage,
            feature_dim=cfg.feature_dim,
            embed_dim=cfg.embed_dim,
            hidden_dim=cfg.hidden_dim,
            attention_dim=cfg.attention_dim,
            n_lstm_layers=cfg.n_lstm_layers,
            max_seq_len=cfg.max_seq_len,
            pos_scale=cfg.pos_scale,
            seed=cfg.seed,
        )
        est.config_ = cfg
        est.params_ = c.params
        est.adam_ = c.adam
        est.history_ = []
        est.n_skipped_ = 0
        est.n_steps_ = int((c.metadata or {}).get("adam_t", 0))
        return est

    def warm_start_params(self):
        """Freshly initialized (untrained) parameters for this configuration."""
        return init_params(self._make_config())
