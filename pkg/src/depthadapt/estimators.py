"""sklearn-style estimator facade over the torch internals.

Estimators carry their hyperparameters as constructor arguments (so
``get_params``/``set_params``, cloning, and grid search work), validate
inputs through :mod:`depthadapt.validation`, and expose fitted state via
trailing-underscore attributes.

    completer = DepthCompleter(epochs=20).fit(source_samples)
    scorer = EnergyScorer(completer).fit(source_samples)
    adapter = StreamAdapter(completer, scorer, inner_iters=3)
    post = adapter.fit_predict(target_stream)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import adapt as _adapt
from .checkpoint import model_fingerprint
from .depth_net import DepthArch, build_model, insert_adaptation, predict
from .energy import EnergyArch, build_energy_model, energy_forward
from .errors import ValidationError
from .perturb import PerturbConfig
from .synth import ShiftSpec, apply_shift
from .train_depth import TrainConfig, train_supervised
from .train_energy import EnergyTrainConfig, train_energy
from .validation import check_samples


class CovariateShifter(TransformerMixin, BaseEstimator):
    """Stateless transformer applying one covariate shift to samples.

    The per-sample seed is ``seed + index`` so a stream gets varied draws
    while the whole transform stays reproducible.
    """

    def __init__(self, kind="fog", magnitude=0.3, seed=0):
        self.kind = kind
        self.magnitude = magnitude
        self.seed = seed

    def fit(self, X, y=None):
        ShiftSpec(self.kind, self.magnitude, self.seed)  # validate early
        return self

    def transform(self, X):
        samples = check_samples(X)
        return [
            apply_shift(s, ShiftSpec(self.kind, self.magnitude, self.seed + i))
            for i, s in enumerate(samples)
        ]


class DepthCompleter(BaseEstimator):
    """Supervised sparse-to-dense depth completion estimator."""

    def __init__(
        self,
        base_width=16,
        stages=3,
        adapt_stage=2,
        adapt_reduction=4,
        depth_min=1.0,
        depth_max=10.0,
        epochs=30,
        batch_size=8,
        learning_rate=1e-3,
        validation_fraction=0.15,
        seed=0,
    ):
        self.base_width = base_width
        self.stages = stages
        self.adapt_stage = adapt_stage
        self.adapt_reduction = adapt_reduction
        self.depth_min = depth_min
        self.depth_max = depth_max
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _arch(self) -> DepthArch:
        return DepthArch(
            base_width=self.base_width,
            stages=self.stages,
            adapt_stage=self.adapt_stage,
            adapt_reduction=self.adapt_reduction,
            depth_min=self.depth_min,
            depth_max=self.depth_max,
        )

    def fit(self, X, y=None):
        samples = check_samples(X, require_gt=True)
        self.model_ = build_model(self._arch(), seed=self.seed)
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            validation_fraction=self.validation_fraction,
        )
        self.model_, self.history_ = train_supervised(self.model_, samples, cfg)
        self.fingerprint_ = model_fingerprint(self.model_)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        samples = check_samples(X)
        return predict(self.model_, samples)

    def score(self, X, y=None) -> float:
        """Negative mean MAE over ground-truthed samples (higher is better)."""
        from .metrics import EvalConfig, mae

        check_is_fitted(self, "model_")
        samples = check_samples(X, require_gt=True)
        preds = predict(self.model_, samples)
        cfg = EvalConfig(depth_range=(0.0, float("inf")))
        return -float(
            np.mean([mae(p, s.dense_gt, s.gt_mask, cfg) for p, s in zip(preds, samples)])
        )


class EnergyScorer(TransformerMixin, BaseEstimator):
    """Region-energy scorer fitted against a trained DepthCompleter."""

    def __init__(
        self,
        completer=None,
        stages=6,
        base_width=16,
        max_width=512,
        global_pool=False,
        input_scale=0.1,
        tau_percentile=90.0,
        eps_image=PerturbConfig().eps_image,
        eps_sparse=PerturbConfig().eps_sparse,
        epochs=5,
        batch_size=8,
        learning_rate=1e-3,
        seed=0,
    ):
        self.completer = completer
        self.stages = stages
        self.base_width = base_width
        self.max_width = max_width
        self.global_pool = global_pool
        self.input_scale = input_scale
        self.tau_percentile = tau_percentile
        self.eps_image = eps_image
        self.eps_sparse = eps_sparse
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def _arch(self) -> EnergyArch:
        return EnergyArch(
            stages=self.stages,
            base_width=self.base_width,
            max_width=self.max_width,
            global_pool=self.global_pool,
            input_scale=self.input_scale,
        )

    def _depth_model(self):
        if self.completer is None:
            raise ValidationError("EnergyScorer needs a fitted DepthCompleter")
        check_is_fitted(self.completer, "model_")
        return self.completer.model_

    def fit(self, X, y=None):
        samples = check_samples(X, require_gt=True)
        depth_model = self._depth_model()
        self.model_ = build_energy_model(self._arch(), seed=self.seed)
        self.model_, self.history_ = train_energy(
            self.model_,
            depth_model,
            samples,
            PerturbConfig(self.eps_image, self.eps_sparse),
            EnergyTrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                learning_rate=self.learning_rate,
                seed=self.seed,
                tau_percentile=self.tau_percentile,
            ),
        )
        self.tau_ = self.model_.tau
        self.bound_to_ = self.model_.bound_to
        return self

    def predict_grids(self, X):
        """EnergyGrid per sample, scored on the completer's predictions."""
        check_is_fitted(self, "model_")
        samples = check_samples(X)
        preds = predict(self._depth_model(), samples)
        return [
            energy_forward(self.model_, p, s.sparse_depth * s.sparse_mask)
            for p, s in zip(preds, samples)
        ]

    def transform(self, X) -> np.ndarray:
        """Flattened energy maps, shape (n_samples, grid_cells)."""
        return np.stack([g.values.ravel() for g in self.predict_grids(X)])

    def score_samples(self, X) -> np.ndarray:
        """Per-sample mean energy negated: higher means more source-like."""
        return -self.transform(X).mean(axis=1)


class StreamAdapter(BaseEstimator):
    """Single-pass streaming adapter around a completer (+ optional scorer).

    ``fit_predict`` consumes the stream once and returns post-adapt
    predictions; the adapted model and the per-iteration report live on as
    ``model_`` and ``report_``. The completer's own fitted model is copied,
    never mutated.
    """

    def __init__(
        self,
        completer=None,
        scorer=None,
        w_energy=0.5,
        w_sparse=1.0,
        w_smooth=6.0,
        learning_rate=5e-4,
        inner_iters=5,
        norm_policy="batch",
        optimizer_state_policy="persistent",
        energy_clamp=_adapt.DEFAULT_ENERGY_CLAMP,
        batch_size=1,
        seed=0,
    ):
        self.completer = completer
        self.scorer = scorer
        self.w_energy = w_energy
        self.w_sparse = w_sparse
        self.w_smooth = w_smooth
        self.learning_rate = learning_rate
        self.inner_iters = inner_iters
        self.norm_policy = norm_policy
        self.optimizer_state_policy = optimizer_state_policy
        self.energy_clamp = energy_clamp
        self.batch_size = batch_size
        self.seed = seed

    def _config(self) -> _adapt.AdaptConfig:
        return _adapt.AdaptConfig(
            w_energy=self.w_energy,
            w_sparse=self.w_sparse,
            w_smooth=self.w_smooth,
            learning_rate=self.learning_rate,
            inner_iters=self.inner_iters,
            norm_policy=self.norm_policy,
            optimizer_state_policy=self.optimizer_state_policy,
            energy_clamp=self.energy_clamp,
            batch_size=self.batch_size,
        )

    def _prepare(self):
        import copy

        if self.completer is None:
            raise ValidationError("StreamAdapter needs a fitted DepthCompleter")
        check_is_fitted(self.completer, "model_")
        self.model_ = copy.deepcopy(self.completer.model_)
        insert_adaptation(self.model_, seed=self.seed)
        self.energy_model_ = None
        if self.scorer is not None:
            check_is_fitted(self.scorer, "model_")
            self.energy_model_ = self.scorer.model_
        elif self.w_energy > 0:
            raise ValidationError("w_energy > 0 requires an EnergyScorer")
        return self

    def fit(self, X, y=None):
        """Consume the stream once, adapting along the way."""
        self.fit_predict(X)
        return self

    def fit_predict(self, X, y=None) -> list[np.ndarray]:
        self._prepare()
        result = _adapt.run_stream(
            self.model_, self.energy_model_, X, self._config(), record_energy_grids=True
        )
        self.report_ = result.report
        self.result_ = result
        return result.post_predictions

    def partial_fit(self, X, y=None):
        """Adapt on one batch; call ``predict`` for the updated outputs."""
        if not hasattr(self, "model_"):
            self._prepare()
            self.optimizer_ = _adapt.make_optimizer(self.model_, self._config())
        cfg = self._config()
        batch = check_samples(X)
        optimizer = self.optimizer_ if cfg.optimizer_state_policy == "persistent" else None
        rows, self.optimizer_ = _adapt.adapt_step(
            self.model_, self.energy_model_, batch, cfg, optimizer
        )
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        samples = check_samples(X)
        return predict(self.model_, samples, use_batch_stats=self.norm_policy != "frozen")
