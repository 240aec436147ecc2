import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import depthadapt as da
from depthadapt.errors import ValidationError

from conftest import make_micro_samples


@pytest.fixture(scope="module")
def fitted_completer():
    samples = make_micro_samples(32, seed=60)
    completer = da.DepthCompleter(
        base_width=4, stages=2, adapt_stage=1, adapt_reduction=2,
        epochs=12, batch_size=8, learning_rate=3e-3, seed=0,
    )
    return completer.fit(samples), samples


@pytest.fixture(scope="module")
def fitted_scorer(fitted_completer):
    completer, samples = fitted_completer
    scorer = da.EnergyScorer(
        completer, stages=2, base_width=4, max_width=16,
        eps_image=8 / 255, eps_sparse=0.4, epochs=6, learning_rate=3e-3, seed=0,
    )
    return scorer.fit(samples)


class TestCovariateShifter:
    def test_transform_matches_apply_shift(self):
        samples = make_micro_samples(3, seed=61)
        shifter = da.CovariateShifter(kind="noise", magnitude=0.1, seed=5)
        out = shifter.fit_transform(samples)
        for i, (a, b) in enumerate(zip(out, samples)):
            expected = da.apply_shift(b, da.ShiftSpec("noise", 0.1, 5 + i))
            assert np.array_equal(a.image, expected.image)

    def test_params_round_trip(self):
        shifter = da.CovariateShifter(kind="fog", magnitude=0.25, seed=2)
        params = shifter.get_params()
        assert params == {"kind": "fog", "magnitude": 0.25, "seed": 2}
        assert clone(shifter).get_params() == params

    def test_invalid_kind_raises_on_fit(self):
        with pytest.raises(ValidationError):
            da.CovariateShifter(kind="hail").fit([])


class TestDepthCompleter:
    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            da.DepthCompleter().predict(make_micro_samples(1, seed=62))

    def test_fit_predict_shapes_and_positivity(self, fitted_completer):
        completer, samples = fitted_completer
        preds = completer.predict(samples[:3])
        assert preds.shape == (3, 16, 16)
        assert (preds > 0).all()

    def test_score_is_negative_mae(self, fitted_completer):
        completer, samples = fitted_completer
        score = completer.score(samples[:4])
        preds = completer.predict(samples[:4])
        manual = -np.mean(
            [np.abs(p - s.dense_gt).mean() for p, s in zip(preds, samples[:4])]
        )
        assert score == pytest.approx(manual, rel=1e-6)

    def test_get_params_feed_clone(self, fitted_completer):
        completer, _ = fitted_completer
        twin = clone(completer)
        assert twin.get_params() == completer.get_params()
        assert not hasattr(twin, "model_")


class TestEnergyScorer:
    def test_requires_fitted_completer(self):
        scorer = da.EnergyScorer(da.DepthCompleter())
        with pytest.raises(NotFittedError):
            scorer.fit(make_micro_samples(2, seed=63))
        with pytest.raises(ValidationError):
            da.EnergyScorer(None).fit(make_micro_samples(2, seed=63))

    def test_transform_shape(self, fitted_scorer):
        samples = make_micro_samples(3, seed=64)
        flat = fitted_scorer.transform(samples)
        assert flat.shape == (3, 16)  # 16x16 input, 2 stages -> 4x4 grid
        assert ((flat > 0) & (flat < 1)).all()

    def test_score_samples_sign_convention(self, fitted_scorer):
        samples = make_micro_samples(2, seed=65)
        scores = fitted_scorer.score_samples(samples)
        assert scores.shape == (2,)
        assert (scores <= 0).all()  # negated mean energy

    def test_tau_and_binding_exposed(self, fitted_scorer, fitted_completer):
        completer, _ = fitted_completer
        assert fitted_scorer.tau_ > 0
        assert fitted_scorer.bound_to_ == completer.fingerprint_


class TestStreamAdapter:
    def test_fit_predict_leaves_completer_untouched(self, fitted_completer, fitted_scorer):
        completer, _ = fitted_completer
        stream = make_micro_samples(4, seed=66, prefix="stream")
        before = {n: p.detach().clone() for n, p in completer.model_.named_parameters()}
        adapter = da.StreamAdapter(
            completer, fitted_scorer, w_energy=0.3, w_smooth=0.5,
            learning_rate=2e-3, inner_iters=2, seed=0,
        )
        posts = adapter.fit_predict(stream)
        assert len(posts) == 4
        for n, p in completer.model_.named_parameters():
            assert torch.equal(p, before[n]), n
        assert len(adapter.report_.rows) == 4 * 3

    def test_energy_weight_requires_scorer(self, fitted_completer):
        completer, _ = fitted_completer
        adapter = da.StreamAdapter(completer, None, w_energy=0.5)
        with pytest.raises(ValidationError):
            adapter.fit_predict(make_micro_samples(2, seed=67))

    def test_baseline_mode_without_scorer(self, fitted_completer):
        completer, _ = fitted_completer
        adapter = da.StreamAdapter(
            completer, None, w_energy=0.0, w_smooth=0.5, inner_iters=1, seed=0
        )
        posts = adapter.fit_predict(make_micro_samples(3, seed=68, prefix="base"))
        assert len(posts) == 3

    def test_partial_fit_then_predict(self, fitted_completer, fitted_scorer):
        completer, _ = fitted_completer
        adapter = da.StreamAdapter(
            completer, fitted_scorer, w_energy=0.3, w_smooth=0.5,
            learning_rate=2e-3, inner_iters=2, seed=1,
        )
        batch = make_micro_samples(2, seed=69, prefix="pf")
        adapter.partial_fit(batch)
        preds = adapter.predict(batch)
        assert preds.shape == (2, 16, 16)

    def test_sklearn_param_plumbing(self, fitted_completer, fitted_scorer):
        completer, _ = fitted_completer
        adapter = da.StreamAdapter(completer, fitted_scorer, w_energy=0.7)
        params = adapter.get_params(deep=False)
        assert params["w_energy"] == 0.7
        adapter.set_params(w_energy=0.2)
        assert adapter._config().w_energy == 0.2
