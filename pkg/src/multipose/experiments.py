"""Reproducible experiment recipes shared by the scripts and the test suite.

Each recipe fixes every seed, so reruns give identical numbers.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics, regressor, scenes
from .mixtures import entropies, uncertainty_scores, weighted_mode


@dataclass
class Fitted:
    model: regressor.MhpRegressor
    cfg: regressor.TrainConfig
    spec: scenes.SceneSpec
    train: list
    test: list
    log: regressor.TrainLog
    seconds: float
    report: metrics.EvalReport = field(default=None, repr=False)


def fit(spec, cfg, table, head_init="uniform"):
    """Generate the scene, train on its train split and evaluate on its test split."""
    train, test = scenes.generate(spec)
    X, Q, T = scenes.as_arrays(train)
    model = regressor.MhpRegressor.create(X.shape[1], cfg.K, cfg.hidden, cfg.pi_hidden, cfg.leak, table.lam_min,
                                          seed=cfg.seed, head_init=head_init)
    start = time.perf_counter()
    log = regressor.train(model, X, Q, T, table, cfg)
    seconds = time.perf_counter() - start
    out = Fitted(model, cfg, spec, train, test, log, seconds)
    out.report = evaluate(out, table)
    return out


def evaluate(fitted, table, samples=None):
    samples = fitted.test if samples is None else samples
    mixtures = regressor.predict(fitted.model, scenes.as_arrays(samples)[0])
    return metrics.evaluate(mixtures, samples, table, diameter=scenes.trajectory_diameter(fitted.train))


def scheme_config(scheme, **overrides):
    """Default training config for a scheme; unimodal gets its single head."""
    K = 1 if scheme == "unimodal" else regressor.TrainConfig().K
    return regressor.TrainConfig(scheme=scheme, K=K, **overrides)


def mode_collapse(table, schemes=("rwta", "unimodal", "mdn"), symmetry=4, seed=0, **overrides):
    """{scheme: Fitted} on the n-fold scene with default settings."""
    spec = scenes.SceneSpec(symmetry=symmetry, seed=seed)
    return {s: fit(spec, scheme_config(s, seed=seed, **overrides), table) for s in schemes}


def total_entropy(mixture, table):
    """Weight-averaged H_B + H_G over the components, in nats."""
    h_b, h_g = entropies(mixture, table)
    return float(np.sum(mixture.weights * (h_b + h_g)))


def noise_entropy_sweep(fitted, table, sigmas=(0.01, 0.05, 0.2), seed=9):
    """Mean predicted total entropy on the test poses re-observed at each noise level."""
    out = []
    for sigma in sigmas:
        noisy = scenes.with_noise(fitted.spec, fitted.test, sigma, seed)
        mixtures = regressor.predict(fitted.model, scenes.as_arrays(noisy)[0])
        out.append((float(sigma), float(np.mean([total_entropy(m, table) for m in mixtures]))))
    return out


def entropy_model(table, seed=0):
    """Single-head model trained with feature-noise augmentation on the 1-fold scene.

    Without augmentation the network never sees noisy inputs and its
    predicted spread carries no information about input quality.
    """
    spec = scenes.SceneSpec(symmetry=1, seed=seed)
    cfg = scheme_config("unimodal", seed=seed, aug_noise=0.3, epochs_full=150)
    return fit(spec, cfg, table)


def uncertainty_filtering(fitted, table, factor=3.0, fractions=metrics.DEFAULT_FRACTIONS, seed=5):
    """Curve of mean errors after dropping the most uncertain test samples.

    Every other test sample is re-observed with `factor` times the scene
    noise. Errors are measured to the nearest ground-truth mode.
    """
    idx = range(0, len(fitted.test), 2)
    noisy = scenes.with_noise(fitted.spec, fitted.test, factor * fitted.spec.noise, seed, indices=idx)
    mixtures = regressor.predict(fitted.model, scenes.as_arrays(noisy)[0])
    preds = [weighted_mode(m) for m in mixtures]
    scores = [uncertainty_scores(m, table)[int(np.argmax(m.weights))] for m in mixtures]
    gts = [(s.gt_rot, s.gt_trans) for s in noisy]
    return metrics.uncertainty_curve(preds, scores, gts, fractions, [s.gt_modes for s in noisy])
