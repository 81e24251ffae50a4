"""Mixtures of (Bingham x Gaussian) pose components and mode finding on S^3."""
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import bingham, gaussian
from .bingham import BinghamParams
from .errors import ConfigurationError, FormatError
from .gaussian import GaussianDiag
from .quat import angular_error, canonicalize


@dataclass(frozen=True)
class PoseHypothesis:
    rot: BinghamParams
    trans: GaussianDiag
    weight: float


@dataclass(frozen=True)
class PoseMixture:
    """K weighted pose components stored column-wise.

    Rotation and translation are independent within a component, so the
    joint density of a component is the product of its two factors.
    """

    weights: np.ndarray  # (K,)
    modes: np.ndarray  # (K, 4), canonical unit quaternions
    conc: np.ndarray  # (K, 3), ordered concentrations
    means: np.ndarray  # (K, 3)
    variances: np.ndarray  # (K, 3)

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        K = w.shape[0] if w.ndim == 1 else 0
        if K < 1:
            raise ConfigurationError("a mixture needs at least one component")
        if np.any(~np.isfinite(w)) or np.any(w < 0.0):
            raise ConfigurationError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "modes", canonicalize(np.asarray(self.modes, float).reshape(K, 4)))
        object.__setattr__(self, "conc", np.asarray(self.conc, float).reshape(K, 3))
        object.__setattr__(self, "means", np.asarray(self.means, float).reshape(K, 3))
        object.__setattr__(
            self, "variances", np.maximum(np.asarray(self.variances, float).reshape(K, 3), gaussian.VAR_FLOOR)
        )

    @property
    def K(self):
        return len(self.weights)

    @property
    def components(self):
        return [
            PoseHypothesis(BinghamParams(self.modes[j], self.conc[j]), GaussianDiag(self.means[j], self.variances[j]),
                           float(self.weights[j]))
            for j in range(self.K)
        ]

    @classmethod
    def from_components(cls, components):
        comps = list(components)
        return cls(
            weights=[c.weight for c in comps],
            modes=[c.rot.mode for c in comps],
            conc=[c.rot.conc for c in comps],
            means=[c.trans.mean for c in comps],
            variances=[c.trans.var for c in comps],
        )

    def to_dict(self):
        return {"components": [
            {"weight": float(self.weights[j]), "mode": self.modes[j].tolist(), "lambda": self.conc[j].tolist(),
             "mean": self.means[j].tolist(), "var": self.variances[j].tolist()}
            for j in range(self.K)
        ]}

    @classmethod
    def from_dict(cls, data):
        try:
            comps = data["components"]
            arr = {key: np.array([c[key] for c in comps], float) for key in ("weight", "mode", "lambda", "mean", "var")}
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed mixture: {exc}") from None
        for key, width in (("mode", 4), ("lambda", 3), ("mean", 3), ("var", 3)):
            if arr[key].shape != (len(comps), width):
                raise FormatError(f"field {key!r} must have {width} entries per component")
        total = arr["weight"].sum()
        if abs(total - 1.0) > 1e-6:
            raise FormatError(f"mixture weights sum to {total}, expected 1 within 1e-6")
        return cls(arr["weight"] / total, arr["mode"], arr["lambda"], arr["mean"], arr["var"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def component_log_pdfs(m, table, q, t):
    """Per-component log(B_j(q) G_j(t)), shape (K,)."""
    q = np.broadcast_to(np.asarray(q, float), (m.K, 4))
    t = np.broadcast_to(np.asarray(t, float), (m.K, 3))
    return bingham.log_pdf_batch(m.modes, m.conc, q, table) + gaussian.log_pdf_batch(m.means, m.variances, t)


def mixture_log_pdf(m, table, q, t):
    """log sum_j pi_j B_j(q) G_j(t), stabilized with log-sum-exp.

    Terms are summed in sorted order, so the result does not depend on the
    order of the components.
    """
    with np.errstate(divide="ignore"):
        log_w = np.log(m.weights)
    return float(logsumexp(np.sort(log_w + component_log_pdfs(m, table, q, t))))


def weighted_mode(m):
    """(mode, mean) of the heaviest component; ties go to the lowest index."""
    j = int(np.argmax(m.weights))
    return m.modes[j].copy(), m.means[j].copy()


def _minmax(values):
    values = np.asarray(values, float)
    span = values.max() - values.min()
    if span == 0.0:
        return np.zeros_like(values)
    return (values - values.min()) / span


def entropies(m, table):
    """(H_B, H_G) per component."""
    return bingham.entropy(m.conc, table), gaussian.entropy(m.variances)


def uncertainty_scores(m, table):
    """Per-component score in [0, 2]: minmax-normalized H_B plus H_G.

    An entropy list with zero range contributes 0 for every component.
    """
    if m.K == 1:
        return np.zeros(1)
    h_b, h_g = entropies(m, table)
    return _minmax(h_b) + _minmax(h_g)


@dataclass(frozen=True)
class Mode:
    quat: np.ndarray
    count: int
    converged: bool


def mean_shift_modes(samples, bandwidth, max_iter=100, tol=1e-6):
    """Cluster quaternions by mean shift with a Gaussian kernel on rotation angle.

    Each sample seeds a trajectory that repeatedly moves to the normalized,
    kernel-weighted mean of the (sign-aligned) samples within `bandwidth`
    degrees. Converged points closer than bandwidth/2 are merged, scanning in
    seed order. Modes are returned by decreasing member count; `converged` is
    False for a cluster if any member hit max_iter.
    """
    if bandwidth <= 0:
        raise ConfigurationError("bandwidth must be positive")
    x = canonicalize(np.atleast_2d(np.asarray(samples, float)))
    if len(x) == 0:
        raise ConfigurationError("need at least one sample")
    y = x.copy()
    active = np.ones(len(y), bool)
    for _ in range(max_iter):
        if not active.any():
            break
        ya = y[active]
        dots = ya @ x.T
        d = np.degrees(2.0 * np.arccos(np.clip(np.abs(dots), 0.0, 1.0)))
        w = np.where(d <= bandwidth, np.exp(-0.5 * (d / bandwidth) ** 2), 0.0) * np.sign(dots)
        new = w @ x
        new /= np.linalg.norm(new, axis=1, keepdims=True)
        new = np.where(np.sum(new * ya, axis=1, keepdims=True) < 0.0, -new, new)
        moved = angular_error(new, ya)
        y[active] = new
        idx = np.flatnonzero(active)
        active[idx[moved < tol]] = False

    modes, members = [], []
    for i in range(len(y)):
        for k, centre in enumerate(modes):
            if angular_error(y[i], centre) <= bandwidth / 2.0:
                members[k].append(i)
                break
        else:
            modes.append(y[i])
            members.append([i])
    out = []
    for idx in members:
        pts = y[idx]
        pts = np.where((pts @ pts[0])[:, None] < 0.0, -pts, pts)
        centre = canonicalize(pts.sum(axis=0))
        out.append(Mode(centre, len(idx), bool(not active[idx].any())))
    order = sorted(range(len(out)), key=lambda k: -out[k].count)
    return [out[k] for k in order]


def sample_mixture(m, n, seed):
    """n poses from the mixture: (quats (n, 4), translations (n, 3), component ids).

    Components are drawn by weight, then each component's rotations and
    translations are sampled independently from its own substream.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng([seed, 0])
    comp = rng.choice(m.K, size=n, p=m.weights)
    quats = np.empty((n, 4))
    trans = np.empty((n, 3))
    for j in np.unique(comp):
        idx = np.flatnonzero(comp == j)
        quats[idx] = bingham.sample(BinghamParams(m.modes[j], m.conc[j]), len(idx), seed=[seed, 1, int(j)])
        noise = np.random.default_rng([seed, 2, int(j)]).standard_normal((len(idx), 3))
        trans[idx] = m.means[j] + noise * np.sqrt(m.variances[j])
    return quats, trans, comp
