"""Synthetic scenes with exact n-fold pose ambiguity.

A camera circles the origin at radius r and height h, looking at the
origin. Its observation is a vector of random Fourier features of
(cos n*theta, sin n*theta, h), so the n poses related by a rotation of
2*pi/n about the vertical axis look identical. A few extra channels depend
on height only (nuisance), and Gaussian noise is added to every channel.

With `staircase_levels` set, the camera looks horizontally and the height
enters the features only through its phase modulo `staircase_period`, which
adds discrete translation modes (one per level).
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import ConfigurationError, FormatError
from .quat import from_matrix, to_matrix

_SPLITS = {"train": 1, "test": 2}


@dataclass(frozen=True)
class SceneSpec:
    symmetry: int = 4
    radius: float = 2.0
    height_range: tuple = (0.5, 1.5)
    n_train: int = 2000
    n_test: int = 500
    feature_dim: int = 16
    noise: float = 0.01
    seed: int = 0
    nuisance_dim: int = 4
    bandwidth: float = 1.0
    staircase_period: float = 0.5
    staircase_levels: int = 0

    def __post_init__(self):
        if self.symmetry < 1:
            raise ConfigurationError("symmetry order must be >= 1")
        if self.radius <= 0:
            raise ConfigurationError("radius must be positive")
        if self.feature_dim < 4:
            raise ConfigurationError("feature_dim must be >= 4")
        if not 0 <= self.nuisance_dim < self.feature_dim:
            raise ConfigurationError("nuisance_dim must be in [0, feature_dim)")
        if self.noise < 0:
            raise ConfigurationError("noise must be nonnegative")
        lo, hi = self.height_range
        if hi < lo:
            raise ConfigurationError("height_range must be (low, high)")
        object.__setattr__(self, "height_range", (float(lo), float(hi)))


@dataclass
class SceneSample:
    features: np.ndarray
    gt_rot: np.ndarray
    gt_trans: np.ndarray
    gt_modes: list = field(default_factory=list)  # [(quat, trans), ...]


def _projection(spec):
    rng = np.random.default_rng([spec.seed, 0])
    n_main = spec.feature_dim - spec.nuisance_dim
    w_main = rng.standard_normal((n_main, 4)) * spec.bandwidth
    w_nuis = rng.standard_normal((spec.nuisance_dim, 3)) * spec.bandwidth
    phase = rng.uniform(0.0, 2.0 * np.pi, spec.feature_dim)
    return w_main, w_nuis, phase


def _height_code(spec, h):
    if spec.staircase_levels:
        p = 2.0 * np.pi * h / spec.staircase_period
        return np.cos(p), np.sin(p)
    lo, hi = spec.height_range
    return 2.0 * (h - lo) / max(hi - lo, 1e-12) - 1.0, 0.0


def clean_features(spec, theta, h):
    """Noise-free observation; depends on theta only through n*theta."""
    w_main, w_nuis, phase = _projection(spec)
    n = spec.symmetry
    hc = _height_code(spec, h)
    main = w_main @ np.array([np.cos(n * theta), np.sin(n * theta), hc[0], hc[1]])
    nuis = w_nuis @ np.array([hc[0], hc[1], spec.radius / 4.0])
    return np.cos(np.concatenate([main, nuis]) + phase)


def camera_pose(theta, h, radius, look_at_origin=True):
    """Camera-to-world rotation (as quaternion) and position on the circle."""
    t = np.array([radius * np.cos(theta), radius * np.sin(theta), h])
    target = np.zeros(3) if look_at_origin else np.array([0.0, 0.0, h])
    forward = target - t
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=1)
    return from_matrix(R), t


def _rz(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pose_modes(spec, q, t):
    """All poses indistinguishable from (q, t); entry 0 is (q, t) itself."""
    R = to_matrix(q)
    heights = [0.0]
    if spec.staircase_levels:
        level = int(np.floor((t[2] - spec.height_range[0]) / spec.staircase_period))
        heights = sorted(((k - level) * spec.staircase_period for k in range(spec.staircase_levels)), key=abs)
    modes = []
    for dh in heights:
        for k in range(spec.symmetry):
            Rz = _rz(2.0 * np.pi * k / spec.symmetry)
            modes.append((from_matrix(Rz @ R), Rz @ t + np.array([0.0, 0.0, dh])))
    modes[0] = (np.array(q, float), np.array(t, float))  # exact, not round-tripped
    return modes


def observe(spec, trans, noise, rng):
    """Features for a camera at `trans`, with fresh observation noise."""
    theta = np.arctan2(trans[1], trans[0])
    f = clean_features(spec, theta, trans[2])
    return f + noise * rng.standard_normal(f.shape)


def _make_sample(spec, theta, h, rng):
    q, t = camera_pose(theta, h, spec.radius, look_at_origin=not spec.staircase_levels)
    return SceneSample(observe(spec, t, spec.noise, rng), q, t, pose_modes(spec, q, t))


def generate(spec):
    """(train, test) lists of SceneSample; bit-identical for a given spec.

    Train azimuths are stratified-uniform on the circle; test azimuths sit on
    a regular grid offset by half a step. Each sample has its own RNG stream
    derived from (seed, split, index).
    """
    lo, hi = spec.height_range
    if spec.staircase_levels:
        hi = lo + spec.staircase_period * spec.staircase_levels
    out = {}
    for split, count in (("train", spec.n_train), ("test", spec.n_test)):
        samples = []
        for i in range(count):
            rng = np.random.default_rng([spec.seed, _SPLITS[split], i])
            if split == "train":
                theta = 2.0 * np.pi * (i + rng.uniform()) / count
            else:
                theta = 2.0 * np.pi * (i + 0.5) / count
            h = rng.uniform(lo, hi)
            samples.append(_make_sample(spec, theta, h, rng))
        out[split] = samples
    return out["train"], out["test"]


def with_noise(spec, samples, noise, seed, indices=None):
    """Copies of `samples` re-observed with a different noise level.

    indices: which samples get the new noise (default: all); the rest are
    returned unchanged.
    """
    chosen = set(range(len(samples)) if indices is None else indices)
    out = []
    for i, s in enumerate(samples):
        if i in chosen:
            rng = np.random.default_rng([seed, 7, i])
            s = SceneSample(observe(spec, s.gt_trans, noise, rng), s.gt_rot, s.gt_trans, s.gt_modes)
        out.append(s)
    return out


def trajectory_diameter(samples):
    """Largest distance between any two ground-truth camera positions."""
    pts = np.array([s.gt_trans if isinstance(s, SceneSample) else s for s in samples], float)
    if len(pts) < 2:
        raise ConfigurationError("need at least two positions")
    return float(pdist(pts).max())


def as_arrays(samples):
    """Stack features, rotations and translations for batch processing."""
    X = np.array([s.features for s in samples])
    Q = np.array([s.gt_rot for s in samples])
    T = np.array([s.gt_trans for s in samples])
    return X, Q, T


# --- JSON Lines -------------------------------------------------------------


def write_jsonl(path, samples, spec, split):
    with open(path, "w") as fh:
        for s in samples:
            rec = {
                "features": s.features.tolist(),
                "q": s.gt_rot.tolist(),
                "t": s.gt_trans.tolist(),
                "modes": [{"q": q.tolist(), "t": t.tolist()} for q, t in s.gt_modes],
            }
            fh.write(json.dumps(rec) + "\n")
    with open(meta_path(path), "w") as fh:
        json.dump({"spec": asdict(spec), "split": split}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def meta_path(path):
    return str(path) + ".meta.json"


def read_jsonl(path):
    """Returns (samples, spec, split); rejects dimension mismatches."""
    try:
        with open(meta_path(path)) as fh:
            meta = json.load(fh)
        spec_dict = dict(meta["spec"])
        spec_dict["height_range"] = tuple(spec_dict["height_range"])
        spec = SceneSpec(**spec_dict)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read dataset metadata for {path}: {exc}") from None
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                rec = json.loads(line)
                s = SceneSample(
                    np.array(rec["features"], float), np.array(rec["q"], float), np.array(rec["t"], float),
                    [(np.array(m["q"], float), np.array(m["t"], float)) for m in rec["modes"]],
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if s.features.shape != (spec.feature_dim,) or s.gt_rot.shape != (4,) or s.gt_trans.shape != (3,):
                raise FormatError(f"{path}:{lineno}: dimension mismatch")
            if any(q.shape != (4,) or t.shape != (3,) for q, t in s.gt_modes):
                raise FormatError(f"{path}:{lineno}: malformed mode")
            samples.append(s)
    return samples, spec, meta.get("split")
