"""Multi-hypothesis pose regressor with hand-written backpropagation.

A leaky-ReLU MLP maps a feature vector to K pose hypotheses. Each
hypothesis carries a raw quaternion (normalized in the forward pass), a
translation, three raw concentration offsets and three raw variances. A
small separate subnet produces the K mixture logits.

Training losses, per sample i and hypothesis j:

    unimodal   NLL_B + NLL_G                       (K = 1)
    wta/rwta   sum_j w_ij (NLL_B + NLL_G) + CE(winner, logits)
    ewta       like rwta with w = 1/k on the k closest hypotheses
    mdn        -log sum_j pi_j B_j(q_i) G_j(t_i)

Training runs in two stages: translation heads first, then everything.
"""
import base64
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

from .errors import ConfigurationError, FormatError, NonFiniteLossError
from .gaussian import LOG_2PI, VAR_FLOOR
from .mixtures import PoseMixture
from .quat import FRAME_BASIS, random_unit

log = logging.getLogger(__name__)

SCHEMES = ("unimodal", "wta", "rwta", "ewta", "mdn")
OPTIMIZERS = ("sgd", "momentum", "adam")
WINNERS = ("rotation", "joint")
HEAD_INITS = ("uniform", "diverse")
CHECKPOINT_FORMAT = "multipose-mhp/1"


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class TrainConfig:
    scheme: str = "rwta"
    K: int = 50
    eps: float = 0.05
    lr: float = 1e-3
    lr_decay: float = 0.99  # multiplicative, per epoch
    optimizer: str = "adam"
    momentum: float = 0.9
    epochs_translation: int = 10
    epochs_full: int = 60
    batch_size: int = 64
    seed: int = 0
    ewta_interval: int = 10  # halve k every this many epochs
    winner: str = "rotation"
    hidden: tuple = (128, 128)
    pi_hidden: int = 64
    leak: float = 0.1
    aug_noise: float = 0.0  # per-sample extra feature noise, sigma ~ U(0, aug_noise)
    max_loss: float = 1e6

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if self.scheme == "unimodal" and self.K != 1:
            raise ConfigurationError("scheme 'unimodal' requires K = 1")
        if not 0.0 <= self.eps < 1.0:
            raise ConfigurationError("eps must lie in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.winner not in WINNERS:
            raise ConfigurationError(f"unknown winner rule {self.winner!r}")
        if self.lr < 0 or not 0 < self.lr_decay <= 1:
            raise ConfigurationError("need lr >= 0 and 0 < lr_decay <= 1")
        if self.batch_size < 1 or self.epochs_translation < 0 or self.epochs_full < 0:
            raise ConfigurationError("batch size must be positive and epoch counts nonnegative")
        if self.ewta_interval < 1 or self.aug_noise < 0:
            raise ConfigurationError("ewta_interval must be >= 1 and aug_noise >= 0")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def effective_eps(self):
        return 0.0 if self.scheme == "wta" else self.eps


# --- model -------------------------------------------------------------------


@dataclass
class MhpRegressor:
    input_dim: int
    K: int
    hidden: tuple
    pi_hidden: int
    leak: float
    lam_min: float
    params: dict = field(repr=False)

    @classmethod
    def create(cls, input_dim, K, hidden=(128, 128), pi_hidden=64, leak=0.1, lam_min=-900.0, seed=0,
               head_init="uniform", trans_scale=1.0):
        """He-initialized hidden layers and heads initialized per `head_init`.

        "uniform": weights and biases of every head drawn from
        U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual framework default.
        "diverse": random unit-quaternion and N(0, trans_scale^2)
        translation biases per hypothesis, which spreads the hypotheses out
        before training.
        """
        if input_dim < 1 or K < 1:
            raise ConfigurationError("input_dim and K must be positive")
        if head_init not in HEAD_INITS:
            raise ConfigurationError(f"unknown head_init {head_init!r}")
        rng = np.random.default_rng([seed, 0])
        hidden = tuple(int(h) for h in hidden)

        def he(n_in, n_out):
            return rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in), np.zeros(n_out)

        def uniform(n_in, n_out):
            bound = 1.0 / np.sqrt(n_in)
            return rng.uniform(-bound, bound, (n_in, n_out)), rng.uniform(-bound, bound, n_out)

        p = {}
        sizes = (input_dim,) + hidden
        for i in range(len(hidden)):
            p[f"W{i}"], p[f"b{i}"] = he(sizes[i], sizes[i + 1])
        H = sizes[-1]
        for name, width in (("q", 4), ("t", 3), ("l", 3), ("v", 3)):
            p["W" + name], p["b" + name] = uniform(H, width * K)
        p["Wp1"], p["bp1"] = uniform(H, pi_hidden)
        p["Wp2"], p["bp2"] = uniform(pi_hidden, K)
        if head_init == "diverse":
            p["bq"] = random_unit(K, rng).reshape(-1)
            p["bt"] = rng.standard_normal(3 * K) * trans_scale
        return cls(input_dim, K, hidden, int(pi_hidden), float(leak), float(lam_min), p)

    def param_names(self):
        names = [n for i in range(len(self.hidden)) for n in (f"W{i}", f"b{i}")]
        return names + ["Wq", "bq", "Wt", "bt", "Wl", "bl", "Wv", "bv", "Wp1", "bp1", "Wp2", "bp2"]

    def copy(self):
        return MhpRegressor(self.input_dim, self.K, self.hidden, self.pi_hidden, self.leak, self.lam_min,
                            {k: v.copy() for k, v in self.params.items()})

    def arch(self):
        return {"input_dim": self.input_dim, "K": self.K, "hidden": list(self.hidden),
                "pi_hidden": self.pi_hidden, "leak": self.leak, "lam_min": self.lam_min}


@dataclass
class Heads:
    """Per-sample head outputs after the output nonlinearities."""

    quat: np.ndarray  # (B, K, 4) unit
    trans: np.ndarray  # (B, K, 3)
    conc: np.ndarray  # (B, K, 3) ordered, clamped at lam_min
    var: np.ndarray  # (B, K, 3)
    logits: np.ndarray  # (B, K)


def _forward(model, X):
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != model.input_dim:
        raise ConfigurationError(f"feature dimension {X.shape[1]} does not match model input {model.input_dim}")
    p, K, B = model.params, model.K, X.shape[0]
    cache = {"acts": [X], "pre": []}
    h = X
    for i in range(len(model.hidden)):
        z = h @ p[f"W{i}"] + p[f"b{i}"]
        h = np.where(z > 0.0, z, model.leak * z)
        cache["pre"].append(z)
        cache["acts"].append(h)
    raw_q = (h @ p["Wq"] + p["bq"]).reshape(B, K, 4)
    trans = (h @ p["Wt"] + p["bt"]).reshape(B, K, 3)
    o = (h @ p["Wl"] + p["bl"]).reshape(B, K, 3)
    rv = (h @ p["Wv"] + p["bv"]).reshape(B, K, 3)
    zp = h @ p["Wp1"] + p["bp1"]
    hp = np.maximum(zp, 0.0)
    logits = hp @ p["Wp2"] + p["bp2"]

    norm = np.linalg.norm(raw_q, axis=-1, keepdims=True)
    lam_raw = -np.cumsum(softplus(o), axis=-1)
    conc = np.maximum(lam_raw, model.lam_min)
    var = softplus(rv) + VAR_FLOOR
    # NaN rows pass here and are reported by the loss with their sample index
    assert not np.any(np.diff(conc, axis=-1) > 0.0) and not np.any(conc > 0.0)
    cache.update(norm=norm, o=o, rv=rv, zp=zp, hp=hp, unclamped=lam_raw > model.lam_min)
    return Heads(raw_q / norm, trans, conc, var, logits), cache


def forward_batch(model, X):
    """Head outputs for a batch of feature vectors."""
    return _forward(model, X)[0]


def to_mixture(heads, i):
    w = softmax(heads.logits[i])
    return PoseMixture(w / w.sum(), heads.quat[i], heads.conc[i], heads.trans[i], heads.var[i])


def forward(model, features):
    """PoseMixture predicted for one feature vector."""
    return to_mixture(forward_batch(model, np.asarray(features, float)[None]), 0)


def predict(model, X):
    heads = forward_batch(model, X)
    return [to_mixture(heads, i) for i in range(len(heads.logits))]


# --- hypothesis assignment ------------------------------------------------------


def rotation_distance(preds, gt):
    """min(|q - p|, |q + p|) between gt (..., 4) and predictions (..., K, 4)."""
    gt = np.asarray(gt, float)[..., None, :]
    preds = np.asarray(preds, float)
    return np.minimum(np.linalg.norm(preds - gt, axis=-1), np.linalg.norm(preds + gt, axis=-1))


def _relaxed(dist, eps):
    K = dist.shape[-1]
    win = np.argmin(dist, axis=-1)
    other = eps / (K - 1) if K > 1 else 0.0
    # winner weight chosen so the exactly rounded sum of all K weights is 1
    top = math.fsum([1.0] + [-other] * (K - 1))
    w = np.full(dist.shape, other)
    np.put_along_axis(w, win[..., None], top, axis=-1)
    return w


def _top_k(dist, k):
    order = np.argsort(dist, axis=-1, kind="stable")[..., :k]
    w = np.zeros(dist.shape)
    np.put_along_axis(w, order, 1.0 / k, axis=-1)
    return w


def rwta_weights(preds, gt, eps):
    """Relaxed winner-takes-all weights; the closest hypothesis gets 1 - eps.

    Ties go to the lowest index. Returns K weights summing to 1.
    """
    return _relaxed(rotation_distance(preds, gt), eps)


def ewta_active_set(preds, gt, k):
    """Indices of the k hypotheses closest to gt (stable on ties)."""
    dist = rotation_distance(preds, gt)
    if not 1 <= k <= len(dist):
        raise ConfigurationError("need 1 <= k <= K")
    return set(int(j) for j in np.argsort(dist, kind="stable")[:k])


def ewta_k(K, epoch, interval):
    """Active-set size after `epoch` epochs: K halved every `interval`."""
    return max(1, K >> (epoch // interval))


# --- losses ------------------------------------------------------------------------


def gaussian_nll(trans, var, T):
    """Per-hypothesis translation NLL and its gradients w.r.t. mean and var."""
    r = T[:, None, :] - trans
    nll = 0.5 * np.sum(r * r / var + np.log(var), axis=-1) + 1.5 * LOG_2PI
    return nll, -r / var, 0.5 * (1.0 / var - r * r / var ** 2)


def bingham_nll(quat, conc, Q, table):
    """Per-hypothesis rotation NLL and gradients w.r.t. unit mode and conc.

    The closed-form frame is linear in the mode, so V(m)^T q = J m with J
    depending on q only.
    """
    J = np.einsum("kji,bj->bik", FRAME_BASIS, Q)
    c = np.einsum("bik,bnk->bni", J, quat)
    log_f, dlog_f = table.log_norm_and_grad(conc)
    c2 = c[..., 1:] ** 2
    nll = log_f - np.sum(conc * c2, axis=-1)
    lam4 = np.concatenate([np.zeros(conc.shape[:-1] + (1,)), conc], axis=-1)
    d_mode = -2.0 * np.einsum("bni,bik->bnk", lam4 * c, J)
    return nll, d_mode, dlog_f - c2


@dataclass
class LossParts:
    loss: float
    per_sample: np.ndarray
    weights: np.ndarray  # (B, K) assignment or responsibility


def _assignment(heads, Q, T, cfg, stage, epoch):
    """(weights, winner) for the wta family."""
    d_t = np.linalg.norm(heads.trans - T[:, None, :], axis=-1)
    if stage == "translation":
        dist = d_t
    elif cfg.winner == "joint":
        dist = rotation_distance(heads.quat, Q) + d_t
    else:
        dist = rotation_distance(heads.quat, Q)
    if cfg.scheme == "ewta":
        w = _top_k(dist, ewta_k(cfg.K, epoch, cfg.ewta_interval))
    else:
        w = _relaxed(dist, cfg.effective_eps)
    return w, np.argmin(dist, axis=-1)


def loss_and_grads(model, X, Q, T, table, cfg, stage="full", epoch=0):
    """Batch-mean loss and its gradient for every parameter.

    X (B, D) features, Q (B, 4) and T (B, 3) ground truth. `epoch` only
    matters for the evolving active-set size. Raises NonFiniteLossError
    naming the first sample whose loss is not finite.
    """
    if stage not in ("translation", "full"):
        raise ConfigurationError(f"unknown stage {stage!r}")
    if model.K != cfg.K:
        raise ConfigurationError(f"model has K={model.K} but config has K={cfg.K}")
    Q = np.atleast_2d(np.asarray(Q, float))
    T = np.atleast_2d(np.asarray(T, float))
    heads, cache = _forward(model, X)
    B, K = heads.logits.shape
    full = stage == "full"

    nll_g, d_mean, d_var = gaussian_nll(heads.trans, heads.var, T)
    nll = nll_g
    if full:
        nll_b, d_mode, d_conc = bingham_nll(heads.quat, heads.conc, Q, table)
        nll = nll + nll_b

    d_logits = np.zeros((B, K))
    if cfg.scheme == "mdn":
        log_pi = log_softmax(heads.logits, axis=-1)
        a = log_pi - nll
        per_sample = -logsumexp(a, axis=-1)
        w = softmax(a, axis=-1)
        d_logits = np.exp(log_pi) - w
    elif cfg.scheme == "unimodal":
        w = np.ones((B, 1))
        per_sample = nll[:, 0]
    else:
        w, winner = _assignment(heads, Q, T, cfg, stage, epoch)
        per_sample = np.sum(w * nll, axis=-1)
        if full:
            log_pi = log_softmax(heads.logits, axis=-1)
            per_sample = per_sample - log_pi[np.arange(B), winner]
            d_logits = np.exp(log_pi)
            d_logits[np.arange(B), winner] -= 1.0

    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise NonFiniteLossError(int(bad[0]))

    # chain rule through the output nonlinearities; the batch mean gives 1/B
    scale = w / B
    g_trans = scale[..., None] * d_mean
    g_rv = scale[..., None] * d_var * expit(cache["rv"])
    g_q = np.zeros_like(heads.quat)
    g_o = np.zeros_like(heads.conc)
    if full:
        gm = scale[..., None] * d_mode
        m = heads.quat
        g_q = (gm - m * np.sum(m * gm, axis=-1, keepdims=True)) / cache["norm"]
        g_lam = scale[..., None] * d_conc * cache["unclamped"]
        g_s = -np.cumsum(g_lam[..., ::-1], axis=-1)[..., ::-1]
        g_o = g_s * expit(cache["o"])
    g_logits = d_logits / B

    grads = _backward(model, cache, g_q.reshape(B, -1), g_trans.reshape(B, -1), g_o.reshape(B, -1),
                      g_rv.reshape(B, -1), g_logits)
    return LossParts(float(np.mean(per_sample)), per_sample, w), grads


def _backward(model, cache, g_q, g_t, g_o, g_v, g_logits):
    p = model.params
    h = cache["acts"][-1]
    grads = {}
    dh = np.zeros_like(h)
    for name, g in (("q", g_q), ("t", g_t), ("l", g_o), ("v", g_v)):
        grads["W" + name] = h.T @ g
        grads["b" + name] = g.sum(axis=0)
        dh += g @ p["W" + name].T
    grads["Wp2"] = cache["hp"].T @ g_logits
    grads["bp2"] = g_logits.sum(axis=0)
    dzp = (g_logits @ p["Wp2"].T) * (cache["zp"] > 0.0)
    grads["Wp1"] = h.T @ dzp
    grads["bp1"] = dzp.sum(axis=0)
    dh += dzp @ p["Wp1"].T
    for i in reversed(range(len(model.hidden))):
        z = cache["pre"][i]
        dz = dh * np.where(z > 0.0, 1.0, model.leak)
        grads[f"W{i}"] = cache["acts"][i].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ p[f"W{i}"].T
    return grads


# --- optimization -------------------------------------------------------------------


class Optimizer:
    """Plain, momentum or Adam updates on a parameter dict."""

    def __init__(self, kind, momentum=0.9, betas=(0.9, 0.999), eps=1e-8):
        self.kind, self.momentum, self.betas, self.eps = kind, momentum, betas, eps
        self.state = {}
        self.steps = 0

    def step(self, params, grads, lr):
        self.steps += 1
        for name in sorted(grads):
            g = grads[name]
            if self.kind == "sgd":
                params[name] -= lr * g
            elif self.kind == "momentum":
                v = self.state.setdefault(name, np.zeros_like(g))
                v *= self.momentum
                v += g
                params[name] -= lr * v
            else:
                b1, b2 = self.betas
                m, v = self.state.setdefault(name, (np.zeros_like(g), np.zeros_like(g)))
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                m_hat = m / (1.0 - b1 ** self.steps)
                v_hat = v / (1.0 - b2 ** self.steps)
                params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts: stage, epoch, loss, lr[, val]
    aborted: str = ""

    @property
    def losses(self):
        return [e["loss"] for e in self.epochs]


def train(model, X, Q, T, table, cfg, val=None, val_every=0, val_fn=None):
    """Two-stage minibatch training; mutates `model` in place.

    Stage one fits translations (and their variances) only, stage two all
    heads. The learning rate decays by `cfg.lr_decay` after every epoch
    counted across both stages. Training stops early, with `aborted` set,
    when a batch loss is non-finite or exceeds `cfg.max_loss`.

    val: optional (X, Q, T) evaluated by `val_fn(model, *val)` every
    `val_every` full-stage epochs and stored in the log.
    """
    X = np.asarray(X, float)
    Q = np.asarray(Q, float)
    T = np.asarray(T, float)
    if len(X) == 0:
        raise ConfigurationError("empty training set")
    if model.K != cfg.K:
        raise ConfigurationError(f"model has K={model.K} but config has K={cfg.K}")
    if model.lam_min < table.lam_min:
        raise ConfigurationError(f"model lam_min {model.lam_min} lies outside the table range {table.lam_min}")
    order_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    opt = Optimizer(cfg.optimizer, cfg.momentum)
    out = TrainLog()
    n = len(X)
    stages = [("translation", e) for e in range(cfg.epochs_translation)]
    stages += [("full", e) for e in range(cfg.epochs_full)]
    for global_epoch, (stage, epoch) in enumerate(stages):
        lr = cfg.lr * cfg.lr_decay ** global_epoch
        perm = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb = X[idx]
            if cfg.aug_noise > 0.0:
                sigma = noise_rng.uniform(0.0, cfg.aug_noise, size=(len(idx), 1))
                xb = xb + sigma * noise_rng.standard_normal(xb.shape)
            try:
                parts, grads = loss_and_grads(model, xb, Q[idx], T[idx], table, cfg, stage, epoch)
            except NonFiniteLossError as exc:
                out.aborted = f"{stage} epoch {epoch}: non-finite loss at sample {idx[exc.sample_index]}"
                log.error("training aborted: %s", out.aborted)
                return out
            if parts.loss > cfg.max_loss:
                out.aborted = f"{stage} epoch {epoch}: loss {parts.loss:.3g} exceeds {cfg.max_loss:g}"
                log.error("training aborted: %s", out.aborted)
                return out
            opt.step(model.params, grads, lr)
            total += parts.loss * len(idx)
        entry = {"stage": stage, "epoch": epoch, "loss": total / n, "lr": lr}
        if val is not None and val_fn is not None and stage == "full" and val_every and (epoch + 1) % val_every == 0:
            entry["val"] = val_fn(model, *val)
        out.epochs.append(entry)
        log.info("%s epoch %d loss %.4f", stage, epoch, entry["loss"])
    return out


# --- checkpoints ---------------------------------------------------------------------


def checkpoint_dict(model, cfg=None, epoch=None):
    params = {}
    for name in model.param_names():
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        params[name] = {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}
    return {"format": CHECKPOINT_FORMAT, "arch": model.arch(), "config": asdict(cfg) if cfg else None,
            "epoch": epoch, "params": params}


def save_checkpoint(model, path, cfg=None, epoch=None):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model, cfg, epoch), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """(model, TrainConfig or None) from a checkpoint file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    if data.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    try:
        arch = data["arch"]
        model = MhpRegressor(int(arch["input_dim"]), int(arch["K"]), tuple(arch["hidden"]), int(arch["pi_hidden"]),
                             float(arch["leak"]), float(arch["lam_min"]), {})
        for name in model.param_names():
            entry = data["params"][name]
            arr = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
            model.params[name] = arr.reshape(entry["shape"]).astype(float)
        cfg = None
        if data.get("config"):
            cfg_dict = dict(data["config"])
            cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
            cfg = TrainConfig(**cfg_dict)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from None
    return model, cfg
