"""Lookup table for the Bingham normalizer F(Lambda) on S^3.

F(l1, l2, l3) = int_{S^3} exp(l1 x1^2 + l2 x2^2 + l3 x3^2) dx, with the
surface measure of S^3 (so F(0, 0, 0) = 2 pi^2).

Node values come from an exact 1D reduction of the integral. Writing
x = (cos a (x0, x1), sin a (x2, x3)) and integrating out both circle angles
with modified Bessel functions, then substituting u = sin^2 a, gives

    F = 2 pi^2 int_0^1 i0e(l1 (1-u) / 2) * exp(l2 u) * i0e(u (l2 - l3) / 2) du

for l2 >= l3, where i0e is the exponentially scaled Bessel I0. The
derivatives dF/dl_i follow by differentiating under the integral. A
Monte Carlo estimator with an angular central Gaussian proposal is kept as
an independent check and as an alternative build route.
"""
import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import tanhsinh
from scipy.optimize import brentq
from scipy.special import i0e, i1e

from .errors import ConfigurationError, FormatError

log = logging.getLogger(__name__)

SPHERE_AREA = 2.0 * np.pi ** 2
LOG_SPHERE_AREA = np.log(SPHERE_AREA)
MAGIC = b"BNT1"
MIN_MC_SAMPLES = 100_000


def axis_nodes(lam_min=-900.0, count=83, scale=1.0):
    """Nodes 0 > ... > lam_min, evenly spaced in log1p(|lambda| / scale).

    Spacing is ~linear near zero and geometric for large |lambda|, which is
    where log F bends like -0.5 log|lambda|.
    """
    if not lam_min < 0.0:
        raise ConfigurationError(f"lam_min must be negative, got {lam_min}")
    if count < 2:
        raise ConfigurationError(f"need at least 2 nodes per axis, got {count}")
    if scale <= 0.0:
        raise ConfigurationError("scale must be positive")
    s = np.linspace(0.0, np.log1p(-lam_min / scale), count)
    nodes = -scale * np.expm1(s)
    nodes[0] = 0.0
    nodes[-1] = lam_min
    return nodes


def _integrand(u, a, b, c, which):
    # a: the lambda paired with the mode coordinate; b >= c share the other circle.
    z = a * (1.0 - u) / 2.0
    w = u * (b - c) / 2.0
    A = i0e(z)
    growth = np.exp(b * u)
    B = growth * i0e(w)
    dA = (1.0 - u) / 2.0 * (i0e(z) + i1e(z))  # z <= 0
    dB_w = growth * (i1e(w) - i0e(w)) * u / 2.0  # w >= 0
    return np.select(
        [which == 0, which == 1, which == 2],
        [A * B, dA * B, A * (u * B + dB_w)],
        A * (-dB_w),
    )


def normalizer_quadrature(conc, rtol=1e-12):
    """Exact F and dF/dlambda_i at one or many concentration triples.

    conc: array (..., 3) of nonpositive values, any order.
    Returns (F, dF) with shapes (...) and (..., 3).
    """
    conc = np.asarray(conc, float)
    if np.any(conc > 0.0):
        raise ConfigurationError("concentrations must be <= 0")
    flat = conc.reshape(-1, 3)
    order = np.argsort(-flat, axis=1, kind="stable")  # descending
    srt = np.take_along_axis(flat, order, axis=1)
    a, b, c = srt[:, 0], srt[:, 1], srt[:, 2]
    which = np.arange(4)[:, None]
    res = tanhsinh(_integrand, 0.0, 1.0, args=(a[None], b[None], c[None], which), rtol=rtol)
    if np.any(res.status != 0):
        bad = np.flatnonzero(np.any(res.status != 0, axis=0))
        raise ConfigurationError(f"quadrature failed for triples {flat[bad[:5]]}")
    vals = SPHERE_AREA * res.integral
    F = vals[0]
    grad_sorted = vals[1:].T
    grad = np.empty_like(grad_sorted)
    np.put_along_axis(grad, order, grad_sorted, axis=1)
    return F.reshape(conc.shape[:-1]), grad.reshape(conc.shape)


def acg_envelope(conc):
    """Angular central Gaussian envelope for a Bingham density in its own frame.

    With A = -diag(0, l1, l2, l3) (so the density is exp(-x^T A x)), solve
    sum_i 1 / (b + 2 a_i) = 1 for b and set Omega = I + 2 A / b. Returns
    (omega_diag, log_M) where M bounds f*/g* (Kent, Ganeiber & Mardia 2013).
    """
    a = -np.concatenate([[0.0], np.asarray(conc, float)])
    q = 4.0
    if np.all(a == 0.0):
        b = q
    else:
        b = brentq(lambda t: np.sum(1.0 / (t + 2.0 * a)) - 1.0, 1e-12, q, xtol=1e-14)
    omega = 1.0 + 2.0 * a / b
    log_m = -(q - b) / 2.0 + (q / 2.0) * np.log(q / b)
    return omega, log_m


def normalizer_mc(conc, n, seed, proposal="acg"):
    """Monte Carlo estimate of F(conc) with its standard error.

    proposal="uniform" averages the integrand over uniform S^3 draws;
    proposal="acg" importance-samples from the angular central Gaussian that
    also serves as the rejection envelope, which stays accurate at high
    concentration. Also returns the self-normalized estimates of
    E[x_i^2] = (dF/dl_i) / F.
    """
    conc = np.asarray(conc, float)
    rng = np.random.default_rng(seed)
    lam4 = np.concatenate([[0.0], conc])
    if proposal == "uniform":
        x = rng.standard_normal((n, 4))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        w = SPHERE_AREA * np.exp(x ** 2 @ lam4)
    elif proposal == "acg":
        omega, _ = acg_envelope(conc)
        y = rng.standard_normal((n, 4)) / np.sqrt(omega)
        x = y / np.linalg.norm(y, axis=1, keepdims=True)
        log_g = 0.5 * np.sum(np.log(omega)) - 2.0 * np.log(x ** 2 @ omega) - LOG_SPHERE_AREA
        w = np.exp(x ** 2 @ lam4 - log_g)
    else:
        raise ConfigurationError(f"unknown proposal {proposal!r}")
    F = w.mean()
    se = w.std(ddof=1) / np.sqrt(n)
    ratios = (w[:, None] * x[:, 1:] ** 2).sum(axis=0) / w.sum()
    return F, se, ratios


def warp(lam):
    """Interpolation coordinate -log1p(-lambda); monotone and 0 at 0."""
    return -np.log1p(-np.asarray(lam, float))


def _trilinear(axes, arrays, conc):
    """Interpolate stacked arrays (m, n1, n2, n3) at conc (N, 3).

    Returns values (m, N) and derivatives d/dlambda (m, N, 3).
    """
    N = conc.shape[0]
    idx, frac, width = [], [], []
    for k in range(3):
        p = -axes[k]  # increasing from 0
        x = -conc[:, k]
        i = np.clip(np.searchsorted(p, x, side="right") - 1, 0, len(p) - 2)
        h = p[i + 1] - p[i]
        idx.append(i)
        frac.append((x - p[i]) / h)
        width.append(h)
    m = arrays.shape[0]
    value = np.zeros((m, N))
    dval = np.zeros((m, N, 3))
    for c0 in (0, 1):
        for c1 in (0, 1):
            for c2 in (0, 1):
                corner = arrays[:, idx[0] + c0, idx[1] + c1, idx[2] + c2]
                ws = [frac[k] if ck else 1.0 - frac[k] for k, ck in enumerate((c0, c1, c2))]
                value += corner * (ws[0] * ws[1] * ws[2])
                for k, ck in enumerate((c0, c1, c2)):
                    others = np.prod([ws[j] for j in range(3) if j != k], axis=0)
                    sign = 1.0 if ck else -1.0
                    # d frac / d lambda = -1 / h
                    dval[:, :, k] += corner * others * (-sign / width[k])
    return value, dval


@dataclass(frozen=True)
class NormTable:
    """Dense grid of log F and (dF/dl_i)/F over three lambda axes.

    Values between nodes are trilinear in warp(lambda) along each axis.

    axes: three arrays, each strictly decreasing from 0.
    log_f: (n1, n2, n3); grad_ratio: (3, n1, n2, n3);
    log_f_se: per-node standard error of log F (not persisted to disk).
    """

    axes: tuple
    log_f: np.ndarray
    grad_ratio: np.ndarray
    mc_samples: int = MIN_MC_SAMPLES
    seed: int = 0
    log_f_se: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for ax in self.axes:
            if ax[0] != 0.0 or np.any(np.diff(ax) >= 0.0):
                raise ConfigurationError("table axes must start at 0 and strictly decrease")
        shape = tuple(len(ax) for ax in self.axes)
        if self.log_f.shape != shape or self.grad_ratio.shape != (3,) + shape:
            raise ConfigurationError("table arrays do not match axis lengths")
        if not np.all(np.isfinite(self.log_f)):
            raise ConfigurationError("log F must be finite at every node")

    @property
    def lam_min(self):
        return max(ax[-1] for ax in self.axes)

    def clamp(self, conc, warn=True):
        conc = np.asarray(conc, float)
        lo = np.array([ax[-1] for ax in self.axes])
        out = np.clip(conc, lo, 0.0)
        if warn and np.any(out != conc):
            log.warning("concentration outside table range clamped to [%s, 0]", lo)
        return out

    def _eval(self, arrays, conc):
        # Interpolate in u = -log1p(-lambda): log F ~ -0.5 log|lambda| is close
        # to linear there, so the error is several times smaller than in lambda.
        conc = np.asarray(conc, float)
        flat = self.clamp(conc.reshape(-1, 3))
        value, dval = _trilinear(tuple(warp(ax) for ax in self.axes), arrays, warp(flat))
        dval = dval / (1.0 - flat)
        return value, dval, conc.shape[:-1]

    def log_norm(self, conc):
        """log F, trilinear in the warped coordinates of each axis."""
        value, _, shape = self._eval(self.log_f[None], conc)
        return value[0].reshape(shape)

    def log_norm_and_grad(self, conc):
        """log F and the exact derivative of the interpolant w.r.t. lambda."""
        value, dval, shape = self._eval(self.log_f[None], conc)
        return value[0].reshape(shape), dval[0].reshape(shape + (3,))

    def grad_ratios(self, conc):
        """Interpolated (dF/dl_i) / F = E[(v_i^T x)^2], shape (..., 3)."""
        value, _, shape = self._eval(self.grad_ratio, conc)
        return np.moveaxis(value, 0, -1).reshape(shape + (3,))

    def node_se(self, conc):
        """Standard error of log F propagated through the interpolation weights."""
        if self.log_f_se is None:
            return np.zeros(np.shape(conc)[:-1])
        value, _, shape = self._eval(self.log_f_se[None] ** 2, conc)
        return np.sqrt(value[0]).reshape(shape)

    # --- binary format -------------------------------------------------

    def to_bytes(self):
        shape = self.log_f.shape
        header = MAGIC + struct.pack("<3I", *shape)
        header += b"".join(np.asarray(ax, "<f8").tobytes() for ax in self.axes)
        header += struct.pack("<QQ", int(self.mc_samples), int(self.seed))
        payload = np.ascontiguousarray(self.log_f, "<f8").tobytes()
        payload += b"".join(np.ascontiguousarray(g, "<f8").tobytes() for g in self.grad_ratio)
        return header + payload + struct.pack("<I", zlib.crc32(payload))

    @classmethod
    def from_bytes(cls, blob):
        if blob[:4] != MAGIC:
            raise FormatError("not a norm table (bad magic)")
        try:
            n = struct.unpack_from("<3I", blob, 4)
            off = 16
            axes = []
            for k in range(3):
                axes.append(np.frombuffer(blob, "<f8", n[k], off).astype(float))
                off += 8 * n[k]
            mc_samples, seed = struct.unpack_from("<QQ", blob, off)
            off += 16
            size = n[0] * n[1] * n[2]
            payload = blob[off:off + 32 * size]
            (crc,) = struct.unpack_from("<I", blob, off + 32 * size)
        except struct.error as exc:
            raise FormatError(f"truncated norm table: {exc}") from None
        if len(payload) != 32 * size or len(blob) != off + 32 * size + 4:
            raise FormatError("norm table size does not match its header")
        if zlib.crc32(payload) != crc:
            raise FormatError("norm table CRC mismatch")
        arr = np.frombuffer(payload, "<f8").astype(float).reshape((4,) + tuple(n))
        return cls(tuple(axes), arr[0].copy(), arr[1:].copy(), mc_samples, seed)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def build_norm_table(axes=None, mc_samples=MIN_MC_SAMPLES, seed=0, method="quadrature"):
    """Tabulate log F and its gradient ratios on the product grid.

    axes: three node arrays (or None for the default grid on every axis).
    method: "quadrature" (exact 1D reduction) or "mc" (ACG importance
    sampling with one RNG stream per node, derived from (seed, node index)).
    Values at unordered nodes are filled from their sorted counterpart since
    F is symmetric under permuting lambdas.
    """
    if axes is None:
        axes = (axis_nodes(),) * 3
    axes = tuple(np.asarray(ax, float) for ax in axes)
    if len(axes) != 3:
        raise ConfigurationError("need exactly three axes")
    for ax in axes:
        if ax.ndim != 1 or len(ax) < 2 or ax[0] != 0.0 or np.any(np.diff(ax) >= 0):
            raise ConfigurationError("each axis needs >= 2 nodes, starting at 0 and strictly decreasing")
    if mc_samples < MIN_MC_SAMPLES:
        raise ConfigurationError(f"mc_samples must be >= {MIN_MC_SAMPLES}")

    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    order = np.argsort(-grid, axis=1, kind="stable")
    srt = np.take_along_axis(grid, order, axis=1)
    uniq, inverse = np.unique(srt, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    if method == "quadrature":
        F, dF = normalizer_quadrature(uniq)
        log_f_u = np.log(F)
        ratio_u = dF / F[:, None]
        se_u = np.zeros_like(log_f_u)
    elif method == "mc":
        log_f_u = np.empty(len(uniq))
        se_u = np.empty(len(uniq))
        ratio_u = np.empty((len(uniq), 3))
        for i, lam in enumerate(uniq):
            F, se, ratios = normalizer_mc(lam, mc_samples, np.random.SeedSequence([seed, i]))
            log_f_u[i] = np.log(F)
            se_u[i] = se / F
            ratio_u[i] = ratios
    else:
        raise ConfigurationError(f"unknown build method {method!r}")

    shape = tuple(len(ax) for ax in axes)
    ratio_sorted = ratio_u[inverse]
    ratio = np.empty_like(ratio_sorted)
    np.put_along_axis(ratio, order, ratio_sorted, axis=1)
    return NormTable(
        axes=axes,
        log_f=log_f_u[inverse].reshape(shape),
        grad_ratio=np.moveaxis(ratio, 1, 0).reshape((3,) + shape),
        mc_samples=mc_samples,
        seed=seed,
        log_f_se=se_u[inverse].reshape(shape),
    )
