"""Bingham distribution on S^3 with a concentration-ordered frame.

Density w.r.t. the surface measure of S^3 (uniform density = 1 / (2 pi^2)):

    B(x) = exp(sum_i lambda_i (v_i^T x)^2) / F(lambda),   0 >= l1 >= l2 >= l3

where v_0 = mode and v_1..v_3 are the remaining frame columns.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EnvelopeError
from .normtable import acg_envelope
from .quat import FRAME_BASIS, canonicalize, frame_linear

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinghamParams:
    mode: np.ndarray
    conc: np.ndarray
    frame: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        mode = canonicalize(self.mode)
        conc = np.asarray(self.conc, float)
        if conc.shape != (3,):
            raise ConfigurationError("conc must hold three values")
        if not (conc[0] <= 0.0 and conc[0] >= conc[1] >= conc[2]):
            raise ConfigurationError(f"concentrations must satisfy 0 >= l1 >= l2 >= l3, got {conc}")
        object.__setattr__(self, "conc", conc)
        if self.frame is None:
            object.__setattr__(self, "mode", mode)
            object.__setattr__(self, "frame", frame_linear(mode))
        else:
            # an explicit frame (Gram-Schmidt / Cayley) defines the mode as its first column
            V = np.asarray(self.frame, float)
            object.__setattr__(self, "frame", V)
            object.__setattr__(self, "mode", canonicalize(V[:, 0]))

    @classmethod
    def from_offsets(cls, mode, l1, offsets):
        """Build from lambda_1 and the nonnegative offsets e_2, e_3."""
        e2, e3 = offsets
        if l1 > 0 or e2 < 0 or e3 < 0:
            raise ConfigurationError("need l1 <= 0 and nonnegative offsets")
        return cls(mode, [l1, l1 - e2, l1 - e2 - e3])


def projections(V, x):
    """c = V^T x, the coordinates of x in the frame (batched over leading axes)."""
    return np.einsum("...ij,...i->...j", V, x)


def log_pdf_batch(modes, conc, x, table):
    """Vectorized log density with the closed-form frame of each mode.

    modes (..., 4) unit, conc (..., 3), x (..., 4). Returns (...).
    """
    c = projections(frame_linear(modes), x)
    quad = np.sum(conc * c[..., 1:] ** 2, axis=-1)
    return quad - table.log_norm(conc)


def log_pdf(params, table, x):
    """log B(x); equals log B(-x) exactly since only squares of x enter."""
    c = projections(params.frame, np.asarray(x, float))
    return float(np.dot(params.conc, c[1:] ** 2) - table.log_norm(params.conc))


def grad_log_pdf(params, table, x):
    """Gradients of log B(x) w.r.t. the mode 4-vector and the concentrations.

    The mode gradient is taken on an unnormalized 4-vector r (evaluated at
    r = mode) and passed through the Jacobian of r / |r|, so it is tangent to
    S^3. The concentration gradient uses the derivative of the interpolated
    log F, which keeps it consistent with `log_pdf` to machine precision.
    Only defined for the closed-form frame.
    """
    x = np.asarray(x, float)
    m = params.mode
    c = projections(params.frame, x)
    lam4 = np.concatenate([[0.0], params.conc])
    # c = J m with J[i, k] = (E_k^T x)_i since the frame is linear in the mode
    J = np.einsum("kji,j->ik", FRAME_BASIS, x)
    d_mode = 2.0 * J.T @ (lam4 * c)
    d_mode = d_mode - m * np.dot(m, d_mode)
    _, dlogf = table.log_norm_and_grad(params.conc)
    d_conc = c[1:] ** 2 - dlogf
    return d_mode, d_conc


def entropy(params, table):
    """Differential entropy in nats: log F - sum_i lambda_i (dF/dl_i) / F."""
    conc = params.conc if isinstance(params, BinghamParams) else np.asarray(params, float)
    return table.log_norm(conc) - np.sum(conc * table.grad_ratios(conc), axis=-1)


def sample(params, n, seed, table=None, return_rate=False, batch=None):
    """Draw n samples by rejection from an angular central Gaussian envelope.

    `table` is accepted for call-site symmetry and unused: the sampler needs
    no normalizer. Raises EnvelopeError if fewer than 1e-4 of proposals are
    accepted.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lam4 = np.concatenate([[0.0], params.conc])
    omega, log_m = acg_envelope(params.conc)
    batch = batch or max(1024, 2 * n)
    out = []
    accepted = proposed = 0
    while accepted < n:
        y = rng.standard_normal((batch, 4)) / np.sqrt(omega)
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        # f*/(M g*) with f* = exp(x^T Lambda x), g* = (x^T Omega x)^(-2)
        log_ratio = y ** 2 @ lam4 + 2.0 * np.log(y ** 2 @ omega) - log_m
        keep = np.log(rng.uniform(size=batch)) < log_ratio
        out.append(y[keep])
        accepted += int(keep.sum())
        proposed += batch
        if proposed >= 100 * batch and accepted / proposed < 1e-4:
            raise EnvelopeError(
                f"acceptance rate {accepted / proposed:.2e} after {proposed} proposals "
                f"(conc={params.conc}, omega={omega})"
            )
    rate = accepted / proposed
    log.debug("bingham sampler acceptance rate %.3f", rate)
    y = np.concatenate(out)[:n]
    samples = canonicalize(y @ params.frame.T)
    return (samples, rate) if return_rate else samples
