"""Evaluation metrics for multi-hypothesis pose predictions.

Rotation errors are in degrees, translation errors in meters. A prediction
is a (quaternion, translation) pair, usually the weighted mode of a
PoseMixture.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .mixtures import weighted_mode
from .quat import angular_error

DEFAULT_THRESHOLDS = ((10.0, 0.1), (15.0, 0.2), (20.0, 0.3))
DEFAULT_FRACTIONS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


def pose_errors(preds, gts):
    """(d_q degrees, d_t meters) arrays for paired predictions and ground truths."""
    if len(preds) != len(gts):
        raise ConfigurationError("predictions and ground truths differ in length")
    if len(preds) == 0:
        return np.zeros(0), np.zeros(0)
    q_hat = np.array([p[0] for p in preds], float)
    t_hat = np.array([p[1] for p in preds], float)
    q = np.array([g[0] for g in gts], float)
    t = np.array([g[1] for g in gts], float)
    return angular_error(q, q_hat).reshape(-1), np.linalg.norm(t - t_hat, axis=-1).reshape(-1)


def nearest_mode_errors(preds, gt_mode_sets):
    """Errors to the closest ground-truth mode of each sample.

    The closest mode minimizes d_q (radians) + d_t, the same pose distance
    the SEMD uses.
    """
    dq, dt = [], []
    for (q_hat, t_hat), modes in zip(preds, gt_mode_sets):
        mq = np.array([m[0] for m in modes], float)
        mt = np.array([m[1] for m in modes], float)
        eq = angular_error(mq, np.asarray(q_hat, float)).reshape(-1)
        et = np.linalg.norm(mt - t_hat, axis=-1)
        k = int(np.argmin(np.radians(eq) + et))
        dq.append(eq[k])
        dt.append(et[k])
    return np.array(dq), np.array(dt)


def _recall(dq, dt, thresholds):
    return [float(np.mean((dq <= deg) & (dt <= m))) if len(dq) else 0.0 for deg, m in thresholds]


def recall_at(preds, gts, thresholds=DEFAULT_THRESHOLDS):
    """Fraction of samples with both errors within each (deg, m) threshold."""
    dq, dt = pose_errors(preds, gts)
    return _recall(dq, dt, thresholds)


def _hypothesis_errors(m, q, t):
    return angular_error(m.modes, np.asarray(q, float)).reshape(-1), np.linalg.norm(m.means - t, axis=-1)


def oracle_recall(mixtures, gts, thresholds=DEFAULT_THRESHOLDS):
    """Recall when each sample may pick its best hypothesis.

    The best hypothesis for a threshold pair minimizes max(d_q/deg, d_t/m),
    so a sample counts when any hypothesis meets both thresholds. The
    weighted-mode hypothesis is one of the candidates, so this never falls
    below recall_at.
    """
    if len(mixtures) != len(gts):
        raise ConfigurationError("mixtures and ground truths differ in length")
    errors = [_hypothesis_errors(mix, q, t) for mix, (q, t) in zip(mixtures, gts)]
    out = []
    for deg, m in thresholds:
        hits = sum(bool(np.any((eq <= deg) & (et <= m))) for eq, et in errors)
        out.append(hits / len(mixtures) if mixtures else 0.0)
    return out


def semd(m, trans_scale=1.0):
    """Cost of moving all mass onto the weighted mode.

    Transport to a single point has the closed form sum_j pi_j d(j, mode)
    with d = d_q (radians) + trans_scale * d_t.
    """
    q0, t0 = weighted_mode(m)
    eq, et = _hypothesis_errors(m, q0, t0)
    return float(np.sum(m.weights * (np.radians(eq) + trans_scale * et)))


def match_modes(mix, modes, rot_thresh_deg, trans_thresh):
    """Greedy one-to-one matching of hypotheses to ground-truth modes.

    Candidate pairs within both thresholds are taken in order of
    max(d_q/rot_thresh, d_t/trans_thresh) (ties by mode then hypothesis
    index); each hypothesis and each mode is used at most once. Returns the
    matched (mode, hypothesis) pairs.
    """
    pairs = []
    for k, (q, t) in enumerate(modes):
        eq, et = _hypothesis_errors(mix, q, t)
        score = np.maximum(eq / rot_thresh_deg, et / trans_thresh)
        for j in np.flatnonzero((eq <= rot_thresh_deg) & (et <= trans_thresh)):
            pairs.append((float(score[j]), k, int(j)))
    pairs.sort()
    used_modes, used_hyps, matched = set(), set(), []
    for _, k, j in pairs:
        if k not in used_modes and j not in used_hyps:
            used_modes.add(k)
            used_hyps.add(j)
            matched.append((k, j))
    return matched


def mode_detection(mixtures, gt_mode_sets, rot_thresh_deg=5.0, trans_frac=0.1, diameter=None):
    """Found ground-truth modes over all ground-truth modes in the dataset."""
    if diameter is None or diameter <= 0:
        raise ConfigurationError("mode detection needs a positive trajectory diameter")
    found = total = 0
    for mix, modes in zip(mixtures, gt_mode_sets):
        found += len(match_modes(mix, modes, rot_thresh_deg, trans_frac * diameter))
        total += len(modes)
    return found / total if total else 0.0


def uncertainty_curve(preds, scores, gts, fractions=DEFAULT_FRACTIONS, gt_mode_sets=None):
    """[(fraction, mean d_q, mean d_t)] after dropping the most uncertain samples.

    For each fraction f the ceil(f N) highest scores are removed; equal
    scores are removed in index order (stable sort). With gt_mode_sets the
    errors are taken to the nearest ground-truth mode.
    """
    if any(not 0.0 <= f < 1.0 for f in fractions):
        raise ConfigurationError("fractions must lie in [0, 1)")
    if gt_mode_sets is not None:
        dq, dt = nearest_mode_errors(preds, gt_mode_sets)
    else:
        dq, dt = pose_errors(preds, gts)
    n = len(dq)
    order = np.argsort(-np.asarray(scores, float), kind="stable")
    out = []
    for f in fractions:
        keep = np.sort(order[math.ceil(f * n - 1e-12):])
        out.append((float(f), float(dq[keep].mean()), float(dt[keep].mean())))
    return out


def lower_median(values):
    values = np.sort(np.asarray(values, float))
    if len(values) == 0:
        raise ConfigurationError("median of an empty list")
    return float(values[(len(values) - 1) // 2])


def median_errors(preds, gts):
    """Component-wise lower medians of (d_q, d_t)."""
    dq, dt = pose_errors(preds, gts)
    return lower_median(dq), lower_median(dt)


@dataclass
class EvalReport:
    median_rot_deg: float
    median_trans_m: float
    thresholds: list
    recall: list
    oracle_recall: list
    mean_semd: float
    mode_detection: float = None
    uncertainty_curve: list = field(default_factory=list)
    n_samples: int = 0

    def __post_init__(self):
        for r, o in zip(self.recall, self.oracle_recall):
            assert 0.0 <= r <= o <= 1.0

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self):
        """Flat rows: one per threshold, then one per curve point."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "key1", "key2", "value1", "value2"])
        w.writerow(["median", "", "", self.median_rot_deg, self.median_trans_m])
        w.writerow(["semd", "", "", self.mean_semd, ""])
        if self.mode_detection is not None:
            w.writerow(["mode_detection", "", "", self.mode_detection, ""])
        for (deg, m), r, o in zip(self.thresholds, self.recall, self.oracle_recall):
            w.writerow(["recall", deg, m, r, o])
        for f, eq, et in self.uncertainty_curve:
            w.writerow(["curve", f, "", eq, et])
        return buf.getvalue()


def evaluate(mixtures, samples, table, thresholds=DEFAULT_THRESHOLDS, fractions=DEFAULT_FRACTIONS,
             diameter=None, rot_thresh_deg=5.0, trans_frac=0.1):
    """Full report for predictions `mixtures` on SceneSample list `samples`.

    Mode detection is included when a diameter is given. The uncertainty
    curve scores each sample by the score of its weighted-mode hypothesis
    and measures errors to the nearest ground-truth mode.
    """
    from .mixtures import uncertainty_scores

    if len(mixtures) != len(samples) or not samples:
        raise ConfigurationError("need one mixture per sample and at least one sample")
    preds = [weighted_mode(m) for m in mixtures]
    gts = [(s.gt_rot, s.gt_trans) for s in samples]
    modes = [s.gt_modes or [(s.gt_rot, s.gt_trans)] for s in samples]
    med_q, med_t = median_errors(preds, gts)
    scores = [uncertainty_scores(m, table)[int(np.argmax(m.weights))] for m in mixtures]
    detection = None
    if diameter is not None:
        detection = mode_detection(mixtures, modes, rot_thresh_deg, trans_frac, diameter)
    return EvalReport(
        median_rot_deg=med_q,
        median_trans_m=med_t,
        thresholds=[list(t) for t in thresholds],
        recall=recall_at(preds, gts, thresholds),
        oracle_recall=oracle_recall(mixtures, gts, thresholds),
        mean_semd=float(np.mean([semd(m) for m in mixtures])),
        mode_detection=detection,
        uncertainty_curve=[list(p) for p in uncertainty_curve(preds, scores, gts, fractions, modes)],
        n_samples=len(samples),
    )
