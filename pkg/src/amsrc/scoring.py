"""Anomaly scores per object and per frame, and frame-level AUROC."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import model as M
from .losses import EPS

log = logging.getLogger(__name__)

STD_FLOOR = 1e-12
OBJECT_HEADER = ["clip", "frame", "object_id", "s_f", "s_p", "s_fused"]
FRAME_HEADER = ["clip", "frame", "score", "label"]


class UndefinedAUROC(ValueError):
    pass


@dataclass
class NormStats:
    u_f: float
    delta_f: float
    u_p: float
    delta_p: float

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ScoreWeights:
    w_f: float
    w_p: float

    def __post_init__(self):
        if not (self.w_f >= 0 and self.w_p >= 0 and math.isfinite(self.w_f) and math.isfinite(self.w_p)):
            raise ValueError(f"score weights must be finite and >= 0, got ({self.w_f}, {self.w_p})")
        if self.w_f == 0 and self.w_p == 0:
            raise ValueError("score weights must not both be zero")


PED2_SCORE_WEIGHTS = ScoreWeights(1.0, 0.01)
AVENUE_SCORE_WEIGHTS = ScoreWeights(0.2, 0.8)
SHANGHAITECH_SCORE_WEIGHTS = ScoreWeights(0.4, 0.6)


@dataclass
class ScoreRecord:
    clip: str
    frame: int
    object_id: int | None
    s_f: float
    s_p: float
    s: float


# ---------------------------------------------------------------------------
# per-object scores
# ---------------------------------------------------------------------------


def _inconsistency(fea_frame, fea_flow):
    a = fea_frame.reshape(fea_frame.shape[0], -1).astype(np.float64)
    b = fea_flow.reshape(fea_flow.shape[0], -1).astype(np.float64)
    cos = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + EPS)
    return 1.0 - cos


def batch_scores(params, frame_in, flow_in, target):
    """(S_f, S_p) arrays for a batch of STC inputs.

    S_f is 1 - cos between the bottleneck features (0 for the frame-only
    variant, which has no motion feature).  S_p is the mean squared error of
    the prediction clamped to [0, 1].
    """
    out = M.forward(params, frame_in, flow_in)
    n = frame_in.shape[0]
    if out.fea_flow is None:
        s_f = np.zeros(n)
    else:
        s_f = _inconsistency(out.fea_frame.data, out.fea_flow.data)
    pred = np.clip(out.prediction.data.astype(np.float64), 0.0, 1.0)
    s_p = ((pred - target.astype(np.float64)) ** 2).reshape(n, -1).mean(1)
    return s_f, s_p


def object_scores(params, stc):
    """(S_f, S_p) for a single STC."""
    t = stc.flows.shape[0]
    fr = stc.frames[None, :t]
    fl = stc.flows.reshape(1, 2 * t, *stc.flows.shape[-2:])
    s_f, s_p = batch_scores(params, fr, fl, stc.frames[None, t:t + 1])
    return float(s_f[0]), float(s_p[0])


def score_stcs(params, stcs, batch_size=256):
    """(S_f, S_p) for every STC of an :class:`~amsrc.data.STCSet`."""
    s_f = np.empty(len(stcs))
    s_p = np.empty(len(stcs))
    for lo in range(0, len(stcs), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(stcs)))
        s_f[idx], s_p[idx] = batch_scores(params, *stcs.model_inputs(idx))
    return s_f, s_p


def norm_stats_from(s_f, s_p):
    """Population mean / std of both components, std floored at 1e-12."""
    s_f = np.asarray(s_f, dtype=np.float64)
    s_p = np.asarray(s_p, dtype=np.float64)
    if s_f.size == 0 or s_p.size == 0:
        raise ValueError("cannot compute normalization statistics from an empty sample")
    vals = []
    for name, x in (("f", s_f), ("p", s_p)):
        mu, sd = float(x.mean()), float(x.std())
        if sd < STD_FLOOR:
            log.warning("std of S_%s is %.3g; using floor %.0e", name, sd, STD_FLOOR)
            sd = STD_FLOOR
        vals += [mu, sd]
    return NormStats(*vals)


def fuse_score(s_f, s_p, stats, weights):
    """w_f * z(S_f) + w_p * z(S_p) with the training-set statistics; works on scalars or arrays."""
    return weights.w_f * (s_f - stats.u_f) / stats.delta_f + weights.w_p * (s_p - stats.u_p) / stats.delta_p


# ---------------------------------------------------------------------------
# per-frame aggregation
# ---------------------------------------------------------------------------


def frame_score(fused_scores, empty_value=None):
    """Max over the objects of one frame; ``empty_value`` when there are none."""
    fused_scores = list(fused_scores)
    if not fused_scores:
        return empty_value
    return max(fused_scores)


def frame_scores(records, clips):
    """Per-frame scores for every frame of every clip.

    ``clips`` maps clip id -> (n_frames, labels or None).  Frames without
    objects get the minimum fused score over all records.  Returns rows of
    ``(clip, frame, score, label)`` ordered by clip then frame.
    """
    by_frame = {}
    for r in records:
        by_frame.setdefault((r.clip, r.frame), []).append(r.s)
    floor = min((r.s for r in records), default=0.0)
    rows = []
    for clip in sorted(clips):
        n, labels = clips[clip]
        for f in range(n):
            score = frame_score(by_frame.get((clip, f), ()), floor)
            rows.append((clip, f, float(score), None if labels is None else int(labels[f])))
    return rows


def records_from(stcs, s_f, s_p, stats, weights):
    fused = fuse_score(np.asarray(s_f), np.asarray(s_p), stats, weights)
    return [ScoreRecord(str(c), int(f), int(o), float(a), float(b), float(s))
            for c, f, o, a, b, s in zip(stcs.clip_ids, stcs.frame_idx, stcs.object_ids, s_f, s_p, fused)]


# ---------------------------------------------------------------------------
# AUROC
# ---------------------------------------------------------------------------


def auroc(scores, labels):
    """Rank-based (Mann-Whitney) AUROC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUROC("AUROC needs both positive and negative labels")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(s.size)
    # average 1-based rank within each run of equal scores
    starts = np.r_[0, np.flatnonzero(np.diff(s)) + 1]
    ends = np.r_[starts[1:], s.size]
    for a, b in zip(starts, ends):
        ranks[a:b] = 0.5 * (a + 1 + b)
    rank_pos = ranks[labels[order]].sum()
    return float((rank_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# CSV io
# ---------------------------------------------------------------------------


def write_object_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBJECT_HEADER)
        for r in records:
            w.writerow([r.clip, r.frame, "" if r.object_id is None else r.object_id,
                        repr(r.s_f), repr(r.s_p), repr(r.s)])


def read_object_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [ScoreRecord(r["clip"], int(r["frame"]), int(r["object_id"]) if r["object_id"] else None,
                        float(r["s_f"]), float(r["s_p"]), float(r["s_fused"])) for r in rows]


def write_frame_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_HEADER)
        for clip, f, score, label in rows:
            w.writerow([clip, f, repr(score), "" if label is None else label])


def read_frame_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != FRAME_HEADER:
            raise ValueError(f"{path}: expected header {','.join(FRAME_HEADER)}, got {header}")
        return [(c, int(f), float(s), int(l) if l != "" else None) for c, f, s, l in r]


def auroc_from_csv(path):
    rows = [r for r in read_frame_csv(path) if r[3] is not None]
    return auroc([r[2] for r in rows], [r[3] for r in rows])
