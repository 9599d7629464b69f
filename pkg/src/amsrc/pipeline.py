"""Directory-level train / score runs shared by the CLI and the acceptance tests."""

import logging
import time
from pathlib import Path

import numpy as np

from . import config as C
from . import data as D
from . import model as M
from . import scoring as SC
from . import training as T
from .flow import get_provider

log = logging.getLogger(__name__)


class DatasetMismatch(D.DataError):
    pass


def sidecar(path, kind):
    """``model.amck`` -> ``model.<kind>``."""
    p = Path(path)
    return p.with_name(p.stem + "." + kind)


def _frame_size(root, split):
    clips = D.list_clips(root, split)
    first = sorted((clips[0] / "frames").glob("*.png"))
    if not first:
        raise D.DataError(f"{clips[0]}: no frames")
    return list(D.load_clip(clips[0]).size)


def train_run(data_dir, ckpt, cfg):
    """Train on ``data_dir/train``; writes checkpoint, loss log, norm stats and resolved config."""
    t0 = time.time()
    provider = get_provider(cfg["data"]["flow"])
    stcs, _ = D.load_split(data_dir, "train", int(cfg["data"]["t"]), provider,
                           frame_stride=int(cfg["data"]["frame_stride"]), with_labels=False)
    log.info("loaded %d training STCs in %.1fs", len(stcs), time.time() - t0)
    params, rows = T.train(stcs, C.train_config(cfg), arch=C.architecture(cfg))
    stats = T.compute_norm_stats(params, stcs)
    ckpt = Path(ckpt)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    extra = {"config": cfg, "norm_stats": stats.__dict__, "frame_size": _frame_size(data_dir, "train")}
    M.save_checkpoint(params, ckpt, extra)
    T.write_loss_log(sidecar(ckpt, "loss.csv"), rows)
    stats.save(sidecar(ckpt, "norm.json"))
    C.dump(cfg, sidecar(ckpt, "config.yaml"))
    log.info("training finished in %.1fs", time.time() - t0)
    return params, rows, stats


def score_run(data_dir, ckpt, out_csv, weights=None, stats_path=None):
    """Score ``data_dir/test``; writes the per-frame CSV at ``out_csv`` and
    per-object scores next to it (``<stem>.objects.csv``)."""
    params, extra = M.load_checkpoint(ckpt, with_extra=True)
    cfg = extra.get("config") or C.resolve()
    weights = weights or C.score_weights(cfg)
    if stats_path is not None:
        stats = SC.NormStats.load(stats_path)
    elif "norm_stats" in extra:
        stats = SC.NormStats(**extra["norm_stats"])
    else:
        stats = SC.NormStats.load(sidecar(ckpt, "norm.json"))
    size = _frame_size(data_dir, "test")
    trained = extra.get("frame_size")
    if trained is not None and list(trained) != size:
        raise DatasetMismatch(f"checkpoint trained on {trained[0]}x{trained[1]} frames, test set has {size[0]}x{size[1]}")
    if params.arch.t != int(cfg["data"]["t"]):
        raise DatasetMismatch(f"checkpoint architecture t={params.arch.t} disagrees with its config t={cfg['data']['t']}")
    provider = get_provider(cfg["data"]["flow"])
    stcs, clips = D.load_split(data_dir, "test", params.arch.t, provider)
    s_f, s_p = SC.score_stcs(params, stcs)
    records = SC.records_from(stcs, s_f, s_p, stats, weights)
    rows = SC.frame_scores(records, clips)
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    SC.write_frame_csv(out_csv, rows)
    SC.write_object_csv(sidecar(out_csv, "objects.csv"), records)
    resolved = dict(cfg, score={"weights": [weights.w_f, weights.w_p]})
    C.dump(resolved, sidecar(out_csv, "config.yaml"))
    return records, rows


def evaluate(frame_csv):
    return SC.auroc_from_csv(frame_csv)


def object_auroc(records, labels_by_frame):
    """Object-level AUROC against the label of each object's frame (diagnostic only)."""
    y = np.array([labels_by_frame[(r.clip, r.frame)] for r in records])
    return SC.auroc([r.s for r in records], y)
