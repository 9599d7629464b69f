"""Adam training loop with step learning-rate decay."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from . import numerics as nx
from .losses import LossWeights, loss_terms
from .scoring import NormStats, norm_stats_from, score_stcs

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "l_int", "l_gd", "l_sim", "l_reg", "total", "lr"]


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 2e-4
    decay: float = 0.8
    decay_every: int = 10
    batch_size: int = 128
    epochs: int = 60
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def validate(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# settings used for the public benchmarks: (batch size, epochs)
PED2_SCHEDULE = (128, 60)
AVENUE_SCHEDULE = (128, 40)
SHANGHAITECH_SCHEDULE = (256, 40)


def learning_rate(cfg, epoch):
    """Rate used during 0-indexed ``epoch``: decays at the start of epochs 10, 20, ..."""
    return cfg.lr * cfg.decay ** (epoch // cfg.decay_every)


class Adam:
    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.tensors.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.tensors.items()}

    def step(self, lr):
        self.step_count += 1
        c1 = 1 - self.b1 ** self.step_count
        c2 = 1 - self.b2 ** self.step_count
        for n, p in self.params.tensors.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[n], self.v[n]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            upd = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= upd.astype(p.data.dtype, copy=False)


def batch_loss(params, stcs, idx, weights):
    fr, fl, target = stcs.model_inputs(idx)
    out = M.forward(params, fr, fl if params.arch.two_stream else None)
    return loss_terms(out.prediction, target, out.fea_frame, out.fea_flow, params, weights)


def train_step(params, opt, stcs, idx, weights, lr):
    """One optimizer step on the STCs ``idx``; returns the float loss terms before the step."""
    params.zero_grad()
    terms = batch_loss(params, stcs, idx, weights)
    total = float(terms["total"].data)
    if not math.isfinite(total):
        raise NonFiniteLoss(f"non-finite loss {total} on batch starting with STC {int(idx[0])}")
    nx.backward(terms["total"])
    opt.step(lr)
    return {k: float(v.data) for k, v in terms.items()}


def train(stcs, cfg, arch=None, params=None, on_epoch=None):
    """Train on an :class:`~amsrc.data.STCSet`; returns ``(params, log_rows)``.

    ``log_rows`` holds one dict per epoch with the batch-size weighted mean
    of each loss term and the learning rate used.  Batch order comes from a
    generator seeded with ``cfg.seed`` and so does parameter init.
    """
    cfg.validate()
    if len(stcs) == 0:
        raise ValueError("empty training set")
    if params is None:
        arch = arch or M.Architecture(t=stcs.t)
        params = M.init_params(arch, seed=cfg.seed)
    if params.arch.t != stcs.t:
        raise ValueError(f"model window t={params.arch.t} but STCs have t={stcs.t}")
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(params, cfg.betas, cfg.adam_eps)
    rows = []
    n = len(stcs)
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(n)
        sums = dict.fromkeys(LOG_HEADER[1:6], 0.0)
        for lo in range(0, n, cfg.batch_size):
            idx = np.sort(order[lo:lo + cfg.batch_size])
            try:
                terms = train_step(params, opt, stcs, idx, cfg.weights, lr)
            except NonFiniteLoss as e:
                raise NonFiniteLoss(f"epoch {epoch}, batch {lo // cfg.batch_size}: {e}") from None
            for k in sums:
                sums[k] += terms.get(k, 0.0) * len(idx)
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}, "lr": lr}
        rows.append(row)
        log.info("epoch %d  total %.5f  int %.5f  gd %.5f  sim %.5f  lr %.3g",
                 epoch, row["total"], row["l_int"], row["l_gd"], row["l_sim"], lr)
        if on_epoch is not None:
            on_epoch(row, params)
    return params, rows


def compute_norm_stats(params, stcs, batch_size=256):
    """Mean / std of S_f and S_p over normal training STCs."""
    if len(stcs) == 0:
        raise ValueError("empty dataset")
    s_f, s_p = score_stcs(params, stcs, batch_size)
    return norm_stats_from(s_f, s_p)


def write_loss_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_HEADER[1:]])


__all__ = ["TrainConfig", "NormStats", "Adam", "learning_rate", "train", "train_step", "compute_norm_stats",
           "write_loss_log", "NonFiniteLoss"]
