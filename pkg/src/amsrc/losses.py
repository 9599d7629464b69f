"""Training objectives: intensity, gradient, consistency, weight penalty."""

import math
from dataclasses import astuple, dataclass

from . import numerics as nx

EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    intensity: float = 1.0
    gradient: float = 1.0
    consistency: float = 1.0
    model: float = 1.0

    def __post_init__(self):
        for v in astuple(self):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weights must be finite and >= 0, got {astuple(self)}")


# per-dataset settings used for the public benchmarks
PED2_WEIGHTS = LossWeights(1, 1, 1, 1)
AVENUE_WEIGHTS = LossWeights(1, 1, 1, 1)
SHANGHAITECH_WEIGHTS = LossWeights(1, 1, 10, 1)


def intensity_loss(pred, target):
    """Mean squared pixel error."""
    return nx.mean(nx.square_diff(pred, target))


def gradient_loss(pred, target):
    """Mean absolute difference between predicted and target absolute image gradients.

    Vertical and horizontal terms are each averaged over their valid
    positions, then summed.
    """
    pred, target = nx.as_tensor(pred), nx.as_tensor(target)
    if pred.shape != target.shape:
        raise nx.ShapeMismatch(f"gradient_loss: shape mismatch {pred.shape} vs {target.shape}")
    h_axis, w_axis = pred.data.ndim - 2, pred.data.ndim - 1
    total = None
    for axis in (h_axis, w_axis):
        gp = nx.absolute(nx.spatial_diff(pred, axis))
        gt = nx.absolute(nx.spatial_diff(target, axis))
        term = nx.mean(nx.absolute(nx.sub(gp, gt)))
        total = term if total is None else nx.add(total, term)
    return total


def consistency_loss(fea_frame, fea_flow, eps=EPS):
    """Batch mean of 1 - cos(fea_frame, fea_flow)."""
    cos = nx.cosine_similarity(nx.flatten(fea_frame), nx.flatten(fea_flow), eps)
    one = nx.Tensor(cos.data.dtype.type(1))
    return nx.sub(one, nx.mean(cos))


def weight_penalty(params):
    """Mean of squared kernel entries over all conv weights (biases excluded)."""
    ws = params.weights()
    n = sum(w.data.size for w in ws)
    total = None
    for w in ws:
        s = nx.sum_all(nx.mul(w, w))
        total = s if total is None else nx.add(total, s)
    return nx.scale(total, 1.0 / n)


def loss_terms(pred, target, fea_frame, fea_flow, params, weights):
    """Individual terms ``{"l_int", "l_gd", "l_sim", "l_reg"}`` and the weighted ``"total"``.

    ``fea_flow=None`` (frame-only model) drops the consistency term.
    """
    terms = {
        "l_int": intensity_loss(pred, target),
        "l_gd": gradient_loss(pred, target),
        "l_reg": weight_penalty(params),
    }
    if fea_flow is not None:
        terms["l_sim"] = consistency_loss(fea_frame, fea_flow)
    total = None
    for key, lam in (("l_int", weights.intensity), ("l_gd", weights.gradient),
                     ("l_sim", weights.consistency), ("l_reg", weights.model)):
        if key not in terms:
            continue
        part = nx.scale(terms[key], lam)
        total = part if total is None else nx.add(total, part)
    terms["total"] = total
    return terms


def total_loss(pred, target, fea_frame, fea_flow, params, weights):
    return loss_terms(pred, target, fea_frame, fea_flow, params, weights)["total"]
