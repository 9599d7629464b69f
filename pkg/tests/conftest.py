import numpy as np
import pytest

from amsrc import model as M
from amsrc import synthetic as S


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    return M.Architecture(t=4, channels=(4,), fusion="gated")


def tiny_inputs(rng, n=2, t=4, dtype=np.float32):
    fr = rng.random((n, t, 32, 32)).astype(dtype)
    fl = rng.normal(0, 2, (n, 2 * t, 32, 32)).astype(dtype)
    tg = rng.random((n, 1, 32, 32)).astype(dtype)
    return fr, fl, tg


@pytest.fixture(scope="session")
def small_synthetic():
    cfg = S.SyntheticConfig(train_clips=2, test_clips=2, frames=30, event_length=(8, 10))
    return S.generate(cfg, 3)


def sweep_auroc(scores, labels):
    """Brute-force oracle: ROC points at every distinct threshold, trapezoid area."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    xs, ys = [0.0], [0.0]
    for th in sorted(set(scores.tolist()), reverse=True):
        hit = scores >= th
        xs.append((hit & ~labels).sum() / n_neg)
        ys.append((hit & labels).sum() / n_pos)
    area = 0.0
    for k in range(1, len(xs)):
        area += (xs[k] - xs[k - 1]) * (ys[k] + ys[k - 1]) / 2
    return area


def random_auroc_instance(rng, n_max=200):
    """Scores drawn from a small value set so ties are common; both classes present."""
    n = int(rng.integers(2, n_max + 1))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    levels = int(rng.integers(1, max(2, n // 2) + 1))
    scores = rng.integers(0, levels, n) / levels + (labels * rng.random() * 0.3)
    return scores, labels


def tiny_stcset(rng, n=8, t=4):
    from amsrc import data as D

    frames = rng.random((n, t + 1, 32, 32)).astype(np.float32)
    flows = rng.normal(0, 1, (n, t, 2, 32, 32)).astype(np.float32)
    return D.STCSet(frames, flows, np.array(["c"] * n), np.arange(n), np.zeros(n, int), np.zeros(n, int))
