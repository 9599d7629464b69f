import logging
import math

import numpy as np
import pytest
from conftest import random_auroc_instance, sweep_auroc, tiny_inputs, tiny_stcset
from hypothesis import given, settings
from hypothesis import strategies as st

from amsrc import model as M
from amsrc import scoring as SC


def test_identical_features_give_zero_inconsistency(rng):
    v = rng.random((3, 4, 2, 2)) + 0.1
    assert np.allclose(SC._inconsistency(v, v), 0, atol=1e-6)


def test_perfect_prediction_gives_zero_s_p(rng):
    p = M.init_params(M.Architecture(channels=(4,)), seed=0)
    fr, fl, _ = tiny_inputs(rng)
    target = np.clip(M.forward(p, fr, fl).prediction.data, 0, 1)
    _, s_p = SC.batch_scores(p, fr, fl, target)
    assert np.all(s_p == 0)


def test_s_p_uses_clamped_prediction(rng):
    p = M.init_params(M.Architecture(channels=(4,)), seed=0)
    for t in p.tensors.values():
        t.data[...] = 0
    p["out.b"].data[...] = 3.0  # prediction constant 3, clamped to 1
    fr, fl, _ = tiny_inputs(rng, n=1)
    _, s_p = SC.batch_scores(p, fr, fl, np.zeros((1, 1, 32, 32)))
    assert s_p[0] == 1.0


def test_baseline_has_zero_s_f(rng):
    p = M.init_params(M.Architecture(channels=(4,), fusion="none"), seed=0)
    fr, fl, tg = tiny_inputs(rng)
    s_f, _ = SC.batch_scores(p, fr, None, tg)
    assert not s_f.any()


def test_object_scores_match_batch(rng):
    p = M.init_params(M.Architecture(channels=(4,)), seed=0)
    stcs = tiny_stcset(rng, n=5)
    s_f, s_p = SC.score_stcs(p, stcs, batch_size=2)
    from amsrc import data as D

    one = D.STC(stcs.frames[3], stcs.flows[3], "c", 3, 0)
    a, b = SC.object_scores(p, one)
    assert a == pytest.approx(s_f[3], rel=1e-6) and b == pytest.approx(s_p[3], rel=1e-6)


# --- normalization and fusion ---------------------------------------------------


def test_norm_stats_population_std():
    st_ = SC.norm_stats_from([1, 2, 3], [5, 5, 6])
    assert st_.u_f == 2 and st_.delta_f == pytest.approx(math.sqrt(2 / 3), abs=1e-12)


def test_norm_stats_floor_warns(caplog):
    with caplog.at_level(logging.WARNING):
        st_ = SC.norm_stats_from([1, 2], [0.3, 0.3, 0.3])
    assert st_.delta_p == SC.STD_FLOOR
    assert "floor" in caplog.text


def test_norm_stats_json_roundtrip(tmp_path):
    s = SC.NormStats(0.1, 0.2, 0.3, 0.4)
    s.save(tmp_path / "n.json")
    assert SC.NormStats.load(tmp_path / "n.json") == s


def test_fuse_examples():
    stats = SC.NormStats(0.5, 0.25, 0.02, 0.01)
    assert SC.fuse_score(0.5, 0.02, stats, SC.ScoreWeights(0.2, 0.8)) == 0
    assert SC.fuse_score(0.75, 123.0, stats, SC.ScoreWeights(1, 0)) == 1


def test_score_weight_presets_and_validation():
    assert SC.PED2_SCORE_WEIGHTS == SC.ScoreWeights(1, 0.01)
    assert SC.AVENUE_SCORE_WEIGHTS == SC.ScoreWeights(0.2, 0.8)
    assert SC.SHANGHAITECH_SCORE_WEIGHTS == SC.ScoreWeights(0.4, 0.6)
    for bad in [(0, 0), (-1, 1), (math.nan, 1)]:
        with pytest.raises(ValueError):
            SC.ScoreWeights(*bad)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(0.1, 10), st.floats(-5, 5))
def test_frame_argmax_invariant_under_affine(scores, a, b):
    scores = np.array(scores)
    moved = a * scores + b
    assert moved[np.argmax(scores)] == moved.max()


def test_fuse_is_affine(rng):
    stats = SC.NormStats(*rng.random(4) + 0.1)
    w = SC.ScoreWeights(0.4, 0.6)
    f, p = rng.random(2), rng.random(2)
    mid = SC.fuse_score(f.mean(), p.mean(), stats, w)
    assert mid == pytest.approx(SC.fuse_score(f, p, stats, w).mean())


# --- frame aggregation ----------------------------------------------------------


def test_frame_score_examples():
    assert SC.frame_score([0.1, 0.7, 0.3]) == 0.7
    assert SC.frame_score([0.5]) == 0.5
    assert SC.frame_score([], -1.2) == -1.2


def test_frame_scores_sentinel_is_global_min():
    recs = [SC.ScoreRecord("a", 1, 0, 0, 0, 0.4), SC.ScoreRecord("a", 1, 1, 0, 0, 0.9),
            SC.ScoreRecord("b", 0, 0, 0, 0, -1.2)]
    rows = SC.frame_scores(recs, {"a": (3, [0, 1, 0]), "b": (2, None)})
    assert rows == [("a", 0, -1.2, 0), ("a", 1, 0.9, 1), ("a", 2, -1.2, 0), ("b", 0, -1.2, None), ("b", 1, -1.2, None)]


# --- AUROC ----------------------------------------------------------------------


def test_auroc_examples():
    assert SC.auroc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert SC.auroc([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0]) == 0.0
    assert SC.auroc([0.5, 0.5], [1, 0]) == 0.5


def test_auroc_undefined_and_shape():
    with pytest.raises(SC.UndefinedAUROC):
        SC.auroc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        SC.auroc([0.1, 0.2], [1])


def test_auroc_matches_sweep_oracle():
    r = np.random.default_rng(50)
    for _ in range(50):
        s, l = random_auroc_instance(r, n_max=50)
        assert SC.auroc(s, l) == pytest.approx(sweep_auroc(s, l), abs=1e-9)


def test_auroc_invariant_under_increasing_transform():
    r = np.random.default_rng(51)
    for _ in range(20):
        s, l = random_auroc_instance(r, n_max=60)
        base = SC.auroc(s, l)
        for g in (np.exp, lambda x: 3 * x - 7, lambda x: x ** 3, np.arctan):
            assert SC.auroc(g(s), l) == pytest.approx(base, abs=1e-12)


# --- CSV ------------------------------------------------------------------------


def test_csv_headers_and_roundtrip(tmp_path):
    recs = [SC.ScoreRecord("a", 4, 2, 0.125, 0.5, -0.75)]
    SC.write_object_csv(tmp_path / "o.csv", recs)
    assert (tmp_path / "o.csv").read_text().splitlines()[0] == "clip,frame,object_id,s_f,s_p,s_fused"
    assert SC.read_object_csv(tmp_path / "o.csv") == recs
    rows = [("a", 0, 0.1, 0), ("a", 1, 0.9, 1), ("b", 0, 0.3, None)]
    SC.write_frame_csv(tmp_path / "f.csv", rows)
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "clip,frame,score,label"
    assert SC.read_frame_csv(tmp_path / "f.csv") == rows
    assert SC.auroc_from_csv(tmp_path / "f.csv") == 1.0


def test_frame_csv_bad_header(tmp_path):
    (tmp_path / "f.csv").write_text("clip,frame,s,label\n")
    with pytest.raises(ValueError):
        SC.read_frame_csv(tmp_path / "f.csv")
