"""Acceptance criteria, one test per criterion.

Each test writes a single ``[acceptance] cN PASS|FAIL ...`` line to the
terminal, so ``pytest -v`` output doubles as the acceptance report.  The
end-to-end, ablation and determinism criteria train real models and take
a while; they are marked ``slow`` but run by default.
"""

import contextlib
import functools
import io
import time

import numpy as np
import pytest
from conftest import random_auroc_instance, sweep_auroc

from amsrc import cli
from amsrc import flow as F
from amsrc import losses as L
from amsrc import model as M
from amsrc import numerics as nx
from amsrc import pipeline as P
from amsrc import scoring as SC


@pytest.fixture
def emit(pytestconfig):
    tr = pytestconfig.pluginmanager.get_plugin("terminalreporter")

    def write(line):
        if tr is not None:
            tr.write_line(line)
        else:
            print(line)

    return write


def criterion(number, title):
    """Run the body; report PASS with the returned detail, or FAIL with the assertion message."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(emit, *args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except pytest.skip.Exception as e:
                emit(f"[acceptance] c{number} SKIP  {title}: {e}")
                raise
            except Exception as e:
                msg = " ".join(str(e).split())[:300]
                emit(f"[acceptance] c{number} FAIL  {title}: {type(e).__name__}: {msg}")
                raise
            emit(f"[acceptance] c{number} PASS  {title}: {detail}")

        # pytest resolves fixtures from the signature: add `emit` to the wrapped one
        import inspect

        sig = inspect.signature(fn)
        params = [inspect.Parameter("emit", inspect.Parameter.POSITIONAL_OR_KEYWORD)] + list(sig.parameters.values())
        wrapper.__signature__ = sig.replace(parameters=params)
        return wrapper

    return deco


# ---------------------------------------------------------------------------
# 1. published numbers
# ---------------------------------------------------------------------------


@criterion(1, "published benchmark AUROCs")
def test_c1_published_numbers_status():
    pytest.skip("not reproducible at desk scale (full datasets and GPU-scale training); "
                "substituted by criteria 2-9")


# ---------------------------------------------------------------------------
# 2. gradient correctness through a 1-block model
# ---------------------------------------------------------------------------


@criterion(2, "analytic vs central-difference gradients, 1-block model, 5 batches")
def test_c2_gradients():
    t0 = time.time()
    worst = {}
    kink_frac = 0.0
    probed = 0
    for seed in range(5):
        r = np.random.default_rng(seed)
        params = M.init_params(M.Architecture(t=4, channels=(4,)), seed=seed, dtype=np.float64)
        fr = r.random((2, 4, 32, 32))
        fl = r.normal(0, 1, (2, 8, 32, 32))
        tg = r.random((2, 1, 32, 32))
        for term in ("l_int", "l_gd", "l_sim", "total"):
            def f(_, term=term):
                out = M.forward(params, fr, fl)
                return L.loss_terms(out.prediction, tg, out.fea_frame, out.fea_flow, params, L.LossWeights())[term]

            rep = nx.finite_diff_check(f, params.tensors, tol=1e-4, max_entries=48, rng=np.random.default_rng(seed))
            worst[term] = max(worst.get(term, 0.0), rep.max_error)
            kink_frac = max(kink_frac, rep.kink_fraction)
            probed += sum(rep.checked.values())
            assert rep.passed, f"seed {seed} {term}: {rep.errors}"
    elapsed = time.time() - t0
    # excluded kink entries must stay rare or the check would be vacuous
    assert kink_frac < 0.05, f"kink fraction {kink_frac:.3f}"
    assert elapsed <= 60, f"took {elapsed:.1f}s"
    errs = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    return f"max rel err {errs}; {probed} entries; max kink fraction {kink_frac:.3f}; {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 3. gated fusion identities
# ---------------------------------------------------------------------------


@criterion(3, "gated fusion identities over 100 random pairs")
def test_c3_gated_fusion():
    r = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        shape = (int(r.integers(1, 4)), int(r.integers(1, 17)), 4, 4)
        f = r.normal(0, 3, shape).astype(np.float32)
        m = np.abs(r.normal(0, 3, shape)).astype(np.float32)
        assert np.array_equal(M.gated_fusion(f, np.zeros_like(m)).data, f)
        got = M.gated_fusion(np.zeros_like(f), m).data
        worst = max(worst, float(np.abs(got - 0.5 * m).max()))
    assert worst <= 1e-6
    return f"f(f,0)==f exact; max |f(0,m)-0.5m| = {worst:.1e}"


# ---------------------------------------------------------------------------
# 4. consistency loss
# ---------------------------------------------------------------------------


@criterion(4, "consistency-loss properties")
def test_c4_consistency():
    r = np.random.default_rng(4)
    lo, hi, same, scale_dev, orth_dev = 2.0, 0.0, 0.0, 0.0, 0.0
    for _ in range(200):
        d = int(r.integers(2, 64))
        a = r.normal(0, 1, (3, d))
        b = r.normal(0, 1, (3, d))
        v = float(L.consistency_loss(a, b).data)
        lo, hi = min(lo, v), max(hi, v)
        same = max(same, abs(float(L.consistency_loss(a, a).data)))
        c = float(np.exp(r.uniform(-3, 3)))
        scale_dev = max(scale_dev, abs(float(L.consistency_loss(a, c * b).data) - v))
        # orthogonal partner by Gram-Schmidt
        q = b - (np.sum(a * b, 1, keepdims=True) / np.sum(a * a, 1, keepdims=True)) * a
        orth_dev = max(orth_dev, abs(float(L.consistency_loss(a, q).data) - 1.0))
    assert 0 <= lo and hi <= 2
    assert same <= 1e-6 and scale_dev <= 1e-6 and orth_dev <= 1e-6
    return (f"range [{lo:.3f}, {hi:.3f}]; identical {same:.1e}; scale dev {scale_dev:.1e}; "
            f"orthogonal dev {orth_dev:.1e}")


# ---------------------------------------------------------------------------
# 5. AUROC vs threshold sweep
# ---------------------------------------------------------------------------


@criterion(5, "rank AUROC equals threshold-sweep trapezoid, 1000 instances")
def test_c5_auroc_oracle():
    r = np.random.default_rng(5)
    worst, tied = 0.0, 0
    for _ in range(1000):
        s, lab = random_auroc_instance(r, n_max=200)
        tied += len(np.unique(s)) < len(s)
        worst = max(worst, abs(SC.auroc(s, lab) - sweep_auroc(s, lab)))
    assert worst <= 1e-9
    assert tied > 500
    return f"max |diff| {worst:.1e}; {tied} instances with ties"


# ---------------------------------------------------------------------------
# 6-8. trained models on the seed-7 synthetic dataset
# ---------------------------------------------------------------------------


def _cli(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli.main([str(a) for a in argv])
    assert code == 0, f"amsrc {' '.join(map(str, argv))} exited {code}"
    return buf.getvalue()


@pytest.fixture(scope="session")
def seed7(tmp_path_factory):
    root = tmp_path_factory.mktemp("seed7")
    _cli("gen-synthetic", "--out", root / "data", "--seed", 7)
    return root


_RUNS = {}


def run_variant(root, fusion, seed, tag="run"):
    """gen-synthetic output -> train -> score -> eval through the CLI; cached per (fusion, seed, tag)."""
    key = (fusion, seed, tag)
    if key not in _RUNS:
        d = root / f"{tag}-{fusion}-{seed}"
        ckpt = d / "model.amck"
        t0 = time.time()
        _cli("train", "--data", root / "data", "--out", ckpt, "--fusion", fusion, "--seed", seed)
        train_s = time.time() - t0
        _cli("score", "--data", root / "data", "--ckpt", ckpt, "--out", d / "scores.csv")
        out = _cli("eval", "--scores", d / "scores.csv")
        frame_rows = SC.read_frame_csv(d / "scores.csv")
        labels = {(c, f): lab for c, f, _, lab in frame_rows}
        records = SC.read_object_csv(d / "scores.objects.csv")
        _RUNS[key] = {
            "dir": d, "ckpt": ckpt, "train_s": train_s,
            "auroc": float(out.split()[1]),
            "object_auroc": P.object_auroc(records, labels),
        }
    return _RUNS[key]


@pytest.mark.slow
@criterion(6, "end-to-end synthetic run, seed 7 defaults")
def test_c6_end_to_end(seed7):
    r = run_variant(seed7, "gated", 0)
    assert r["train_s"] <= 600, f"training took {r['train_s']:.0f}s"
    assert r["auroc"] >= 0.90, f"frame AUROC {r['auroc']:.4f}"
    return f"frame AUROC {r['auroc']:.4f}; train {r['train_s']:.0f}s"


@pytest.mark.slow
@criterion(7, "ablation ordering gated >= add >= frame-only (3 seeds, ties within 0.005)")
def test_c7_ablation(seed7):
    means, obj = {}, {}
    for fusion in ("gated", "add", "none"):
        runs = [run_variant(seed7, fusion, s) for s in (0, 1, 2)]
        means[fusion] = float(np.mean([r["auroc"] for r in runs]))
        obj[fusion] = float(np.mean([r["object_auroc"] for r in runs]))
    tie = 0.005
    detail = ("frame " + " ".join(f"{k}={v:.4f}" for k, v in means.items())
              + "; object " + " ".join(f"{k}={v:.4f}" for k, v in obj.items()))
    assert means["gated"] >= means["add"] - tie, detail
    assert means["add"] >= means["none"] - tie, detail
    return detail


@pytest.mark.slow
@criterion(8, "identical seed/config gives bit-identical checkpoint and score CSVs")
def test_c8_determinism(seed7):
    a = run_variant(seed7, "gated", 0)
    b = run_variant(seed7, "gated", 0, tag="repeat")
    assert a["ckpt"].read_bytes() == b["ckpt"].read_bytes()
    for name in ("scores.csv", "scores.objects.csv", "model.loss.csv", "model.norm.json"):
        assert (a["dir"] / name).read_bytes() == (b["dir"] / name).read_bytes(), name
    return f"checkpoint {a['ckpt'].stat().st_size} bytes identical; frame/object CSVs identical"


# ---------------------------------------------------------------------------
# 9. formats
# ---------------------------------------------------------------------------


@criterion(9, "format round-trips and named errors")
def test_c9_formats(tmp_path):
    r = np.random.default_rng(9)
    for fusion in ("gated", "add", "none"):
        p = M.init_params(M.Architecture(fusion=fusion), seed=int(r.integers(1000)))
        M.save_checkpoint(p, tmp_path / "m.amck", extra={"k": [1, 2]})
        q, extra = M.load_checkpoint(tmp_path / "m.amck", with_extra=True)
        assert q.arch == p.arch and extra == {"k": [1, 2]}
        for n in p.tensors:
            assert p[n].data.tobytes() == q[n].data.tobytes(), n
        M.save_checkpoint(q, tmp_path / "m2.amck", extra=extra)
        assert (tmp_path / "m.amck").read_bytes() == (tmp_path / "m2.amck").read_bytes()

    fl = F.FlowField(r.normal(0, 3, (48, 64)).astype(np.float32), r.normal(0, 3, (48, 64)).astype(np.float32))
    F.save_flow(fl, tmp_path / "f.amfl")
    g = F.load_flow(tmp_path / "f.amfl")
    assert g.u.tobytes() == fl.u.tobytes() and g.v.tobytes() == fl.v.tobytes()

    buf = (tmp_path / "m.amck").read_bytes()
    named = []
    for data, exc in [(buf[:-9], M.CorruptCheckpoint),
                      (buf[:4] + bytes([7]) + buf[5:], M.VersionMismatch),
                      (buf[:100] + bytes([buf[100] ^ 1]) + buf[101:], M.CorruptCheckpoint)]:
        (tmp_path / "bad.amck").write_bytes(data)
        with pytest.raises(exc):
            M.load_checkpoint(tmp_path / "bad.amck")
        named.append(exc.__name__)
    fbuf = (tmp_path / "f.amfl").read_bytes()
    for data, exc in [(b"XXXX" + fbuf[4:], F.BadMagic), (fbuf[:-4], F.TruncatedFile), (fbuf[:6], F.TruncatedFile)]:
        (tmp_path / "bad.amfl").write_bytes(data)
        with pytest.raises(exc):
            F.load_flow(tmp_path / "bad.amfl")
        named.append(exc.__name__)
    return "checkpoint and AMFL bit-exact; errors " + ", ".join(sorted(set(named)))
