"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the model and losses need are provided.  Each op builds
a node holding its parents and a closure that pushes the output gradient
back to them; :func:`backward` walks the graph in reverse topological order.
Arrays keep whatever float dtype they were created with, so the same code
runs the float32 training path and the float64 gradient checker.
"""

import math

import numpy as np

from . import _kernels


class ShapeMismatch(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if dtype is None and not isinstance(data, (np.ndarray, np.floating)):
            dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf with requires_grad."""
    loss = as_tensor(loss)
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same("mul", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    """Multiply by a python scalar constant."""
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    # np.maximum keeps NaN visible; np.where(mask, ...) would silently zero it
    return _node(np.maximum(x.data, x.dtype.type(0)), (x,), lambda g: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return _node(y, (x,), lambda g: (g * y * (1 - y),))


def absolute(x):
    x = as_tensor(x)
    # sign(0) == 0 gives the zero subgradient at the kink
    s = np.sign(x.data)
    return _node(np.abs(x.data), (x,), lambda g: (g * s,))


def square_diff(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same("square_diff", a, b)
    d = a.data - b.data
    return _node(d * d, (a, b), lambda g: (2 * g * d, -2 * g * d))


# ---------------------------------------------------------------------------
# reductions and reshapes
# ---------------------------------------------------------------------------


def sum_all(x):
    x = as_tensor(x)
    return _node(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x):
    x = as_tensor(x)
    n = x.data.size
    return _node(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                 lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def flatten(x):
    """(N, ...) -> (N, prod(...))."""
    x = as_tensor(x)
    shp = x.shape
    return _node(x.data.reshape(shp[0], -1), (x,), lambda g: (g.reshape(shp),))


def reshape(x, shape):
    x = as_tensor(x)
    shp = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(shp),))


def concat(xs, axis=1):
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    for x in xs[1:]:
        rest_a = xs[0].shape[:axis] + xs[0].shape[axis + 1:]
        rest_b = x.shape[:axis] + x.shape[axis + 1:]
        if rest_a != rest_b:
            raise ShapeMismatch(f"concat: shape mismatch {xs[0].shape} vs {x.shape} (axis {axis})")
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def spatial_diff(x, axis):
    """x[..., i, :] - x[..., i-1, :] along ``axis`` (one shorter along it)."""
    x = as_tensor(x)
    n = x.shape[axis]
    hi = [slice(None)] * x.data.ndim
    lo = [slice(None)] * x.data.ndim
    hi[axis] = slice(1, n)
    lo[axis] = slice(0, n - 1)
    hi, lo = tuple(hi), tuple(lo)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[hi] += g
        gx[lo] -= g
        return (gx,)

    return _node(x.data[hi] - x.data[lo], (x,), bw)


def cosine_similarity(a, b, eps=1e-8):
    """Per-sample <a, b> / (|a| |b| + eps) over flattened (N, D) inputs; returns shape (N,)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same("cosine_similarity", a, b)
    A = a.data.reshape(a.shape[0], -1)
    B = b.data.reshape(b.shape[0], -1)
    dot = (A * B).sum(axis=1)
    na = np.sqrt((A * A).sum(axis=1))
    nb = np.sqrt((B * B).sum(axis=1))
    den = na * nb + eps
    cos = (dot / den).astype(a.dtype, copy=False)

    def bw(g):
        g = g[:, None]
        # d den / dA = nb * A / na, taken as 0 where na == 0
        ua = np.divide(A, na[:, None], out=np.zeros_like(A), where=na[:, None] > 0)
        ub = np.divide(B, nb[:, None], out=np.zeros_like(B), where=nb[:, None] > 0)
        q = (dot / den ** 2)[:, None]
        ga = g * (B / den[:, None] - q * nb[:, None] * ua)
        gb = g * (A / den[:, None] - q * na[:, None] * ub)
        return ga.reshape(a.shape), gb.reshape(b.shape)

    return _node(cos, (a, b), bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv2d(x, w, b=None, stride=1):
    """3x3-style 'same' convolution (padding k//2) over NCHW input."""
    x, w = as_tensor(x), as_tensor(w)
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise ShapeMismatch(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    pad = k // 2
    cols = _kernels.im2col(x.data, k, stride, pad)  # (c*k*k, n*ho*wo)
    wm = w.data.reshape(o, -1)
    out = wm @ cols
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ShapeMismatch(f"conv2d: bias {b.shape} vs {o} output channels")
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = _kernels.col2im(wm.T @ g2, x.shape, k, stride, pad) if x.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=1))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw)


def upsample2x(x):
    """Nearest-neighbour 2x spatial upsampling."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return _node(y, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def required_ops():
    """Name -> callable for every differentiable op the layer provides."""
    return {
        "conv2d": conv2d,
        "upsample2x": upsample2x,
        "relu": relu,
        "sigmoid": sigmoid,
        "add": add,
        "sub": sub,
        "mul": mul,
        "scale": scale,
        "concat": concat,
        "mean": mean,
        "sum": sum_all,
        "abs": absolute,
        "square_diff": square_diff,
        "spatial_diff": spatial_diff,
        "flatten": flatten,
        "reshape": reshape,
        "cosine_similarity": cosine_similarity,
    }


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


class GradCheckReport:
    """Outcome of :func:`finite_diff_check`.

    ``errors`` maps parameter name to the relative error of its block,
    ``kinks`` maps parameter name to flat indices where one-sided differences
    disagree (a nondifferentiable point was straddled; those entries are
    excluded from the error).  ``checked`` counts the probed entries per block.
    """

    def __init__(self, errors, kinks, tol, checked=None):
        self.errors = errors
        self.kinks = kinks
        self.tol = tol
        self.checked = checked or {}

    @property
    def kink_fraction(self):
        total = sum(self.checked.values())
        return sum(map(len, self.kinks.values())) / total if total else 0.0

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error <= self.tol

    def __repr__(self):
        return f"GradCheckReport(max_error={self.max_error:.3g}, passed={self.passed}, kinks={sum(map(len, self.kinks.values()))})"


def finite_diff_check(f, params, h=1e-5, tol=1e-4, kink_tol=None, max_entries=None, rng=None, floor=1e-6,
                      refine=3):
    """Compare analytic gradients with central differences in float64.

    ``f`` maps the dict ``params`` (name -> Tensor) to a scalar Tensor.  All
    parameters are cast to float64 in place.  The error for one block is
    ``|g_a - g_n|_2 / max(|g_a|_2, |g_n|_2, floor)`` over its non-kink entries;
    the floor keeps a block whose true gradient is zero from turning
    round-off into a relative error of 1.

    An entry whose one-sided differences disagree by more than ``kink_tol``
    (default ``tol``) relative to its slope straddles a nondifferentiable
    point.  It is retried with the step shrunk tenfold up to ``refine``
    times; entries still straddling a kink after that are excluded and
    listed in the report.  Because the threshold is ``tol``, a kink that
    goes unnoticed perturbs an entry by less than the tolerance.

    With ``max_entries`` set, at most that many entries per block are probed
    (chosen by ``rng``).
    """
    kink_tol = tol if kink_tol is None else kink_tol
    for p in params.values():
        p.data = np.asarray(p.data, dtype=np.float64)
        p.requires_grad = True
        p.grad = None
    base = f(params)
    f0 = float(base.data)
    if not math.isfinite(f0):
        raise NonFiniteError("f is not finite at the base point")
    backward(base)

    def probe(name, flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(params).data)
        flat[i] = orig - step
        fm = float(f(params).data)
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteError(f"f is not finite when perturbing {name!r}[{i}]")
        fwd, bwd = (fp - f0) / step, (f0 - fm) / step
        # smooth: fwd - bwd ~ step * f''; at a kink it stays at the slope jump however small the step
        kinked = abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), floor)
        return (fp - fm) / (2 * step), kinked

    errors, kinks, checked = {}, {}, {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteError(f"non-finite analytic gradient for {name!r}")
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
        num = np.empty(idx.size)
        bad = []
        for j, i in enumerate(idx):
            step = h
            num[j], kinked = probe(name, flat, i, step)
            for _ in range(refine):
                if not kinked:
                    break
                step /= 10
                num[j], kinked = probe(name, flat, i, step)
            if kinked:
                bad.append(j)
        a = analytic.reshape(-1)[idx]
        keep = np.ones(idx.size, dtype=bool)
        keep[bad] = False
        kinks[name] = idx[bad].tolist()
        checked[name] = int(idx.size)
        da, dn = a[keep], num[keep]
        scale_ = max(np.linalg.norm(da), np.linalg.norm(dn), floor)
        errors[name] = float(np.linalg.norm(da - dn) / scale_)
    return GradCheckReport(errors, kinks, tol, checked)
