"""Dense tensors with tape-based reverse-mode differentiation on top of numpy.

Operations record themselves on the active :class:`Tape` when any input
requires a gradient.  Outside a tape every op is a plain numpy computation,
which is what evaluation code relies on.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float64


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager around a forward pass, then call
    :meth:`backward` once on the scalar loss.
    """

    _active: "Tape | None" = None

    def __init__(self):
        self.records = []
        self._done = False
        self._outer = None

    def __enter__(self):
        self._outer, Tape._active = Tape._active, self
        return self

    def __exit__(self, *exc):
        Tape._active = self._outer

    def record(self, out, parents, backward_fn):
        if self._done:
            raise RuntimeError("tape already consumed by backward(); record a new forward pass")
        self.records.append((out, parents, backward_fn))

    def backward(self, loss, params=None):
        if self._done:
            raise RuntimeError("backward() called twice on the same tape")
        if loss.data.size != 1 or loss.data.ndim != 0:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self._done = True
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        # records are appended in creation order, which is a topological order
        for out, parents, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                pg = _unbroadcast(pg, p.data.shape)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
                if p._leaf:
                    leaves[id(p)] = p
        if id(loss) in grads and loss._leaf:
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            leaf.grad = grads[key]
        for p in params or ():
            if id(p) not in leaves:
                p.grad = np.zeros_like(p.data)
        self.records.clear()


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, params=None):
        tape = Tape._active
        if tape is None:
            raise RuntimeError("no active tape; run the forward pass inside `with Tape():`")
        tape.backward(self, params)

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = _lift(other, self.data.dtype)
        return _make(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other, self.data.dtype)
        return _make(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return _lift(other, self.data.dtype) - self

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = _lift(other, self.data.dtype)
        a, b = self.data, other.data
        return _make(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return self * (1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.data.shape
        return _make(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return _make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        src = self.data.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src).copy(),)

        return _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def __getitem__(self, idx):
        src_shape = self.data.shape
        dtype = self.data.dtype

        def back(g):
            full = np.zeros(src_shape, dtype=dtype)
            np.add.at(full, idx, g)
            return (full,)

        return _make(self.data[idx], (self,), back)


def _lift(x, dtype):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(data, parents, backward_fn):
    """Wrap ``data`` as an op output and record it if any parent is tracked."""
    out = Tensor(data, dtype=data.dtype if isinstance(data, np.ndarray) else None)
    tape = Tape._active
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._leaf = False
        tape.record(out, parents, backward_fn)
    return out


def custom_op(data, parents, backward_fn):
    """Public hook for ops that bring their own backward rule.

    ``backward_fn`` maps the output gradient to one gradient per parent
    (``None`` for parents that need none).
    """
    return _make(np.asarray(data), tuple(parents), backward_fn)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a, b):
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def back(g):
        return g @ np.swapaxes(B, -1, -2), np.swapaxes(A, -1, -2) @ g

    return _make(A @ B, (a, b), back)


def softmax_lastdim(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    y = z

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), back)


def log_softmax_lastdim(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), back)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    X = x.data
    # centre on the first channel before averaging so constant rows give exact zeros
    shifted = X - X[..., :1]
    xc = shifted - shifted.mean(axis=-1, keepdims=True)
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    G = gain.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * G
        c = X.shape[-1]
        dx = rstd / c * (c * dxhat - dxhat.sum(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _make(xhat * G + bias.data, (x, gain, bias), back)


_SQRT1_2 = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the standard normal CDF."""
    X = x.data
    cdf = 0.5 * (1.0 + erf(X * _SQRT1_2))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * X * X)
        return (g * (cdf + X * pdf),)

    return _make(X * cdf, (x,), back)


def relu(x):
    X = x.data
    return _make(np.maximum(X, 0.0), (x,), lambda g: (g * (X > 0),))


ATTENTION_ROW_BLOCK = 256


def attention(q, k, v):
    """Scaled dot-product attention over the second-to-last axis.

    Shapes ``(..., N, d)``.  Scores are formed and softmaxed one
    ``ATTENTION_ROW_BLOCK`` slab of query rows at a time so each slab stays
    cache resident; only the probabilities are kept for the backward pass.
    """
    scale = 1.0 / np.sqrt(q.shape[-1])
    Q, K, V = q.data, k.data, v.data
    lead = Q.shape[:-2]
    n = Q.shape[-2]
    R = ATTENTION_ROW_BLOCK
    probs = np.empty(lead + (n, K.shape[-2]), dtype=Q.dtype)
    out = np.empty(lead + (n, V.shape[-1]), dtype=Q.dtype)
    Qs = Q * scale
    for i in np.ndindex(lead):
        kt = K[i].T
        for r in range(0, n, R):
            s = probs[i][r:r + R]
            np.matmul(Qs[i][r:r + R], kt, out=s)
            s -= s.max(axis=-1, keepdims=True)
            np.exp(s, out=s)
            s /= s.sum(axis=-1, keepdims=True)
            np.matmul(s, V[i], out=out[i][r:r + R])

    def back(g):
        dq = np.empty_like(Q)
        dk = np.zeros_like(K)
        dv = np.empty_like(V)
        for i in np.ndindex(lead):
            p = probs[i]
            np.matmul(p.T, g[i], out=dv[i])
            vt = V[i].T
            for r in range(0, n, R):
                pr = p[r:r + R]
                ds = g[i][r:r + R] @ vt
                ds -= (ds * pr).sum(axis=-1, keepdims=True)
                ds *= pr
                ds *= scale
                np.matmul(ds, K[i], out=dq[i][r:r + R])
                dk[i] += ds.T @ Q[i][r:r + R]
        return dq, dk, dv

    return _make(out, (q, k, v), back)


def attention_weights(q, k):
    """Softmax attention probabilities as a plain array (inspection only)."""
    s = (q.data / np.sqrt(q.shape[-1])) @ np.swapaxes(k.data, -1, -2)
    s -= s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``logits``.

    ``logits`` is ``(K,)`` with a scalar label or ``(B, K)`` with ``B`` labels.
    """
    L = logits.data
    labels = np.asarray(labels)
    single = L.ndim == 1
    L2 = L[None] if single else L
    lab = labels.reshape(-1)
    k = L2.shape[-1]
    if lab.shape[0] != L2.shape[0]:
        raise ValueError("one label per row of logits required")
    if np.any(lab < 0) or np.any(lab >= k):
        raise ValueError(f"label out of range for {k} classes")
    z = L2 - L2.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(L2.shape[0])
    nll = lse - z[rows, lab]
    p = np.exp(z - lse[:, None])

    def back(g):
        d = p.copy()
        d[rows, lab] -= 1.0
        d *= g / L2.shape[0]
        return (d[0] if single else d,)

    return _make(np.asarray(nll.mean()), (logits,), back)


def flip_grad(x):
    """Identity forward, negated backward.  Fault injection for grad checks."""
    return _make(x.data.copy(), (x,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, params, eps=1e-6):
    """Max relative error between tape gradients and central differences.

    ``f`` takes no arguments and returns a scalar Tensor computed from
    ``params``.  Entries are perturbed in place and restored.
    """
    with Tape() as tape:
        loss = f()
    tape.backward(loss, params)
    worst = 0.0
    for p in params:
        analytic = p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            an = analytic.reshape(-1)[i]
            err = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
