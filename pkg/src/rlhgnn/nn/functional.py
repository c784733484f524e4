"""The closed set of differentiable ops used by the predictor and the Q-network."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..exceptions import ShapeError
from .autograd import Tensor, as_tensor, make


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make(a.data + b.data, (a, b), backward)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n: shapes {shape} and {t.shape} differ")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data
    return make(out, tensors, lambda g: [g] * len(tensors))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)

    return make(a.data * b.data, (a, b), backward)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {x.shape} by {w.shape}")

    def backward(g):
        return g @ w.data.T, x.data.T @ g

    return make(x.data @ w.data, (x, w), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x[n, d_in]``, ``w[d_in, d_out]``, ``b[d_out]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is None:
        return matmul(x, w)
    b = as_tensor(b)
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")

    def backward(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return make(x.data @ w.data + b.data, (x, w, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: (g * mask,))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make(t, (x,), lambda g: (g * (1.0 - t * t),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, cuts, axis=axis)

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def _check_ids(ids, n, what):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"{what}: index out of range for {n} rows")
    return ids


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup; the backward pass scatter-adds with multiplicity."""
    ids = _check_ids(ids, table.shape[0], "embedding")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, ids, g)
        return (gt,)

    return make(table.data[ids], (table,), backward)


gather_rows = embedding


def scatter_rows(n_rows: int, parts: Sequence[tuple[np.ndarray, Tensor]], width: int, dtype) -> Tensor:
    """Place row blocks into an ``[n_rows, width]`` zero matrix (target rows must be disjoint)."""
    out = np.zeros((n_rows, width), dtype=dtype)
    idxs = [np.asarray(i, dtype=np.int64) for i, _ in parts]
    tensors = [t for _, t in parts]
    for i, t in zip(idxs, tensors):
        out[i] = t.data
    return make(out, tensors, lambda g: [g[i] for i in idxs])


def spmm(matrix, x: Tensor) -> Tensor:
    """Sparse (scipy) matrix times dense activations."""
    mt = matrix.T.tocsr()
    return make(np.asarray(matrix @ x.data), (x,), lambda g: (np.asarray(mt @ g),))


def lstm_sequence(xs: Sequence[Tensor], w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over ``xs`` (each ``[n, d_in]``) from a zero state; return the last hidden state.

    Gate layout in the ``4H`` columns: input, forget, cell candidate, output.
    """
    if not xs:
        raise ShapeError("lstm_sequence needs at least one step")
    xs = [as_tensor(x) for x in xs]
    hdim = w_hh.shape[0]
    if w_ih.shape[1] != 4 * hdim or w_hh.shape != (hdim, 4 * hdim) or b.shape != (4 * hdim,):
        raise ShapeError(f"lstm_sequence: bad weight shapes {w_ih.shape}, {w_hh.shape}, {b.shape}")
    n = xs[0].shape[0]
    dtype = np.result_type(xs[0].data, w_ih.data)
    h = np.zeros((n, hdim), dtype=dtype)
    c = np.zeros((n, hdim), dtype=dtype)
    cache = []
    for x in xs:
        if x.shape != (n, w_ih.shape[0]):
            raise ShapeError(f"lstm_sequence: step input {x.shape}, expected {(n, w_ih.shape[0])}")
        z = x.data @ w_ih.data + h @ w_hh.data + b.data
        i = _sigmoid(z[:, :hdim])
        f = _sigmoid(z[:, hdim:2 * hdim])
        gg = np.tanh(z[:, 2 * hdim:3 * hdim])
        o = _sigmoid(z[:, 3 * hdim:])
        c_new = f * c + i * gg
        tc = np.tanh(c_new)
        cache.append((x.data, h, c, i, f, gg, o, tc))
        h, c = o * tc, c_new

    def backward(gh):
        dh = gh
        dc = np.zeros_like(gh)
        dw_ih = np.zeros_like(w_ih.data)
        dw_hh = np.zeros_like(w_hh.data)
        db = np.zeros_like(b.data)
        dxs = [None] * len(cache)
        for t in range(len(cache) - 1, -1, -1):
            x, h_prev, c_prev, i, f, gg, o, tc = cache[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc * gg * i * (1.0 - i),
                    dc * c_prev * f * (1.0 - f),
                    dc * i * (1.0 - gg * gg),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dw_ih += x.T @ dz
            dw_hh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dxs[t] = dz @ w_ih.data.T
            dh = dz @ w_hh.data.T
            dc = dc * f
        return dxs + [dw_ih, dw_hh, db]

    return make(h, list(xs) + [w_ih, w_hh, b], backward)


def mean_pool(rows: Tensor) -> Tensor:
    """Mean over the rows of ``[m, d]``; returns ``[d]``."""
    m = rows.shape[0]
    if m < 1:
        raise ShapeError("mean_pool of zero rows")
    return make(rows.data.mean(axis=0), (rows,), lambda g: (np.broadcast_to(g / m, rows.shape).copy(),))


def max_pool(rows: Tensor) -> Tensor:
    """Elementwise max over rows; the gradient goes to the first argmax."""
    if rows.shape[0] < 1:
        raise ShapeError("max_pool of zero rows")
    arg = rows.data.argmax(axis=0)
    cols = np.arange(rows.shape[1])

    def backward(g):
        gr = np.zeros_like(rows.data)
        gr[arg, cols] = g
        return (gr,)

    return make(rows.data[arg, cols], (rows,), backward)


def grouped_max(x: Tensor, index: np.ndarray) -> Tensor:
    """Batched :func:`max_pool`: ``out[r] = max_j x[index[r, j]]``."""
    index = np.asarray(index, dtype=np.int64)
    gathered = x.data[index]  # [r, m, d]
    arg = gathered.argmax(axis=1)  # [r, d]
    src = np.take_along_axis(index[:, :, None], arg[:, None, :], axis=1)[:, 0, :]
    cols = np.broadcast_to(np.arange(x.shape[1]), src.shape)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, (src, cols), g)
        return (gx,)

    return make(np.take_along_axis(gathered, arg[:, None, :], axis=1)[:, 0, :], (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make(xhat * gain.data + bias.data, (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in evaluation mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make(x.data * keep, (x,), lambda g: (g * keep,))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood and the softmax probabilities."""
    labels = _check_ids(labels, logits.shape[1], "softmax_cross_entropy")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return make(np.asarray(loss, dtype=logits.dtype), (logits,), backward), probs


def selected_mse(q: Tensor, actions, targets) -> Tensor:
    """Mean of ``(q[i, a_i] - y_i)^2`` over the batch (taken actions only)."""
    actions = _check_ids(actions, q.shape[1], "selected_mse")
    targets = np.asarray(targets, dtype=q.dtype)
    rows = np.arange(q.shape[0])
    diff = q.data[rows, actions] - targets
    n = len(rows)

    def backward(g):
        gq = np.zeros_like(q.data)
        gq[rows, actions] = 2.0 * diff * g / n
        return (gq,)

    return make(np.asarray((diff**2).mean(), dtype=q.dtype), (q,), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``; projects any output to a scalar for gradient checks."""
    w = np.asarray(weights, dtype=x.dtype)
    return make(np.asarray((x.data * w).sum(), dtype=x.dtype), (x,), lambda g: (g * w,))
