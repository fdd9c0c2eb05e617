"""Layer primitives with hand-written backward passes (float64 numpy).

Every ``*_fwd`` returns ``(out, cache)``; the matching ``*_bwd`` takes the
upstream gradient and the cache and returns the input gradient plus parameter
gradients.
"""

import numpy as np

NEG_INF = -1e30
LN_EPS = 1e-5
NORM_EPS = 1e-12


def linear_fwd(x, W, b):
    return x @ W + b, x


def linear_bwd(dy, x, W):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ W.T, x2.T @ dy2, dy2.sum(axis=0)


def layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    d = xhat.shape[-1]
    dxhat = dy * g
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    flat = xhat.reshape(-1, d)
    dy2 = dy.reshape(-1, d)
    return dx, (dy2 * flat).sum(axis=0), dy2.sum(axis=0)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_fwd(x):
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_bwd(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def relu_fwd(x):
    return np.maximum(x, 0.0), x


def relu_bwd(dy, x):
    return dy * (x > 0)


def softmax(s, axis=-1):
    z = s - s.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(s, axis=-1):
    z = s - s.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def attention_fwd(x, p, prefix, mask):
    """Single-head self-attention on ``x`` of shape (B, L, d); ``mask`` is additive, broadcast to (B, L, L)."""
    q, _ = linear_fwd(x, p[prefix + "Wq"], p[prefix + "bq"])
    k, _ = linear_fwd(x, p[prefix + "Wk"], p[prefix + "bk"])
    v, _ = linear_fwd(x, p[prefix + "Wv"], p[prefix + "bv"])
    scale = 1.0 / np.sqrt(x.shape[-1])
    a = softmax(q @ k.transpose(0, 2, 1) * scale + mask)
    o = a @ v
    y, _ = linear_fwd(o, p[prefix + "Wo"], p[prefix + "bo"])
    return y, (x, q, k, v, a, o, scale)


def attention_bwd(dy, cache, p, prefix, grads):
    x, q, k, v, a, o, scale = cache
    do, dWo, dbo = linear_bwd(dy, o, p[prefix + "Wo"])
    da = do @ v.transpose(0, 2, 1)
    dv = a.transpose(0, 2, 1) @ do
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q
    dx = np.zeros_like(x)
    for name, dz in (("q", dq), ("k", dk), ("v", dv)):
        dxi, dW, db = linear_bwd(dz, x, p[prefix + "W" + name])
        dx += dxi
        grads[prefix + "W" + name] += dW
        grads[prefix + "b" + name] += db
    grads[prefix + "Wo"] += dWo
    grads[prefix + "bo"] += dbo
    return dx


def l2norm_fwd(x):
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True) + NORM_EPS)
    return x / n, (x, n)


def l2norm_bwd(dy, cache):
    x, n = cache
    return dy / n - x * (x * dy).sum(axis=-1, keepdims=True) / n**3


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    logp = log_softmax(logits)
    count = len(labels)
    loss = -logp[np.arange(count), labels].mean()
    d = np.exp(logp)
    d[np.arange(count), labels] -= 1.0
    return loss, d / count
