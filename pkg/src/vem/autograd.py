"""Reverse-mode automatic differentiation over numpy arrays.

A `Var` wraps an ndarray and records, for every op, a closure that routes the
output gradient back to the inputs. `backward()` on a scalar replays the tape
in reverse topological order. Gradients accumulate into `.grad` (numpy
arrays, never `Var`s; no higher-order derivatives).

Shapes broadcast like numpy; `_unbroadcast` folds gradient axes back down.
Everything runs in the array's own dtype: training uses float32, gradient
checks run the same graphs in float64.

`no_grad()` disables taping wholesale; sampling loops run inside it so the
graph never grows.
"""

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def as_var(x):
    return x if isinstance(x, Var) else Var(np.asarray(x))


class Var:
    """Array node on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")
    __array_priority__ = 100  # keep numpy from hijacking ndarray (op) Var

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._backward = None
        self._prev = ()

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def _make(self, data, parents, backward):
        out = Var(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        return out

    def _accum(self, grad):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = grad.copy() if grad.base is not None else grad
        else:
            self.grad = self.grad + grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = as_var(other)
        def back(g):
            self.requires_grad and self._accum(_unbroadcast(g, self.shape))
            other.requires_grad and other._accum(_unbroadcast(g, other.shape))
        return self._make(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __mul__(self, other):
        other = as_var(other)
        def back(g):
            self.requires_grad and self._accum(_unbroadcast(g * other.data, self.shape))
            other.requires_grad and other._accum(_unbroadcast(g * self.data, other.shape))
        return self._make(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-as_var(other))

    def __rsub__(self, other):
        return as_var(other) + (-self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self * other ** -1.0
        return self * (1.0 / other)

    def __pow__(self, p):
        assert np.isscalar(p)
        def back(g):
            self._accum(_unbroadcast(g * p * self.data ** (p - 1), self.shape))
        return self._make(self.data ** p, (self,), back)

    def matmul(self, other):
        other = as_var(other)
        if self.ndim == 1 or other.ndim == 1:
            # numpy's 1-D promotion rules, built from 2-D matmul + reshapes
            a2 = self.reshape(1, -1) if self.ndim == 1 else self
            b2 = other.reshape(-1, 1) if other.ndim == 1 else other
            out = a2.matmul(b2)
            shape = list(out.shape)
            if other.ndim == 1:
                shape.pop()
            if self.ndim == 1:
                shape.pop(-1 if other.ndim == 1 else -2)
            return out.reshape(tuple(shape))
        a, b = self.data, other.data
        def back(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(b, -1, -2)
                self._accum(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.swapaxes(a, -1, -2) @ g
                other._accum(_unbroadcast(gb, other.shape))
        return self._make(a @ b, (self, other), back)

    __matmul__ = matmul

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        def back(g):
            self._accum(g.reshape(old))
        return self._make(self.data.reshape(shape), (self,), back)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        inv = np.argsort(axes)
        def back(g):
            self._accum(g.transpose(inv))
        return self._make(self.data.transpose(axes), (self,), back)

    def __getitem__(self, idx):
        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)
        return self._make(self.data[idx], (self,), back)

    def repeat2(self):
        """Duplicate every sample along the last axis (nearest upsample x2)."""
        def back(g):
            self._accum(g.reshape(g.shape[:-1] + (-1, 2)).sum(axis=-1))
        return self._make(np.repeat(self.data, 2, axis=-1), (self,), back)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def back(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.shape))
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(ge, self.shape))
        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- pointwise ---------------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        def back(g):
            self._accum(g * out_data)
        return self._make(out_data, (self,), back)

    def log(self):
        def back(g):
            self._accum(g / self.data)
        return self._make(np.log(self.data), (self,), back)

    def tanh(self):
        out_data = np.tanh(self.data)
        def back(g):
            self._accum(g * (1.0 - out_data ** 2))
        return self._make(out_data, (self,), back)

    def sigmoid(self):
        out_data = _sigmoid(self.data)
        def back(g):
            self._accum(g * out_data * (1.0 - out_data))
        return self._make(out_data, (self,), back)

    def relu(self):
        def back(g):
            self._accum(g * (self.data > 0))
        return self._make(np.maximum(self.data, 0.0), (self,), back)

    def silu(self):
        s = _sigmoid(self.data)
        def back(g):
            self._accum(g * (s + self.data * s * (1.0 - s)))
        return self._make(self.data * s, (self,), back)

    def softmax(self, axis=-1):
        m = self.data.max(axis=axis, keepdims=True)
        e = np.exp(self.data - m)
        out_data = e / e.sum(axis=axis, keepdims=True)
        def back(g):
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            self._accum(out_data * (g - dot))
        return self._make(out_data, (self,), back)

    def layer_norm(self, eps=1e-5):
        """Zero-mean unit-variance over the last axis (affine part separate)."""
        mu = self.data.mean(axis=-1, keepdims=True)
        var = self.data.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (self.data - mu) * inv
        def back(g):
            gm = g.mean(axis=-1, keepdims=True)
            gx = (g * xhat).mean(axis=-1, keepdims=True)
            self._accum(inv * (g - gm - xhat * gx))
        return self._make(xhat, (self,), back)

    def __repr__(self):
        return f"Var(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat(vars_, axis=0):
    vars_ = [as_var(v) for v in vars_]
    sizes = [v.shape[axis] for v in vars_]
    def back(g):
        offset = 0
        for v, n in zip(vars_, sizes):
            if v.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + n)
                v._accum(g[tuple(sl)])
            offset += n
    out = np.concatenate([v.data for v in vars_], axis=axis)
    ref = Var(out)
    if _grad_enabled and any(v.requires_grad for v in vars_):
        ref.requires_grad = True
        ref._prev = tuple(v for v in vars_ if v.requires_grad)
        ref._backward = back
    return ref


def conv1d(x, w, b=None, stride=1, padding=0):
    """1-D convolution (cross-correlation), x (B,Cin,L), w (Cout,Cin,K).

    im2col formulation: both passes are single matmuls plus an index
    scatter, which keeps the tape shallow and the arithmetic vectorized.
    """
    x, w = as_var(x), as_var(w)
    bsz, cin, length = x.shape
    cout, cin_w, k = w.shape
    assert cin == cin_w, f"channel mismatch {cin} vs {cin_w}"
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    lout = (xp.shape[2] - k) // stride + 1
    idx = stride * np.arange(lout)[:, None] + np.arange(k)[None, :]  # (lout, k)
    cols = xp[:, :, idx]                        # (B, Cin, Lout, K)
    cols = cols.transpose(0, 2, 1, 3).reshape(bsz * lout, cin * k)
    wm = w.data.reshape(cout, cin * k)
    out = (cols @ wm.T).reshape(bsz, lout, cout).transpose(0, 2, 1)
    if b is not None:
        b = as_var(b)
        out = out + b.data[None, :, None]

    def back(g):
        gflat = g.transpose(0, 2, 1).reshape(bsz * lout, cout)
        if w.requires_grad:
            w._accum((gflat.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = (gflat @ wm).reshape(bsz, lout, cin, k).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            np.add.at(gxp, (slice(None), slice(None), idx), gcols)
            x._accum(gxp[:, :, padding:padding + length] if padding else gxp)

    parents = (x, w) + ((b,) if b is not None else ())
    ref = Var(out)
    if _grad_enabled and any(p.requires_grad for p in parents):
        ref.requires_grad = True
        ref._prev = tuple(p for p in parents if p.requires_grad)
        ref._backward = back
    return ref


def bce_with_logits(logits, targets):
    """Elementwise binary cross-entropy on raw logits, the stable form:
    max(x,0) - x*z + log1p(exp(-|x|)). Gradient is sigmoid(x) - z.
    """
    logits = as_var(logits)
    t = np.asarray(targets.data if isinstance(targets, Var) else targets)
    x = logits.data
    out = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    def back(g):
        logits._accum(g * (_sigmoid(x) - t))
    return logits._make(out, (logits,), back)


# -- parameter containers --------------------------------------------------


class Module:
    """Base for parameterized blocks; discovers Params by attribute walk."""

    def named_params(self, prefix=""):
        out = []
        for key, val in vars(self).items():
            name = f"{prefix}{key}" if not prefix else f"{prefix}.{key}"
            if isinstance(val, Var) and val.requires_grad:
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_params(name))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_params(f"{name}.{i}"))
                    elif isinstance(item, Var) and item.requires_grad:
                        out.append((f"{name}.{i}", item))
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def num_params(self):
        return sum(p.data.size for p in self.params())

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state_dict(self, state):
        mine = dict(self.named_params())
        missing = sorted(set(mine) - set(state))
        extra = sorted(set(state) - set(mine))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing[:4]} extra={extra[:4]}")
        for name, p in mine.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()


def param(data):
    v = Var(np.asarray(data))
    v.requires_grad = True
    return v


class Linear(Module):
    def __init__(self, n_in, n_out, rng, zero_init=False, dtype=np.float32):
        if zero_init:
            w = np.zeros((n_in, n_out), dtype=dtype)
        else:
            scale = 1.0 / np.sqrt(n_in)
            w = (rng.gaussian((n_in, n_out)) * scale).astype(dtype)
        self.w = param(w)
        self.b = param(np.zeros(n_out, dtype=dtype))

    def __call__(self, x):
        return x @ self.w + self.b


class Conv1d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, zero_init=False, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        if zero_init:
            w = np.zeros((c_out, c_in, k), dtype=dtype)
        else:
            scale = 1.0 / np.sqrt(c_in * k)
            w = (rng.gaussian((c_out, c_in, k)) * scale).astype(dtype)
        self.w = param(w)
        self.b = param(np.zeros(c_out, dtype=dtype))

    def __call__(self, x):
        return conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Adam:
    """Adam with bias correction; state lives beside the param list."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self._params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data, dtype=np.float64) for p in self._params]
        self._v = [np.zeros_like(p.data, dtype=np.float64) for p in self._params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self._params):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self._m[i] = self.b1 * self._m[i] + (1 - self.b1) * g
            self._v[i] = self.b2 * self._v[i] + (1 - self.b2) * g * g
            mhat = self._m[i] / (1 - self.b1 ** self.t)
            vhat = self._v[i] / (1 - self.b2 ** self.t)
            p.data = p.data - (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self._params:
            p.grad = None
