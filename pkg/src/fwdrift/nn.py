"""Minimal NHWC neural-network layers with hand-written backpropagation.

Everything is plain numpy plus a few numba-compiled kernels for the
memory-bound inner loops (convolution patch gather/scatter, batch-norm
statistics, pooling, the optimizer update), so that training is deterministic
for a fixed seed and analytic gradients can be validated against finite
differences. Without numba the layers fall back to equivalent (slower) numpy
paths.

Layers reuse their large work buffers across calls; a forward pass therefore
returns an array owned by the layer that the next forward overwrites. Callers
that keep results across passes must copy them.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

try:
    import numba

    # The portable threading layer: avoids probing TBB/OpenMP and schedules
    # identically from run to run.
    numba.config.THREADING_LAYER = "workqueue"
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

if _HAVE_NUMBA:

    @numba.njit(parallel=True, cache=True)
    def _im2col(xp, patches, h, w, c):
        for ni in numba.prange(xp.shape[0]):
            for y in range(h):
                for x in range(w):
                    row = (ni * h + y) * w + x
                    for ky in range(3):
                        for kx in range(3):
                            base = (ky * 3 + kx) * c
                            src = xp[ni, y + ky, x + kx]
                            for ci in range(c):
                                patches[row, base + ci] = src[ci]

    @numba.njit(parallel=True, cache=True)
    def _col2im(dpatches, dxp, h, w, c):
        for ni in numba.prange(dxp.shape[0]):
            for y in range(h):
                for x in range(w):
                    row = (ni * h + y) * w + x
                    for ky in range(3):
                        for kx in range(3):
                            base = (ky * 3 + kx) * c
                            dst = dxp[ni, y + ky, x + kx]
                            for ci in range(c):
                                dst[ci] += dpatches[row, base + ci]

    @numba.njit(parallel=True, cache=True)
    def _pool_forward(x, out, idx):
        n, ho, wo, c = out.shape
        for ni in numba.prange(n):
            for y in range(ho):
                for xx in range(wo):
                    for ci in range(c):
                        best = x[ni, 2 * y, 2 * xx, ci]
                        k = np.int8(0)
                        v = x[ni, 2 * y, 2 * xx + 1, ci]
                        if v > best:
                            best = v
                            k = np.int8(1)
                        v = x[ni, 2 * y + 1, 2 * xx, ci]
                        if v > best:
                            best = v
                            k = np.int8(2)
                        v = x[ni, 2 * y + 1, 2 * xx + 1, ci]
                        if v > best:
                            best = v
                            k = np.int8(3)
                        out[ni, y, xx, ci] = best
                        idx[ni, y, xx, ci] = k

    @numba.njit(parallel=True, cache=True)
    def _pool_backward(dout, idx, dx):
        n, ho, wo, c = dout.shape
        for ni in numba.prange(n):
            for y in range(ho):
                for xx in range(wo):
                    for ci in range(c):
                        k = idx[ni, y, xx, ci]
                        dx[ni, 2 * y + k // 2, 2 * xx + k % 2, ci] = dout[ni, y, xx, ci]

class Workspace:
    """Shape-keyed scratch buffers, reused across forward/backward passes."""

    def __init__(self) -> None:
        self._buffers: dict = {}

    def get(self, name: str, shape: tuple[int, ...], dtype) -> np.ndarray:
        key = (name, shape, np.dtype(dtype))
        buf = self._buffers.get(key)
        if buf is None:
            buf = np.empty(shape, dtype=dtype)
            self._buffers[key] = buf
        return buf


class Layer:
    kind = "layer"

    def __init__(self) -> None:
        self.ws = Workspace()
        self.input_grad = True  # the first layer of a network skips its dx

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return []

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return []

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Non-trainable arrays that still belong to the model (BN running stats)."""
        return []

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> Optional[np.ndarray]:
        raise NotImplementedError


def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv3x3(Layer):
    """3x3 convolution, stride 1, same padding, as one GEMM over patch rows.

    ``bias=False`` is for convolutions feeding a BatchNorm, whose mean
    subtraction makes a bias both redundant and gradient-free.
    """

    kind = "conv3x3"

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.w = _fan_in_uniform(rng, (3, 3, in_channels, out_channels), 9 * in_channels, dtype)
        self.b = np.zeros(out_channels, dtype=dtype) if bias else None
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b) if bias else None
        self._patches: Optional[np.ndarray] = None
        self._shape: Optional[tuple[int, ...]] = None

    def parameters(self):
        return [("w", self.w)] + ([("b", self.b)] if self.b is not None else [])

    def gradients(self):
        return [("w", self.dw)] + ([("b", self.db)] if self.db is not None else [])

    def forward(self, x, training):
        n, h, w, c = x.shape
        co = self.out_channels
        xp = self.ws.get("xp", (n, h + 2, w + 2, c), x.dtype)
        xp[...] = 0
        xp[:, 1 : 1 + h, 1 : 1 + w, :] = x
        patches = self.ws.get("patches", (n * h * w, 9 * c), x.dtype)
        _im2col(xp, patches, h, w, c)
        out = self.ws.get("out", (n * h * w, co), x.dtype)
        np.matmul(patches, self.w.reshape(9 * c, co), out=out)
        if self.b is not None:
            out += self.b
        self._patches = patches
        self._shape = (n, h, w, c)
        return out.reshape(n, h, w, co)

    def backward(self, dout):
        n, h, w, c = self._shape
        co = self.out_channels
        dout2 = dout.reshape(n * h * w, co)
        np.matmul(self._patches.T, dout2, out=self.dw.reshape(9 * c, co))
        if self.db is not None:
            self.db[...] = dout2.sum(axis=0)
        if not self.input_grad:
            return None
        dpatches = self.ws.get("dpatches", (n * h * w, 9 * c), dout.dtype)
        np.matmul(dout2, self.w.reshape(9 * c, co).T, out=dpatches)
        dxp = self.ws.get("dxp", (n, h + 2, w + 2, c), dout.dtype)
        dxp[...] = 0
        _col2im(dpatches, dxp, h, w, c)
        return dxp[:, 1 : 1 + h, 1 : 1 + w, :]


if not _HAVE_NUMBA:

    def _im2col(xp, patches, h, w, c):
        n = xp.shape[0]
        view = patches.reshape(n, h, w, 9, c)
        for ky in range(3):
            for kx in range(3):
                view[:, :, :, ky * 3 + kx, :] = xp[:, ky : ky + h, kx : kx + w, :]

    def _col2im(dpatches, dxp, h, w, c):
        n = dxp.shape[0]
        view = dpatches.reshape(n, h, w, 9, c)
        for ky in range(3):
            for kx in range(3):
                dxp[:, ky : ky + h, kx : kx + w, :] += view[:, :, :, ky * 3 + kx, :]


class BatchNorm(Layer):
    """Per-channel batch normalization over all non-channel axes.

    Batch statistics are used in training; exponentially averaged running
    statistics (momentum 0.1, unbiased variance) are used at inference and
    serialized with the model.
    """

    kind = "batchnorm"

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self._x: Optional[np.ndarray] = None
        self._mu: Optional[np.ndarray] = None
        self._inv_std: Optional[np.ndarray] = None

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def gradients(self):
        return [("gamma", self.dgamma), ("beta", self.dbeta)]

    def state(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, training):
        x2 = x.reshape(-1, self.channels)
        if training:
            mu = x2.mean(axis=0)
            var = x2.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            m = x2.shape[0]
            unbiased = var * (m / max(m - 1, 1))
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * unbiased
            self._x, self._mu, self._inv_std = x, mu, inv_std
        else:
            mu = self.running_mean
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            self._x = None
        out = self.ws.get("out", x.shape, x.dtype)
        scale = self.gamma * inv_std
        np.multiply(x, scale, out=out)
        out += self.beta - mu * scale
        return out

    def backward(self, dout):
        if self._x is None:
            raise RuntimeError("backward requires a training-mode forward pass")
        c = self.channels
        x2 = self._x.reshape(-1, c)
        d2 = dout.reshape(-1, c)
        m = x2.shape[0]
        xhat = self.ws.get("xhat", x2.shape, x2.dtype)
        np.subtract(x2, self._mu, out=xhat)
        xhat *= self._inv_std
        prod = self.ws.get("prod", x2.shape, x2.dtype)
        np.multiply(d2, xhat, out=prod)
        self.dgamma[...] = prod.sum(axis=0)
        self.dbeta[...] = d2.sum(axis=0)
        # dx = inv_std * gamma * (d - mean(d) - xhat * mean(d * xhat))
        dx = self.ws.get("dx", x2.shape, x2.dtype)
        np.multiply(d2, self.gamma, out=dx)
        g1 = dx.mean(axis=0)
        np.multiply(dx, xhat, out=prod)
        g2 = prod.mean(axis=0)
        xhat *= g2
        dx -= xhat
        dx -= g1
        dx *= self._inv_std
        return dx.reshape(dout.shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training):
        out = self.ws.get("out", x.shape, x.dtype)
        np.maximum(x, 0, out=out)
        self._out = out
        return out

    def backward(self, dout):
        dx = self.ws.get("dx", dout.shape, dout.dtype)
        mask = self.ws.get("mask", dout.shape, np.bool_)
        np.greater(self._out, 0, out=mask)
        np.multiply(dout, mask, out=dx)
        return dx


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; trailing odd rows/columns are dropped.

    The argmax (first-wins on ties) is kept so the backward pass routes each
    gradient to exactly one input cell.
    """

    kind = "maxpool2"

    @staticmethod
    def _cells(arr: np.ndarray, ho: int, wo: int):
        """The four strided (N, ho, wo, C) views covering each 2x2 window."""
        return (
            arr[:, 0 : ho * 2 : 2, 0 : wo * 2 : 2, :],
            arr[:, 0 : ho * 2 : 2, 1 : wo * 2 : 2, :],
            arr[:, 1 : ho * 2 : 2, 0 : wo * 2 : 2, :],
            arr[:, 1 : ho * 2 : 2, 1 : wo * 2 : 2, :],
        )

    def forward(self, x, training):
        n, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        out = self.ws.get("out", (n, ho, wo, c), x.dtype)
        idx = self.ws.get("idx", (n, ho, wo, c), np.int8)
        if _HAVE_NUMBA:
            _pool_forward(x, out, idx)
        else:
            stacked = np.stack(self._cells(x, ho, wo))
            idx[...] = stacked.argmax(axis=0)
            out[...] = np.take_along_axis(stacked, idx[None].astype(np.int64), axis=0)[0]
        self._idx = idx
        self._in_shape = x.shape
        return out

    def backward(self, dout):
        n, h, w, c = self._in_shape
        ho, wo = h // 2, w // 2
        dx = self.ws.get("dx", (n, h, w, c), dout.dtype)
        dx[...] = 0
        if _HAVE_NUMBA:
            _pool_backward(dout, self._idx, dx)
        else:
            routed = np.zeros((4, n, ho, wo, c), dtype=dout.dtype)
            np.put_along_axis(routed, self._idx[None].astype(np.int64), dout[None], axis=0)
            for cell, grad in zip(self._cells(dx, ho, wo), routed):
                cell[...] = grad
        return dx


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.w = _fan_in_uniform(rng, (in_features, out_features), in_features, dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def parameters(self):
        return [("w", self.w), ("b", self.b)]

    def gradients(self):
        return [("w", self.dw), ("b", self.db)]

    def forward(self, x, training):
        self._x = x
        out = self.ws.get("out", (x.shape[0], self.out_features), x.dtype)
        np.matmul(x, self.w, out=out)
        out += self.b
        return out

    def backward(self, dout):
        np.matmul(self._x.T, dout, out=self.dw)
        self.db[...] = dout.sum(axis=0)
        dx = self.ws.get("dx", (dout.shape[0], self.in_features), dout.dtype)
        np.matmul(dout, self.w.T, out=dx)
        return dx


class Sequential:
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        if self.layers:
            self.layers[0].input_grad = False

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        """Run all layers; the result is overwritten by the next forward call."""
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout: np.ndarray) -> None:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All model arrays (params then state per layer) in a fixed order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.parameters() + layer.state():
                out.append((f"{i:02d}.{layer.kind}.{name}", arr))
        return out

    def param_arrays(self) -> list[np.ndarray]:
        return [arr for layer in self.layers for _, arr in layer.parameters()]

    def grad_arrays(self) -> list[np.ndarray]:
        return [arr for layer in self.layers for _, arr in layer.gradients()]

    def snapshot(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.named_arrays()]

    def restore(self, snapshot: Sequence[np.ndarray]) -> None:
        arrays = self.named_arrays()
        if len(arrays) != len(snapshot):
            raise ValueError("snapshot does not match the network")
        for (_, arr), saved in zip(arrays, snapshot):
            arr[...] = saved


class Adam:
    """Adaptive per-parameter optimizer with the usual moment defaults."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self._scratch = [np.empty_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v, s in zip(self.params, grads, self.m, self.v, self._scratch):
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=s)
            m += s
            v *= self.beta2
            np.multiply(g, g, out=s)
            s *= 1.0 - self.beta2
            v += s
            np.divide(v, bc2, out=s)
            np.sqrt(s, out=s)
            s += self.eps
            np.divide(m, s, out=s)
            s *= self.lr / bc1
            p -= s
