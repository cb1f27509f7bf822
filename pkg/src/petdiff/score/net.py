"""Small trainable convolutional denoiser with hand-written backprop.

Three convolution layers (two k x k with tanh, one 1 x 1 linear output)
over channel-concatenated inputs: the noisy slice, the conditioning
channels, and a constant channel carrying the scalar noise conditioning.
Everything runs in float64 numpy so finite-difference gradient checks
are meaningful; parameter counts stay well under 1e5.
"""

from __future__ import annotations

import numpy as np

_PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


def _conv_forward(x, w, b):
    """Same-padded 2-D convolution via im2col.  x (B,C,H,W), w (O,C,k,k)."""
    batch, _, height, width = x.shape
    n_out, n_in, k, _ = w.shape
    if k == 1:
        cols = x.transpose(0, 2, 3, 1).reshape(batch, height * width, n_in)
    else:
        p = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(batch, height * width, n_in * k * k)
    out = cols @ w.reshape(n_out, -1).T + b
    return out.transpose(0, 2, 1).reshape(batch, n_out, height, width), cols


def _conv_backward(dout, cols, w, x_shape):
    """Gradients of a same-padded convolution w.r.t. weights, bias and input."""
    batch, n_in, height, width = x_shape
    n_out, _, k, _ = w.shape
    dflat = dout.reshape(batch, n_out, height * width).transpose(0, 2, 1)  # (B,HW,O)
    dw = (dflat.reshape(-1, n_out).T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = dflat @ w.reshape(n_out, -1)  # (B,HW,C*k*k)
    if k == 1:
        dx = dcols.reshape(batch, height, width, n_in).transpose(0, 3, 1, 2)
    else:
        p = k // 2
        dcols = dcols.reshape(batch, height, width, n_in, k, k)
        dxp = np.zeros((batch, n_in, height + 2 * p, width + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + height, j : j + width] += dcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        dx = dxp[:, :, p : p + height, p : p + width]
    return dw, db, dx


class ConvDenoiserNet:
    """conv(k) -> tanh -> conv(k) -> tanh -> conv(1x1) on stacked channels.

    Input channels: 1 (noisy slice) + ``n_cond_channels`` + 1 (scalar
    noise conditioning broadcast to a constant map).  Output: one slice.
    """

    def __init__(self, n_cond_channels: int, hidden: int = 16, kernel: int = 3, rng=None):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        rng = np.random.default_rng(rng)
        self.n_cond_channels = int(n_cond_channels)
        self.hidden = int(hidden)
        self.kernel = int(kernel)
        in_ch = self.in_channels
        k = self.kernel

        def _init(shape, fan_in):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

        self.params = {
            "w1": _init((hidden, in_ch, k, k), in_ch * k * k),
            "b1": np.zeros(hidden),
            "w2": _init((hidden, hidden, k, k), hidden * k * k),
            "b2": np.zeros(hidden),
            "w3": _init((1, hidden, 1, 1), hidden),
            "b3": np.zeros(1),
        }

    @property
    def in_channels(self) -> int:
        return 1 + self.n_cond_channels + 1

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _assemble(self, xb, scalars, condb):
        batch, height, width = xb.shape
        parts = [xb[:, None, :, :]]
        if self.n_cond_channels:
            if condb is None:
                raise ValueError(f"model expects {self.n_cond_channels} condition channels")
            if condb.shape != (batch, self.n_cond_channels, height, width):
                raise ValueError(
                    f"condition shape {condb.shape} != "
                    f"{(batch, self.n_cond_channels, height, width)}"
                )
            parts.append(condb)
        elif condb is not None and condb.shape[1] != 0:
            raise ValueError("model is unconditional but conditions were given")
        parts.append(np.broadcast_to(scalars[:, None, None, None], (batch, 1, height, width)))
        return np.ascontiguousarray(np.concatenate(parts, axis=1), dtype=np.float64)

    def forward_batch(self, xb, scalars, condb=None):
        """xb (B,H,W), scalars (B,), condb (B,C,H,W) -> output (B,H,W), cache."""
        xb = np.asarray(xb, dtype=np.float64)
        scalars = np.asarray(scalars, dtype=np.float64)
        condb = None if condb is None else np.asarray(condb, dtype=np.float64)
        x0 = self._assemble(xb, scalars, condb)
        z1, cols1 = _conv_forward(x0, self.params["w1"], self.params["b1"])
        a1 = np.tanh(z1)
        z2, cols2 = _conv_forward(a1, self.params["w2"], self.params["b2"])
        a2 = np.tanh(z2)
        z3, cols3 = _conv_forward(a2, self.params["w3"], self.params["b3"])
        cache = (x0.shape, a1, a2, cols1, cols2, cols3)
        return z3[:, 0, :, :], cache

    def backward_batch(self, dout, cache):
        """Parameter gradients for ``dLoss/d(output)`` from forward_batch."""
        x0_shape, a1, a2, cols1, cols2, cols3 = cache
        d3 = dout[:, None, :, :]
        dw3, db3, da2 = _conv_backward(d3, cols3, self.params["w3"], a2.shape)
        dz2 = da2 * (1.0 - a2**2)
        dw2, db2, da1 = _conv_backward(dz2, cols2, self.params["w2"], a1.shape)
        dz1 = da1 * (1.0 - a1**2)
        dw1, db1, _ = _conv_backward(dz1, cols1, self.params["w1"], x0_shape)
        return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}

    def __call__(self, x, scalar, cond=None):
        """Single-slice evaluation: x (H,W), scalar float, cond (C,H,W)."""
        x = np.asarray(x, dtype=np.float64)
        condb = None if cond is None else np.asarray(cond, dtype=np.float64)[None]
        out, _ = self.forward_batch(x[None], np.array([float(scalar)]), condb)
        return out[0]

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in _PARAM_ORDER])

    def set_flat_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        offset = 0
        for name in _PARAM_ORDER:
            p = self.params[name]
            self.params[name] = flat[offset : offset + p.size].reshape(p.shape).copy()
            offset += p.size

    def param_shapes(self):
        return [(name, tuple(self.params[name].shape)) for name in _PARAM_ORDER]
