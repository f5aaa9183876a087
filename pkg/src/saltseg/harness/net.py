"""A three-layer 3-D convolutional network with hand-written backprop.

Inputs and activations are channel-first ``(C, X, Y, Z)``.  Every layer is
a 3x3x3 convolution with zero padding 1, so spatial dims are preserved;
ReLU sits between layers, none after the last.
"""

from __future__ import annotations

from itertools import product

import numpy as np

__all__ = ["conv3d", "conv3d_backward", "TinyNet"]

_TAPS = tuple(product(range(3), repeat=3))


# largest im2col buffer (elements) before falling back to the per-tap loop
_IM2COL_LIMIT = 1 << 23


def _im2col(xp: np.ndarray, shape) -> np.ndarray:
    """``(C*27, V)`` matrix of shifted windows, rows ordered (channel, tap)."""
    X, Y, Z = shape
    cols = np.empty((xp.shape[0], 27, X, Y, Z), dtype=xp.dtype)
    for k, (dx, dy, dz) in enumerate(_TAPS):
        cols[:, k] = xp[:, dx:dx + X, dy:dy + Y, dz:dz + Z]
    return cols.reshape(xp.shape[0] * 27, -1)


def conv3d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, keep_cols: bool = False):
    """Same-padded 3x3x3 convolution.

    Returns ``(out, cols)`` where ``cols`` is the im2col matrix when
    ``keep_cols`` is set (needed for the backward pass), else None.
    """
    cin, X, Y, Z = x.shape
    cout = weight.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    if keep_cols or cin * 27 * X * Y * Z <= _IM2COL_LIMIT:
        cols = _im2col(xp, (X, Y, Z))
        out = weight.reshape(cout, -1) @ cols
        out += bias[:, None]
        return out.reshape(cout, X, Y, Z), (cols if keep_cols else None)
    out = np.empty((cout, X, Y, Z), dtype=x.dtype)
    out[...] = bias[:, None, None, None]
    for dx, dy, dz in _TAPS:
        out += np.tensordot(weight[:, :, dx, dy, dz], xp[:, dx:dx + X, dy:dy + Y, dz:dz + Z], axes=(1, 0))
    return out, None


def conv3d_backward(cols: np.ndarray, weight: np.ndarray, dout: np.ndarray, need_input_grad: bool = True):
    """Gradients of :func:`conv3d` for weight, bias and (optionally) input."""
    cout, X, Y, Z = dout.shape
    cin = weight.shape[1]
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.T).reshape(weight.shape)
    db = d2.sum(axis=1)
    if not need_input_grad:
        return dw, db, None
    dcols = (weight.reshape(cout, -1).T @ d2).reshape(cin, 27, X, Y, Z)
    dxp = np.zeros((cin, X + 2, Y + 2, Z + 2), dtype=dout.dtype)
    for k, (dx, dy, dz) in enumerate(_TAPS):
        dxp[:, dx:dx + X, dy:dy + Y, dz:dz + Z] += dcols[:, k]
    return dw, db, dxp[:, 1:-1, 1:-1, 1:-1]


class TinyNet:
    """conv(1->8) -> ReLU -> conv(8->16) -> ReLU -> conv(16->N)."""

    def __init__(self, out_channels: int, hidden=(8, 16), in_channels: int = 1, rng=None,
                 dtype=np.float64, params: dict | None = None, input_gain: float = 3.0,
                 input_range: tuple[float, float] = (0.0, 1.0)):
        """Seeded fan-in uniform initialisation.

        Weights are ``U(-b, b)`` with ``b = sqrt(6 / fan_in)``.  The first
        layer is scaled by ``input_gain`` and its biases are chosen so each
        unit's ReLU threshold lands at a uniform point of ``input_range``;
        otherwise the thresholds sit outside the normalised intensity range
        and the net starts out almost linear in the input.
        """
        self.dtype = np.dtype(dtype)
        plan = (in_channels, *hidden, out_channels)
        self.plan = plan
        if params is not None:
            self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {}
        for i, (cin, cout) in enumerate(zip(plan[:-1], plan[1:]), start=1):
            fan_in = cin * 27
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, (cout, cin, 3, 3, 3))
            if i == 1:
                w *= input_gain
                # unit fires where sum(w) * x + b > 0; put the kink at x = t
                t = rng.uniform(*input_range, cout)
                b = -w.sum(axis=(1, 2, 3, 4)) * t
            else:
                b = rng.uniform(-1 / np.sqrt(fan_in), 1 / np.sqrt(fan_in), cout)
            self.params[f"conv{i}.weight"] = w.astype(self.dtype)
            self.params[f"conv{i}.bias"] = b.astype(self.dtype)

    @classmethod
    def from_params(cls, params: dict, dtype=None) -> "TinyNet":
        layers = sorted({k.split(".")[0] for k in params}, key=lambda s: int(s[4:]))
        shapes = [params[f"{l}.weight"].shape for l in layers]
        hidden = tuple(s[0] for s in shapes[:-1])
        dtype = dtype or params[f"{layers[0]}.weight"].dtype
        return cls(shapes[-1][0], hidden, shapes[0][1], dtype=dtype, params=params)

    @property
    def num_layers(self) -> int:
        return len(self.plan) - 1

    def forward(self, x: np.ndarray, train: bool = True):
        """Returns ``(logits, cache)``; ``x`` is ``(C_in, X, Y, Z)``.

        With ``train=False`` nothing is cached and large inputs are convolved
        tap by tap to bound memory.
        """
        h = np.asarray(x, dtype=self.dtype)
        cache = []
        for i in range(1, self.num_layers + 1):
            z, cols = conv3d(h, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"], keep_cols=train)
            if train:
                cache.append((cols, z))
            h = np.maximum(z, 0) if i < self.num_layers else z
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)[0]

    def backward(self, cache, dlogits: np.ndarray) -> dict:
        grads = {}
        d = np.asarray(dlogits, dtype=self.dtype)
        for i in range(self.num_layers, 0, -1):
            cols, z = cache[i - 1]
            if i < self.num_layers:
                d = d * (z > 0)
            dw, db, d = conv3d_backward(cols, self.params[f"conv{i}.weight"], d, need_input_grad=i > 1)
            grads[f"conv{i}.weight"] = dw
            grads[f"conv{i}.bias"] = db
        return grads
