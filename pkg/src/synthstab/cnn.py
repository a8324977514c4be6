"""Small float64 convolutional regressors, trained from scratch.

Two instances of the same architecture predict the translation pair
and the rotation/scale pair between two frames.  Everything is plain
numpy (with the shared kernels module doing the convolution work), so
gradients can be checked against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import IoFailureError, ShapeMismatchError
from .kernels import conv2d_forward, conv2d_backward

WEIGHTS_MAGIC = b"STBW1"


@dataclass(frozen=True)
class NetworkShape:
    """Architecture hyperparameters of one regressor head."""

    in_channels: int = 2
    conv_widths: tuple[int, ...] = (16, 32, 64, 64)
    fc_widths: tuple[int, ...] = (64, 32)
    out_dim: int = 2
    input_side: int = 64
    dropout_rate: float = 0.5

    def __post_init__(self) -> None:
        if self.in_channels < 1 or self.out_dim < 1:
            raise ShapeMismatchError("channel and output counts must be positive")
        if self.input_side < 2 ** len(self.conv_widths):
            raise ShapeMismatchError(
                f"input side {self.input_side} too small for "
                f"{len(self.conv_widths)} stride-2 layers"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ShapeMismatchError("dropout_rate must lie in [0, 1)")


class ConvRegressor:
    """Conv stack, global average pool, dropout, three linear layers."""

    def __init__(self, shape: NetworkShape, seed: int = 0) -> None:
        self.shape = shape
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        c_in = shape.in_channels
        for i, width in enumerate(shape.conv_widths, start=1):
            fan_in = c_in * 9
            self.params[f"conv{i}_w"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(width, c_in, 3, 3)
            )
            self.params[f"conv{i}_b"] = np.zeros(width, dtype=np.float64)
            c_in = width
        d_in = shape.conv_widths[-1]
        dims = (*shape.fc_widths, shape.out_dim)
        for i, d_out in enumerate(dims, start=1):
            self.params[f"fc{i}_w"] = rng.normal(
                0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in)
            )
            self.params[f"fc{i}_b"] = np.zeros(d_out, dtype=np.float64)
            d_in = d_out

    def param_names(self) -> list[str]:
        return list(self.params.keys())

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        s = self.shape
        if x.ndim != 4 or x.shape[1:] != (s.in_channels, s.input_side, s.input_side):
            raise ShapeMismatchError(
                f"expected (N, {s.in_channels}, {s.input_side}, {s.input_side}), "
                f"got {x.shape}"
            )
        return x

    def make_dropout_mask(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Inverted-dropout mask for a batch of ``n`` pooled vectors."""
        rate = self.shape.dropout_rate
        if rate == 0.0:
            return np.ones((n, self.shape.conv_widths[-1]), dtype=np.float64)
        keep = rng.random((n, self.shape.conv_widths[-1])) >= rate
        return keep.astype(np.float64) / (1.0 - rate)

    def forward(
        self,
        x: np.ndarray,
        dropout_mask: np.ndarray | None = None,
    ) -> tuple[np.ndarray, dict]:
        """Run the network; dropout applies only when a mask is given."""
        x = self._check_input(x)
        cache: dict = {"conv": [], "mask": dropout_mask}
        a = x
        n_conv = len(self.shape.conv_widths)
        for i in range(1, n_conv + 1):
            xp = np.pad(a, ((0, 0), (0, 0), (1, 1), (1, 1)))
            z = conv2d_forward(xp, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"], 2)
            a = np.maximum(z, 0.0)
            cache["conv"].append((xp, z > 0))
        cache["pool_hw"] = a.shape[2] * a.shape[3]
        cache["pool_shape"] = a.shape
        g = a.mean(axis=(2, 3))
        h = g if dropout_mask is None else g * dropout_mask
        cache["fc"] = []
        n_fc = len(self.shape.fc_widths) + 1
        for i in range(1, n_fc + 1):
            w = self.params[f"fc{i}_w"]
            b = self.params[f"fc{i}_b"]
            z = h @ w.T + b
            cache["fc"].append((h, z > 0))
            h = np.maximum(z, 0.0) if i < n_fc else z
        return h, cache

    def backward(self, cache: dict, dy: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of every parameter given d(loss)/d(output)."""
        grads: dict[str, np.ndarray] = {}
        n_fc = len(self.shape.fc_widths) + 1
        d = np.asarray(dy, dtype=np.float64)
        for i in range(n_fc, 0, -1):
            h, pos = cache["fc"][i - 1]
            if i < n_fc:
                d = d * pos
            grads[f"fc{i}_w"] = d.T @ h
            grads[f"fc{i}_b"] = d.sum(axis=0)
            d = d @ self.params[f"fc{i}_w"]
        if cache["mask"] is not None:
            d = d * cache["mask"]
        n, c, ho, wo = cache["pool_shape"]
        d = np.broadcast_to(
            d[:, :, None, None] / cache["pool_hw"], (n, c, ho, wo)
        ).copy()
        for i in range(len(self.shape.conv_widths), 0, -1):
            xp, pos = cache["conv"][i - 1]
            d = d * pos
            dxp, dw, db = conv2d_backward(xp, self.params[f"conv{i}_w"], d, 2)
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
            d = dxp[:, :, 1:-1, 1:-1]
        return grads

    def loss_and_grads(
        self,
        x: np.ndarray,
        targets: np.ndarray,
        dropout_mask: np.ndarray | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean-squared-error loss and its parameter gradients."""
        y, cache = self.forward(x, dropout_mask=dropout_mask)
        t = np.asarray(targets, dtype=np.float64)
        if t.shape != y.shape:
            raise ShapeMismatchError(f"targets {t.shape} vs outputs {y.shape}")
        diff = y - t
        loss = float(np.mean(diff * diff))
        dy = 2.0 * diff / diff.size
        return loss, self.backward(cache, dy)

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Forward pass with dropout disabled, in bounded batches."""
        x = self._check_input(x)
        outs = []
        for start in range(0, x.shape[0], batch_size):
            y, _ = self.forward(x[start : start + batch_size])
            outs.append(y)
        return np.concatenate(outs, axis=0)


class Adam:
    """Adam with bias correction; ``lr`` may be changed between steps."""

    def __init__(
        self,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Weights file
# ---------------------------------------------------------------------------


def save_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 tensors in insertion order (little-endian)."""
    from .dataset import atomic_write_bytes

    chunks = [WEIGHTS_MAGIC]
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes(order="C"))
    atomic_write_bytes(path, b"".join(chunks))


def load_tensors(path: str) -> dict[str, np.ndarray]:
    """Read a tensors file back; dict preserves on-disk order."""
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if payload[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise IoFailureError(f"{path}: bad weights magic")
    pos = len(WEIGHTS_MAGIC)
    tensors: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(payload):
            raise IoFailureError(f"{path}: truncated weights file")
        out = payload[pos : pos + n]
        pos += n
        return out

    while pos < len(payload):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        data = take(8 * count)
        tensors[name] = np.frombuffer(data, dtype="<f8").reshape(dims).copy()
    return tensors
