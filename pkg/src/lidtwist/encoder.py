"""Frozen tactile embedding of recent penetration readings.

The encoder is a small tanh MLP over a window of flattened 5 x k normalised
penetration matrices. It is pre-trained (with a throwaway linear head) to
regress the lid's torsional friction multiplier and then frozen.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import ConfigError

MAGIC = b"LTENC\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sHIIIII")  # magic, version, W, k, fingers, d_z, n_hidden


class TactileWindow:
    """Last ``size`` pressure frames per environment, oldest first."""

    def __init__(self, size: int, frame_dim: int, n_env: int = 1):
        self.size = size
        self.frame_dim = frame_dim
        self.data = np.zeros((n_env, size, frame_dim))

    def reset(self, mask=None):
        if mask is None:
            self.data[:] = 0.0
        else:
            self.data[mask] = 0.0

    def push(self, frames):
        frames = np.asarray(frames, dtype=float).reshape(self.data.shape[0], self.frame_dim)
        self.data[:, :-1] = self.data[:, 1:]
        self.data[:, -1] = frames

    def flat(self):
        return self.data.reshape(self.data.shape[0], -1)


@dataclass
class EncoderParams:
    window: int
    k: int
    fingers: int
    weights: list  # [(W_in_out, b_out), ...] float64
    frozen: bool = True
    passthrough: bool = False

    @property
    def input_dim(self):
        return self.window * self.fingers * self.k

    @property
    def d_z(self):
        if self.passthrough:
            return self.fingers * self.k
        return self.weights[-1][1].shape[0]

    def checksum(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()


def init_params(window=10, k=9, fingers=5, d_z=16, hidden=(64, 64), seed=0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    sizes = [window * fingers * k, *hidden, d_z]
    weights = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
        weights.append((w, np.zeros(n_out)))
    return EncoderParams(window=window, k=k, fingers=fingers, weights=weights, frozen=False)


def passthrough_params(window=10, k=9, fingers=5) -> EncoderParams:
    return EncoderParams(window=window, k=k, fingers=fingers, weights=[], passthrough=True)


def encode(window, params: EncoderParams) -> np.ndarray:
    """Embed a (batch of) flattened window(s); returns (..., d_z)."""
    x = window.flat() if isinstance(window, TactileWindow) else np.asarray(window, dtype=float)
    if x.shape[-1] != params.input_dim:
        raise ConfigError(f"window has {x.shape[-1]} inputs, encoder expects {params.input_dim}")
    if params.passthrough:
        return x[..., -params.fingers * params.k :].copy()
    h = x
    for w, b in params.weights:
        h = np.tanh(h @ w + b)
    return h


def to_bytes(params: EncoderParams) -> bytes:
    buf = io.BytesIO()
    hidden = [w.shape[1] for w, _ in params.weights[:-1]]
    d_z = 0 if params.passthrough else params.d_z
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, params.window, params.k, params.fingers, d_z, len(hidden)))
    buf.write(struct.pack(f"<{len(hidden)}I", *hidden))
    buf.write(struct.pack("<B", 1 if params.frozen else 0))
    for w, b in params.weights:
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> EncoderParams:
    magic, version, window, k, fingers, d_z, n_hidden = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ConfigError("not a tactile encoder file")
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported encoder file version {version}")
    off = _HEADER.size
    hidden = list(struct.unpack_from(f"<{n_hidden}I", data, off))
    off += 4 * n_hidden
    (frozen,) = struct.unpack_from("<B", data, off)
    off += 1
    if d_z == 0:
        return passthrough_params(window, k, fingers)
    sizes = [window * fingers * k, *hidden, d_z]
    weights = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=n_in * n_out, offset=off).reshape(n_in, n_out)
        off += 8 * n_in * n_out
        b = np.frombuffer(data, dtype="<f8", count=n_out, offset=off)
        off += 8 * n_out
        weights.append((w.astype(np.float64), b.astype(np.float64)))
    if off != len(data):
        raise ConfigError("trailing bytes in encoder file")
    return EncoderParams(window=window, k=k, fingers=fingers, weights=weights, frozen=bool(frozen))


def save(params: EncoderParams, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(params))


def load(path) -> EncoderParams:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


@dataclass
class PretrainResult:
    params: EncoderParams
    head_w: np.ndarray  # (d_z,)
    head_b: float
    target_mean: float
    target_std: float
    final_loss: float

    def predict(self, windows) -> np.ndarray:
        z = encode(windows, self.params)
        return (z @ self.head_w + self.head_b) * self.target_std + self.target_mean


def pretrain(
    windows,
    frictions,
    window=10,
    k=9,
    fingers=5,
    d_z=16,
    hidden=(64, 64),
    epochs=400,
    batch_size=256,
    lr=1e-3,
    seed=0,
) -> PretrainResult:
    """Fit encoder + linear head to friction by least squares, then freeze."""
    import torch

    x = np.asarray(windows, dtype=np.float64)
    y = np.asarray(frictions, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("empty pretraining dataset")
    if x.shape[0] != y.shape[0]:
        raise ValueError("windows and frictions differ in length")
    mean = float(y.mean())
    std = float(y.std()) or 1.0
    init = init_params(window, k, fingers, d_z, hidden, seed)
    if x.shape[1] != init.input_dim:
        raise ConfigError(f"window has {x.shape[1]} inputs, encoder expects {init.input_dim}")

    gen = torch.Generator().manual_seed(seed)
    layers = [
        (torch.tensor(w, requires_grad=True), torch.tensor(b, requires_grad=True)) for w, b in init.weights
    ]
    head_w = torch.zeros(d_z, dtype=torch.float64, requires_grad=True)
    head_b = torch.zeros((), dtype=torch.float64, requires_grad=True)
    params = [p for pair in layers for p in pair] + [head_w, head_b]
    opt = torch.optim.Adam(params, lr=lr)
    xt = torch.from_numpy(x)
    yt = torch.from_numpy((y - mean) / std)

    def forward(batch):
        h = batch
        for w, b in layers:
            h = torch.tanh(h @ w + b)
        return h @ head_w + head_b

    n = x.shape[0]
    loss_val = float("nan")
    for _ in range(epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            loss = torch.mean((forward(xt[idx]) - yt[idx]) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
    with torch.no_grad():
        loss_val = float(torch.mean((forward(xt) - yt) ** 2))
    frozen = EncoderParams(
        window=window,
        k=k,
        fingers=fingers,
        weights=[(w.detach().numpy().copy(), b.detach().numpy().copy()) for w, b in layers],
        frozen=True,
    )
    return PretrainResult(
        params=frozen,
        head_w=head_w.detach().numpy().copy(),
        head_b=float(head_b.detach()),
        target_mean=mean,
        target_std=std,
        final_loss=loss_val,
    )
