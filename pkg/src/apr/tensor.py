"""Differentiable array ops, Adam and the binary checkpoint format.

Arrays are ``torch.Tensor`` and reverse-mode differentiation is torch's
autograd; this module pins down the small op surface the models use, with
shape validation, and owns the optimizer and the on-disk format.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

DEFAULT_DTYPE = torch.float32

relu = torch.relu
tanh = torch.tanh
sigmoid = torch.sigmoid
softplus = F.softplus


def set_precision(bits: int) -> None:
    """Select 32- or 64-bit floats for newly created parameters."""
    global DEFAULT_DTYPE
    if bits not in (32, 64):
        raise ValueError(f"precision must be 32 or 64 bits, got {bits}")
    DEFAULT_DTYPE = torch.float32 if bits == 32 else torch.float64
    torch.set_default_dtype(DEFAULT_DTYPE)


def numpy_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator used for all environment randomness."""
    return np.random.Generator(np.random.Philox(seed))


def torch_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)


# --------------------------------------------------------------------------
# ops

def conv2d(x: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor | None = None,
           stride: int = 1, pad: int = 0) -> torch.Tensor:
    """2-D cross-correlation with zero padding, NCHW layout."""
    if x.dim() != 4 or kernel.dim() != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {tuple(x.shape)} and {tuple(kernel.shape)}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"conv2d channel mismatch: input C={c}, kernel C={kc}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ValueError(f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d bias shape {tuple(bias.shape)} != ({o},)")
    return F.conv2d(x, kernel, bias, stride=stride, padding=pad)


def conv_transpose2d(x: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor | None = None,
                     stride: int = 1, pad: int = 0) -> torch.Tensor:
    """Transposed convolution (upsampling); kernel is ``[C_in, C_out, kh, kw]``."""
    if x.dim() != 4 or kernel.dim() != 4:
        raise ValueError("conv_transpose2d expects 4-D input and kernel")
    if kernel.shape[0] != x.shape[1]:
        raise ValueError(f"conv_transpose2d channel mismatch: input C={x.shape[1]}, kernel C_in={kernel.shape[0]}")
    return F.conv_transpose2d(x, kernel, bias, stride=stride, padding=pad)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight in_features {weight.shape[1]}")
    return F.linear(x, weight, bias)


def bias_add(x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Add a per-channel bias to an NCHW tensor."""
    if bias.shape != (x.shape[1],):
        raise ValueError(f"bias shape {tuple(bias.shape)} does not match channels {x.shape[1]}")
    return x + bias.view(1, -1, 1, 1)


def concat_channels(xs: Iterable[torch.Tensor]) -> torch.Tensor:
    xs = list(xs)
    spatial = {tuple(t.shape[2:]) for t in xs}
    if len(spatial) != 1 or len({t.shape[0] for t in xs}) != 1:
        raise ValueError(f"concat_channels: incompatible shapes {[tuple(t.shape) for t in xs]}")
    return torch.cat(xs, dim=1)


def tile_to_grid(vec: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Give an ``[N, D]`` vector spatial extent: ``[N, D, height, width]``."""
    if vec.dim() != 2:
        raise ValueError(f"tile_to_grid expects [N, D], got {tuple(vec.shape)}")
    return vec[:, :, None, None].expand(-1, -1, height, width)


def reparameterize(mu: torch.Tensor, std: torch.Tensor, generator: torch.Generator | None = None,
                   noise: torch.Tensor | None = None) -> torch.Tensor:
    if noise is None:
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + std * noise


def gaussian_kl(mu_q, std_q, mu_p, std_p) -> torch.Tensor:
    """Elementwise KL(N(mu_q, std_q^2) || N(mu_p, std_p^2))."""
    var_ratio = (std_q / std_p) ** 2
    return 0.5 * (var_ratio + ((mu_q - mu_p) / std_p) ** 2 - 1.0 - torch.log(var_ratio))


def gaussian_log_likelihood(x, mu, std) -> torch.Tensor:
    """Elementwise log N(x; mu, std^2)."""
    std = torch.as_tensor(std, dtype=mu.dtype)
    return -0.5 * ((x - mu) / std) ** 2 - torch.log(std) - 0.5 * math.log(2 * math.pi)


def conv_lstm_cell(x, h, c, weight, bias=None):
    """One ConvLSTM step.

    ``weight`` maps ``cat(x, h)`` to the four gates ``(i, f, o, g)`` stacked
    along the output channel axis; ``'same'`` zero padding keeps H x W.
    """
    if x.shape[2:] != h.shape[2:] or h.shape != c.shape:
        raise ValueError(f"conv_lstm_cell spatial mismatch: x {tuple(x.shape)}, h {tuple(h.shape)}, c {tuple(c.shape)}")
    k = weight.shape[-1]
    gates = conv2d(torch.cat([x, h], dim=1), weight, bias, stride=1, pad=k // 2)
    i, f, o, g = torch.chunk(gates, 4, dim=1)
    c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h_new = torch.sigmoid(o) * torch.tanh(c_new)
    return h_new, c_new


# --------------------------------------------------------------------------
# differentiation

def backward(loss: torch.Tensor, params: Iterable[torch.Tensor], retain_graph: bool = False):
    """Gradients of a scalar loss; parameters the loss does not reach get zeros."""
    params = list(params)
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=retain_graph)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    A step whose gradients contain any non-finite value is skipped as a
    whole; ``skipped`` counts those events.
    """

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0
        self.skipped = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self, grads=None) -> bool:
        if grads is None:
            grads = [torch.zeros_like(p) if p.grad is None else p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError("Adam.step: gradient list length does not match parameters")
        if not all(torch.isfinite(g).all() for g in grads):
            self.skipped += 1
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            if self.lr == 0:
                continue
            denom = (v / c2).sqrt_().add_(self.eps)
            p.addcdiv_(m / c1, denom, value=-self.lr)
        return True

    def state_tensors(self, prefix: str) -> dict:
        out = {f"{prefix}.t": torch.tensor([self.t], dtype=torch.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m.{i}"] = m
            out[f"{prefix}.v.{i}"] = v
        return out

    def load_state_tensors(self, prefix: str, tensors: Mapping[str, torch.Tensor]):
        self.t = int(tensors[f"{prefix}.t"][0])
        for i in range(len(self.params)):
            self.m[i] = tensors[f"{prefix}.m.{i}"].clone()
            self.v[i] = tensors[f"{prefix}.v.{i}"].clone()


def adam_step(params, grads, state: Adam, lr=None, beta1=None, beta2=None, eps=None) -> bool:
    """Functional form: apply one Adam update held in ``state`` to ``params``."""
    for name, val in (("lr", lr), ("beta1", beta1), ("beta2", beta2), ("eps", eps)):
        if val is not None:
            setattr(state, name, val)
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("adam_step: parameters do not match the optimizer state")
    return state.step(list(grads))


# --------------------------------------------------------------------------
# checkpoint format
#   header: magic b"APRT", u32 version, u32 tensor count
#   record: u32 name length, name utf-8, u8 dtype tag, u32 rank, u64 dims..., raw data
# all integers and data little-endian

MAGIC = b"APRT"
VERSION = 1
_DTYPES = {
    0: (torch.float32, "<f4"),
    1: (torch.float64, "<f8"),
    2: (torch.int64, "<i8"),
    3: (torch.uint8, "|u1"),
}
_TAGS = {dt: tag for tag, (dt, _) in _DTYPES.items()}


class CheckpointError(IOError):
    pass


def save_checkpoint(path, tensors: Mapping[str, torch.Tensor]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _TAGS:
            raise CheckpointError(f"unsupported dtype {t.dtype} for tensor {name!r}")
        tag = _TAGS[t.dtype]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BI", tag, t.dim()))
        parts.append(struct.pack(f"<{t.dim()}Q", *t.shape))
        parts.append(t.numpy().astype(_DTYPES[tag][1], copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, torch.Tensor]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        return _parse_records(buf, path)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc


def _parse_records(buf: bytes, path) -> dict[str, torch.Tensor]:
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        tag, rank = struct.unpack_from("<BI", buf, off)
        off += 5
        dims = struct.unpack_from(f"<{rank}Q", buf, off)
        off += 8 * rank
        torch_dt, np_dt = _DTYPES[tag]
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, dtype=np_dt, count=n, offset=off).reshape(dims)
        off += arr.nbytes
        out[name] = torch.from_numpy(arr.copy())
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return out
