"""Differentiable building blocks shared by the enhancement model.

Thin layers over torch primitives with the exact semantics the streaming
model needs: channel normalization with explicitly controlled statistics,
pointwise 2-D convolution blocks, causal dilated 1-D convolution, and the
temporal convolution module.  Also owns the flat-binary checkpoint format
and finite-difference helpers used by the gradient checks.

Tensors are plain torch.Tensor; tests and gradient checks run in double
precision, inference may run in single precision.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


def seed_all(seed: int) -> None:
    torch.manual_seed(seed)


class BatchNorm(nn.Module):
    """Per-channel normalization over (batch, time, freq) with running stats.

    Training mode normalizes by batch statistics and, when update_stats is
    set, folds them into the running estimates with 0.9 retention.  Eval
    mode is a deterministic affine map from the frozen running statistics,
    which keeps inference frame-local and therefore causal.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.update_stats = True
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, C, ...) — stats are taken over every non-channel dim.
        dims = [0] + list(range(2, x.dim()))
        shape = [1, -1] + [1] * (x.dim() - 2)
        if self.training:
            mean = x.mean(dim=dims)
            var = x.var(dim=dims, unbiased=False)
            if self.update_stats:
                count = x.numel() // x.shape[1]
                unbiased = var.detach() * count / max(count - 1, 1)
                with torch.no_grad():
                    self.running_mean.mul_(self.momentum).add_(
                        (1 - self.momentum) * mean.detach())
                    self.running_var.mul_(self.momentum).add_(
                        (1 - self.momentum) * unbiased)
        else:
            mean, var = self.running_mean, self.running_var
        x_hat = (x - mean.reshape(shape)) / torch.sqrt(var.reshape(shape) + self.eps)
        return x_hat * self.weight.reshape(shape) + self.bias.reshape(shape)


class ConvBlock2d(nn.Module):
    """Conv2d + normalization + PReLU, the per-stream feature block.

    Kernels only extend along the frequency axis (time extent 1), so the
    block is trivially causal.  Transposed mode mirrors a stride-2 block
    for the decoder.
    """

    def __init__(self, in_channels: int, out_channels: int,
                 freq_kernel: int = 1, freq_stride: int = 1,
                 transposed: bool = False):
        super().__init__()
        pad = (0, freq_kernel // 2)
        if transposed:
            self.conv = nn.ConvTranspose2d(
                in_channels, out_channels, (1, freq_kernel),
                stride=(1, freq_stride), padding=pad,
                output_padding=(0, freq_stride - 1))
        else:
            self.conv = nn.Conv2d(
                in_channels, out_channels, (1, freq_kernel),
                stride=(1, freq_stride), padding=pad)
        self.norm = BatchNorm(out_channels)
        self.act = nn.PReLU(out_channels, init=0.25)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.norm(self.conv(x)))


def conv2d_1x1(x: torch.Tensor, weight: torch.Tensor,
               bias: torch.Tensor | None = None) -> torch.Tensor:
    """Per-position linear map across channels: (B, C_in, T, F) -> (B, C_out, T, F)."""
    if x.dim() != 4:
        raise ValueError(f"expected (B, C, T, F) input, got shape {tuple(x.shape)}")
    if weight.dim() != 2 or weight.shape[1] != x.shape[1]:
        raise ValueError(
            f"weight shape {tuple(weight.shape)} does not match {x.shape[1]} input channels")
    out = torch.einsum("oc,bctf->botf", weight, x)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def causal_dilated_conv1d(x: torch.Tensor, weight: torch.Tensor,
                          bias: torch.Tensor | None = None,
                          dilation: int = 1, groups: int = 1) -> torch.Tensor:
    """Left-padded dilated conv over time: output frame t sees only frames <= t.

    x: (B, C_in, T), weight: (C_out, C_in/groups, k).
    """
    if x.dim() != 3:
        raise ValueError(f"expected (B, C, T) input, got shape {tuple(x.shape)}")
    if weight.shape[1] * groups != x.shape[1]:
        raise ValueError(
            f"weight shape {tuple(weight.shape)} with {groups} groups does not "
            f"match {x.shape[1]} input channels")
    k = weight.shape[2]
    padded = F.pad(x, ((k - 1) * dilation, 0))
    return F.conv1d(padded, weight, bias, dilation=dilation, groups=groups)


class CausalConv1d(nn.Module):
    """Module wrapper for causal_dilated_conv1d with learnable weights."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 dilation: int = 1, groups: int = 1):
        super().__init__()
        self.dilation = dilation
        self.groups = groups
        scale = 1.0 / np.sqrt(in_channels // groups * kernel)
        self.weight = nn.Parameter(
            torch.empty(out_channels, in_channels // groups, kernel).uniform_(-scale, scale))
        self.bias = nn.Parameter(torch.zeros(out_channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return causal_dilated_conv1d(x, self.weight, self.bias,
                                     dilation=self.dilation, groups=self.groups)


class Tcm(nn.Module):
    """Temporal convolution module: expand, depthwise causal dilated conv, project.

    Residual block over (B, C, T) feature sequences: 1x1 channel-expanding
    conv -> PReLU -> depthwise causal dilated conv (k=3) -> PReLU -> 1x1
    projection back, plus the identity path.
    """

    def __init__(self, channels: int, hidden: int, dilation: int, kernel: int = 3):
        super().__init__()
        self.expand = nn.Conv1d(channels, hidden, 1)
        self.act1 = nn.PReLU(hidden, init=0.25)
        self.depthwise = CausalConv1d(hidden, hidden, kernel, dilation=dilation,
                                      groups=hidden)
        self.act2 = nn.PReLU(hidden, init=0.25)
        self.project = nn.Conv1d(hidden, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act1(self.expand(x))
        h = self.act2(self.depthwise(h))
        return x + self.project(h)


def set_stats_updates(model: nn.Module, enabled: bool) -> None:
    """Toggle running-statistics updates on every BatchNorm in the model."""
    for module in model.modules():
        if isinstance(module, BatchNorm):
            module.update_stats = enabled


def backward(loss: torch.Tensor, wrt) -> tuple:
    """Analytic gradients of a recorded forward pass.

    Returns gradients of `loss` with respect to each tensor in `wrt`.
    Raises if no forward graph was recorded for the loss.
    """
    if loss.grad_fn is None:
        raise RuntimeError("backward without a recorded forward pass")
    return torch.autograd.grad(loss, wrt)


# --------------------------------------------------------------------------
# Checkpoint format: flat little-endian float64 binary + text manifest
# --------------------------------------------------------------------------

def _state_entries(model: nn.Module):
    """Deterministically ordered (name, tensor) pairs: parameters then buffers."""
    entries = list(model.named_parameters())
    entries += list(model.named_buffers())
    return entries


def save_checkpoint(model: nn.Module, path, config: dict | None = None) -> None:
    """Write parameters and buffers as float64 LE binary plus a manifest.

    The manifest at <path>.manifest holds one 'name\\tshape\\toffset' line per
    tensor (offset in float64 elements) preceded by '# key = value' lines
    carrying the optional config.
    """
    path = Path(path)
    chunks = []
    lines = []
    if config:
        for key, value in config.items():
            lines.append(f"# {key} = {value}")
    offset = 0
    for name, tensor in _state_entries(model):
        arr = tensor.detach().cpu().numpy().astype("<f8")
        chunks.append(arr.tobytes(order="C"))
        shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        lines.append(f"{name}\t{shape}\t{offset}")
        offset += arr.size
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    Path(str(path) + ".manifest").write_text("\n".join(lines) + "\n")


def read_manifest(path) -> tuple[dict, list]:
    """Parse a checkpoint manifest into (config, [(name, shape, offset)])."""
    config = {}
    entries = []
    for line in Path(str(path) + ".manifest").read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            config[key.strip()] = value.strip()
            continue
        name, shape_str, offset = line.split("\t")
        shape = () if shape_str == "scalar" else tuple(
            int(d) for d in shape_str.split("x"))
        entries.append((name, shape, int(offset)))
    return config, entries


def load_checkpoint(model: nn.Module, path) -> dict:
    """Restore parameters and buffers written by save_checkpoint; returns config."""
    path = Path(path)
    config, entries = read_manifest(path)
    flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    state = dict(_state_entries(model))
    seen = set()
    for name, shape, offset in entries:
        if name not in state:
            raise ValueError(f"checkpoint tensor {name!r} not present in model")
        target = state[name]
        count = int(np.prod(shape)) if shape else 1
        values = flat[offset:offset + count].reshape(shape)
        if tuple(target.shape) != shape:
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint {shape}, "
                f"model {tuple(target.shape)}")
        with torch.no_grad():
            target.copy_(torch.from_numpy(values.copy()).to(target.dtype))
        seen.add(name)
    missing = set(state) - seen
    if missing:
        raise ValueError(f"checkpoint missing tensors: {sorted(missing)}")
    return config


# --------------------------------------------------------------------------
# Finite differences
# --------------------------------------------------------------------------

def finite_diff_grad(f, tensor: torch.Tensor, indices, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() at flat coordinates of tensor.

    f must re-run the forward pass from current parameter values; the tensor
    is perturbed in place and always restored.
    """
    flat = tensor.data.reshape(-1)
    grads = np.empty(len(indices))
    for j, idx in enumerate(indices):
        orig = flat[idx].item()
        flat[idx] = orig + eps
        f_plus = float(f())
        flat[idx] = orig - eps
        f_minus = float(f())
        flat[idx] = orig
        grads[j] = (f_plus - f_minus) / (2.0 * eps)
    return grads
