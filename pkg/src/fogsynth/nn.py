"""Minimal dense/conv network engine over flat float64 parameter vectors.

Every model in the pipeline (generators, discriminators, autoencoder halves,
classifiers) is a flat parameter vector plus a layout that names each layer
tensor. Gradients are computed by explicit backpropagation so they can be
cross-checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

Shape = tuple[int, ...]
Layout = tuple[tuple[str, Shape], ...]

ACTIVATIONS = ("relu", "sigmoid", "linear")


class ArchError(ValueError):
    """Raised for malformed architecture descriptors."""


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "sigmoid":
        return expit(pre)
    if name == "linear":
        return pre
    raise ArchError(f"unknown activation {name!r}")


def _activation_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    """Derivative of the activation w.r.t. its preactivation."""
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "sigmoid":
        return post * (1.0 - post)
    if name == "linear":
        return np.ones_like(pre)
    raise ArchError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class Mlp:
    """Fully-connected architecture: sizes[0] inputs through sizes[-1] outputs."""

    sizes: tuple[int, ...]
    hidden: str = "relu"
    out: str = "linear"

    def validate(self) -> None:
        if len(self.sizes) < 2:
            raise ArchError("Mlp needs at least an input and an output size")
        if any(int(s) <= 0 for s in self.sizes):
            raise ArchError(f"Mlp sizes must be positive, got {self.sizes}")
        for act in (self.hidden, self.out):
            if act not in ACTIVATIONS:
                raise ArchError(f"unknown activation {act!r}")

    def layer_activations(self) -> list[str]:
        n_layers = len(self.sizes) - 1
        return [self.hidden] * (n_layers - 1) + [self.out]

    def layout(self) -> Layout:
        entries = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            entries.append((f"w{i}", (n_out, n_in)))
            entries.append((f"b{i}", (n_out,)))
        return tuple(entries)


@dataclass(frozen=True)
class Conv1dNet:
    """Two conv stages plus a dense head, for 1 x L inputs."""

    input_len: int
    num_classes: int
    channels: tuple[int, int] = (16, 32)
    kernel: int = 5
    stride: int = 2

    def validate(self) -> None:
        if self.input_len <= 0 or self.num_classes <= 0:
            raise ArchError("Conv1dNet needs positive input_len and num_classes")
        if self.kernel <= 0 or self.stride <= 0 or len(self.channels) != 2:
            raise ArchError("Conv1dNet needs positive kernel/stride and two channel widths")
        l1, l2 = self.stage_lens()
        if l1 < 1 or l2 < 1:
            raise ArchError(f"input_len {self.input_len} too short for kernel/stride")

    def stage_lens(self) -> tuple[int, int]:
        l1 = (self.input_len - self.kernel) // self.stride + 1
        l2 = (l1 - self.kernel) // self.stride + 1
        return l1, l2

    def layout(self) -> Layout:
        c1, c2 = self.channels
        _, l2 = self.stage_lens()
        return (
            ("k0", (c1, 1, self.kernel)),
            ("c0", (c1,)),
            ("k1", (c2, c1, self.kernel)),
            ("c1", (c2,)),
            ("wh", (self.num_classes, c2 * l2)),
            ("bh", (self.num_classes,)),
        )


@dataclass(frozen=True)
class Conv2dNet:
    """Two conv stages plus a dense head, for h x w grid inputs."""

    grid: tuple[int, int]
    num_classes: int
    channels: tuple[int, int] = (16, 32)
    kernel: int = 3
    stride: int = 2

    def validate(self) -> None:
        h, w = self.grid
        if h <= 0 or w <= 0 or self.num_classes <= 0:
            raise ArchError("Conv2dNet needs a positive grid and num_classes")
        if self.kernel <= 0 or self.stride <= 0 or len(self.channels) != 2:
            raise ArchError("Conv2dNet needs positive kernel/stride and two channel widths")
        (h1, w1), (h2, w2) = self.stage_shapes()
        if min(h1, w1, h2, w2) < 1:
            raise ArchError(f"grid {self.grid} too small for kernel/stride")

    def stage_shapes(self) -> tuple[tuple[int, int], tuple[int, int]]:
        def out(n: int) -> int:
            return (n - self.kernel) // self.stride + 1

        h, w = self.grid
        h1, w1 = out(h), out(w)
        return (h1, w1), (out(h1), out(w1))

    def layout(self) -> Layout:
        c1, c2 = self.channels
        _, (h2, w2) = self.stage_shapes()
        return (
            ("k0", (c1, 1, self.kernel, self.kernel)),
            ("c0", (c1,)),
            ("k1", (c2, c1, self.kernel, self.kernel)),
            ("c1", (c2,)),
            ("wh", (self.num_classes, c2 * h2 * w2)),
            ("bh", (self.num_classes,)),
        )


Arch = Mlp | Conv1dNet | Conv2dNet


@dataclass
class ModelParams:
    """A model as a flat parameter vector plus its layer layout.

    The layout names each tensor and records its shape; `arch` carries the
    architecture descriptor needed to run the network.
    """

    values: np.ndarray
    layout: Layout
    role: str
    arch: Arch

    def validate(self) -> None:
        expected = sum(int(np.prod(shape)) for _, shape in self.layout)
        if self.values.ndim != 1 or len(self.values) != expected:
            raise ValueError(
                f"layout describes {expected} parameters, vector has {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite values")

    def copy(self) -> "ModelParams":
        return replace(self, values=self.values.copy())

    def size(self) -> int:
        return int(len(self.values))

    def _offsets(self) -> Iterator[tuple[str, Shape, int, int]]:
        offset = 0
        for name, shape in self.layout:
            count = int(np.prod(shape))
            yield name, shape, offset, offset + count
            offset += count

    def view(self, name: str) -> np.ndarray:
        """Reshaped view into the flat vector; writes propagate."""
        for entry, shape, lo, hi in self._offsets():
            if entry == name:
                return self.values[lo:hi].reshape(shape)
        raise KeyError(name)

    def views(self) -> dict[str, np.ndarray]:
        return {name: self.values[lo:hi].reshape(shape) for name, shape, lo, hi in self._offsets()}


def arch_to_dict(arch: Arch) -> dict:
    if isinstance(arch, Mlp):
        return {"type": "mlp", "sizes": list(arch.sizes), "hidden": arch.hidden, "out": arch.out}
    if isinstance(arch, Conv1dNet):
        return {
            "type": "conv1d",
            "input_len": arch.input_len,
            "num_classes": arch.num_classes,
            "channels": list(arch.channels),
            "kernel": arch.kernel,
            "stride": arch.stride,
        }
    if isinstance(arch, Conv2dNet):
        return {
            "type": "conv2d",
            "grid": list(arch.grid),
            "num_classes": arch.num_classes,
            "channels": list(arch.channels),
            "kernel": arch.kernel,
            "stride": arch.stride,
        }
    raise ArchError(f"unsupported architecture {type(arch).__name__}")


def arch_from_dict(spec: dict) -> Arch:
    kind = spec.get("type")
    if kind == "mlp":
        return Mlp(tuple(spec["sizes"]), spec["hidden"], spec["out"])
    if kind == "conv1d":
        return Conv1dNet(
            spec["input_len"],
            spec["num_classes"],
            tuple(spec["channels"]),
            spec["kernel"],
            spec["stride"],
        )
    if kind == "conv2d":
        return Conv2dNet(
            tuple(spec["grid"]),
            spec["num_classes"],
            tuple(spec["channels"]),
            spec["kernel"],
            spec["stride"],
        )
    raise ArchError(f"unknown architecture type {kind!r}")


def _glorot(rng: np.random.Generator, shape: Shape, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal(shape) * std


def init_params(arch: Arch, seed: int, role: str) -> ModelParams:
    """Deterministically initialize a parameter vector for `arch`."""
    arch.validate()
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in arch.layout():
        if name.startswith(("b", "c")):
            chunks.append(np.zeros(shape, dtype=np.float64).ravel())
        elif len(shape) == 2:  # dense weight (out, in)
            chunks.append(_glorot(rng, shape, shape[1], shape[0]).ravel())
        elif len(shape) == 3:  # conv1d kernel (c_out, c_in, k)
            fan_in = shape[1] * shape[2]
            chunks.append(_glorot(rng, shape, fan_in, shape[0] * shape[2]).ravel())
        else:  # conv2d kernel (c_out, c_in, kh, kw)
            fan_in = shape[1] * shape[2] * shape[3]
            chunks.append(_glorot(rng, shape, fan_in, shape[0] * shape[2] * shape[3]).ravel())
    params = ModelParams(np.concatenate(chunks), arch.layout(), role, arch)
    params.validate()
    return params


# ---------------------------------------------------------------------------
# MLP forward / backward


def mlp_forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the MLP; returns output and the cache needed for backprop."""
    arch = params.arch
    if not isinstance(arch, Mlp):
        raise ArchError("mlp_forward needs an Mlp architecture")
    if x.ndim != 2 or x.shape[1] != arch.sizes[0]:
        raise ValueError(f"expected input of width {arch.sizes[0]}, got {x.shape}")
    views = params.views()
    cache = []
    out = x
    for i, act in enumerate(arch.layer_activations()):
        w, b = views[f"w{i}"], views[f"b{i}"]
        pre = out @ w.T + b
        post = _activate(act, pre)
        cache.append((out, pre, post))
        out = post
    return out, cache


def mlp_backward(
    params: ModelParams, cache: list, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate grad_out; returns (flat parameter gradient, input gradient)."""
    arch = params.arch
    views = params.views()
    grads: dict[str, np.ndarray] = {}
    g = grad_out
    for i in reversed(range(len(arch.layer_activations()))):
        act = arch.layer_activations()[i]
        x_in, pre, post = cache[i]
        g_pre = g * _activation_grad(act, pre, post)
        grads[f"w{i}"] = g_pre.T @ x_in
        grads[f"b{i}"] = g_pre.sum(axis=0)
        g = g_pre @ views[f"w{i}"]
    flat = np.concatenate([grads[name].ravel() for name, _ in params.layout])
    return flat, g


# ---------------------------------------------------------------------------
# Convolution primitives (valid padding, shared stride)


def _conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    # x: (B, C_in, L), w: (C_out, C_in, k) -> (B, C_out, L_out)
    win = sliding_window_view(x, w.shape[2], axis=2)[:, :, ::stride, :]
    return np.einsum("bitk,oik->bot", win, w) + b[None, :, None]


def _conv1d_backward(
    x: np.ndarray, w: np.ndarray, stride: int, g_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    win = sliding_window_view(x, w.shape[2], axis=2)[:, :, ::stride, :]
    g_w = np.einsum("bot,bitk->oik", g_out, win)
    g_b = g_out.sum(axis=(0, 2))
    g_x = np.zeros_like(x)
    l_out = g_out.shape[2]
    for dk in range(w.shape[2]):
        g_x[:, :, dk : dk + stride * l_out : stride] += np.einsum("bot,oi->bit", g_out, w[:, :, dk])
    return g_w, g_b, g_x


def _conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    # x: (B, C_in, H, W), w: (C_out, C_in, kh, kw) -> (B, C_out, H_out, W_out)
    win = sliding_window_view(x, (w.shape[2], w.shape[3]), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("bihwkl,oikl->bohw", win, w) + b[None, :, None, None]


def _conv2d_backward(
    x: np.ndarray, w: np.ndarray, stride: int, g_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    win = sliding_window_view(x, (w.shape[2], w.shape[3]), axis=(2, 3))[:, :, ::stride, ::stride]
    g_w = np.einsum("bohw,bihwkl->oikl", g_out, win)
    g_b = g_out.sum(axis=(0, 2, 3))
    g_x = np.zeros_like(x)
    h_out, w_out = g_out.shape[2], g_out.shape[3]
    for dh in range(w.shape[2]):
        for dw in range(w.shape[3]):
            g_x[:, :, dh : dh + stride * h_out : stride, dw : dw + stride * w_out : stride] += (
                np.einsum("bohw,oi->bihw", g_out, w[:, :, dh, dw])
            )
    return g_w, g_b, g_x


def conv_net_forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Forward pass for Conv1dNet/Conv2dNet; x is (B, L) flat samples."""
    arch = params.arch
    views = params.views()
    if isinstance(arch, Conv1dNet):
        x0 = x.reshape(x.shape[0], 1, arch.input_len)
        pre1 = _conv1d_forward(x0, views["k0"], views["c0"], arch.stride)
        a1 = np.maximum(pre1, 0.0)
        pre2 = _conv1d_forward(a1, views["k1"], views["c1"], arch.stride)
    elif isinstance(arch, Conv2dNet):
        h, w = arch.grid
        x0 = x.reshape(x.shape[0], 1, h, w)
        pre1 = _conv2d_forward(x0, views["k0"], views["c0"], arch.stride)
        a1 = np.maximum(pre1, 0.0)
        pre2 = _conv2d_forward(a1, views["k1"], views["c1"], arch.stride)
    else:
        raise ArchError("conv_net_forward needs a conv architecture")
    a2 = np.maximum(pre2, 0.0)
    flat = a2.reshape(a2.shape[0], -1)
    logits = flat @ views["wh"].T + views["bh"]
    cache = {"x0": x0, "pre1": pre1, "a1": a1, "pre2": pre2, "a2": a2, "flat": flat}
    return logits, cache


def conv_net_backward(
    params: ModelParams, cache: dict, g_logits: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    arch = params.arch
    views = params.views()
    grads: dict[str, np.ndarray] = {}
    grads["wh"] = g_logits.T @ cache["flat"]
    grads["bh"] = g_logits.sum(axis=0)
    g_flat = g_logits @ views["wh"]
    g_a2 = g_flat.reshape(cache["a2"].shape)
    g_pre2 = g_a2 * (cache["pre2"] > 0.0)
    if isinstance(arch, Conv1dNet):
        grads["k1"], grads["c1"], g_a1 = _conv1d_backward(
            cache["a1"], views["k1"], arch.stride, g_pre2
        )
        g_pre1 = g_a1 * (cache["pre1"] > 0.0)
        grads["k0"], grads["c0"], g_x0 = _conv1d_backward(
            cache["x0"], views["k0"], arch.stride, g_pre1
        )
    else:
        grads["k1"], grads["c1"], g_a1 = _conv2d_backward(
            cache["a1"], views["k1"], arch.stride, g_pre2
        )
        g_pre1 = g_a1 * (cache["pre1"] > 0.0)
        grads["k0"], grads["c0"], g_x0 = _conv2d_backward(
            cache["x0"], views["k0"], arch.stride, g_pre1
        )
    flat = np.concatenate([grads[name].ravel() for name, _ in params.layout])
    return flat, g_x0.reshape(g_x0.shape[0], -1)


def net_forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, object]:
    if isinstance(params.arch, Mlp):
        return mlp_forward(params, x)
    return conv_net_forward(params, x)


def net_backward(params: ModelParams, cache: object, grad_out: np.ndarray):
    if isinstance(params.arch, Mlp):
        return mlp_backward(params, cache, grad_out)
    return conv_net_backward(params, cache, grad_out)
