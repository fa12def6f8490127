"""Declarative network specs, builder, presets and checkpoints.

A spec is a list of layer dicts, each with a ``type`` and type-specific
fields.  The running state is either 2-D ``[C, H, W]`` or 3-D
``[C, D, H, W]``.  Layer types:

    input_scaling {scale}          divide by m = median(x) / scale
    input_rescaling {scale}        multiply by the same m
    fourier_conv2d {channels, kernel?}
    multiscale_fourier_conv2d {channels, factors, activation?, norm?, save_prefix}
    conv2d / conv3d {channels, kernel, activation?, slope?, norm?}
    leaky_relu {slope}, relu, batch_norm
    max_pool2d {factor}, upsample2d {factor}
    reshape_2d3d {depth}
    save_as {name}
    concat {source, reshape_depth?}

Multiscale layers stash every level under ``save_prefix + index`` and pass
the coarsest level on as the running state.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as ft
from .fourier import (FourierWeight, check_crop_factors, fourier_conv2d, median_scale,
                      multiscale_fourier_conv, reshape_2d3d)
from .tensor import Tensor
from .tensor import io as fot

LEAKY_SLOPE = -0.01
SHAPE_FREE = {"relu", "leaky_relu", "batch_norm", "input_scaling", "input_rescaling", "save_as"}
KINDS = SHAPE_FREE | {"fourier_conv2d", "multiscale_fourier_conv2d", "conv2d", "conv3d",
                      "max_pool2d", "upsample2d", "reshape_2d3d", "concat"}


class NetworkBuildError(ValueError):
    pass


@dataclass
class ParamInfo:
    name: str
    shape: tuple[int, ...]
    role: str  # fourier | kernel | bias | norm_scale | norm_shift


@dataclass
class NetworkSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "input_shape": list(self.input_shape),
                           "layers": self.layers}, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(d["name"], tuple(d["input_shape"]), list(d["layers"]))

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))

    def plan(self) -> "Plan":
        return Plan(self)

    def param_infos(self) -> list[ParamInfo]:
        return self.plan().params


def _err(i: int, layer: dict, msg: str) -> NetworkBuildError:
    return NetworkBuildError(f"layer {i} ({layer.get('type', '?')}): {msg}")


def _tuple(v, n) -> tuple[int, ...]:
    t = (int(v),) * n if np.isscalar(v) else tuple(int(a) for a in v)
    if len(t) != n:
        raise ValueError(f"expected {n} extents, got {t}")
    return t


class Plan:
    """Shape propagation and parameter layout for a spec; raises on bad chaining."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.shapes: list[tuple[int, ...]] = []
        self.params: list[ParamInfo] = []
        shape = tuple(spec.input_shape)
        if len(shape) != 3 or min(shape) < 1:
            raise NetworkBuildError(f"input_shape must be (C, H, W), got {spec.input_shape}")
        stash: dict[str, tuple[int, ...]] = {}
        scaled = False
        for i, layer in enumerate(spec.layers):
            try:
                shape, scaled = self._step(i, layer, shape, stash, scaled)
            except NetworkBuildError:
                raise
            except (ValueError, KeyError, TypeError) as exc:
                raise _err(i, layer, str(exc)) from None
            self.shapes.append(shape)
        self.output_shape = shape
        self._check_head()

    def _add(self, i, layer, suffix, shape, role):
        self.params.append(ParamInfo(f"{i}.{layer['type']}.{suffix}", tuple(shape), role))

    def _step(self, i, layer, shape, stash, scaled):
        kind = layer.get("type")
        if kind not in KINDS:
            raise _err(i, layer, f"unknown layer type {kind!r}")
        c = shape[0]
        if kind == "input_scaling":
            if i != 0:
                raise _err(i, layer, "input scaling must be the first layer")
            return shape, True
        if kind == "input_rescaling":
            if not scaled:
                raise _err(i, layer, "rescaling without a preceding input_scaling")
            return shape, scaled
        if kind in ("relu", "leaky_relu"):
            return shape, scaled
        if kind == "batch_norm":
            self._add(i, layer, "gamma", (c,), "norm_scale")
            self._add(i, layer, "beta", (c,), "norm_shift")
            return shape, scaled
        if kind == "save_as":
            stash[layer["name"]] = shape
            return shape, scaled
        if kind == "fourier_conv2d":
            self._need(i, layer, shape, 3)
            co = int(layer["channels"])
            h, w = shape[1:]
            if "kernel" in layer and _tuple(layer["kernel"], 2) != (h, w):
                raise _err(i, layer, f"kernel {layer['kernel']} must equal input extent {(h, w)}")
            self._add(i, layer, "weight", (co, c, 2 * h, 2 * w, 2), "fourier")
            self._add(i, layer, "bias", (co,), "bias")
            return (co, h, w), scaled
        if kind == "multiscale_fourier_conv2d":
            self._need(i, layer, shape, 3)
            co = int(layer["channels"])
            h, w = shape[1:]
            factors = [int(f) for f in layer["factors"]]
            check_crop_factors(factors, h, w)
            prefix = layer.get("save_prefix", "level")
            for li, f in enumerate(factors):
                self._add(i, layer, f"weight{li}", (co, c, 2 * h // f, 2 * w // f, 2), "fourier")
                self._add(i, layer, f"bias{li}", (co,), "bias")
                if layer.get("norm"):
                    self._add(i, layer, f"gamma{li}", (co,), "norm_scale")
                    self._add(i, layer, f"beta{li}", (co,), "norm_shift")
                stash[f"{prefix}{li}"] = (co, h // f, w // f)
            return (co, h // factors[-1], w // factors[-1]), scaled
        if kind in ("conv2d", "conv3d"):
            dims = 2 if kind == "conv2d" else 3
            self._need(i, layer, shape, dims + 1)
            co = int(layer["channels"])
            k = _tuple(layer["kernel"], dims)
            if any(v % 2 == 0 for v in k):
                raise _err(i, layer, f"kernel {k} must be odd")
            self._add(i, layer, "weight", (co, c) + k, "kernel")
            self._add(i, layer, "bias", (co,), "bias")
            if layer.get("norm"):
                self._add(i, layer, "gamma", (co,), "norm_scale")
                self._add(i, layer, "beta", (co,), "norm_shift")
            return (co,) + shape[1:], scaled
        if kind == "max_pool2d":
            f = int(layer.get("factor", 2))
            if shape[-1] % f or shape[-2] % f:
                raise _err(i, layer, f"extent {shape[-2:]} not divisible by {f}")
            return shape[:-2] + (shape[-2] // f, shape[-1] // f), scaled
        if kind == "upsample2d":
            f = int(layer.get("factor", 2))
            return shape[:-2] + (shape[-2] * f, shape[-1] * f), scaled
        if kind == "reshape_2d3d":
            self._need(i, layer, shape, 3)
            d = int(layer["depth"])
            if c % d:
                raise _err(i, layer, f"{c} channels not divisible by depth {d}")
            return (c // d, d) + shape[1:], scaled
        # concat
        src = layer["source"]
        if src not in stash:
            raise _err(i, layer, f"no saved tensor named {src!r}")
        other = stash[src]
        if layer.get("reshape_depth"):
            d = int(layer["reshape_depth"])
            if len(other) != 3 or other[0] % d:
                raise _err(i, layer, f"cannot reshape saved {other} to depth {d}")
            other = (other[0] // d, d) + other[1:]
        if other[1:] != shape[1:]:
            raise _err(i, layer, f"saved shape {other} does not match running shape {shape}")
        return (c + other[0],) + shape[1:], scaled

    @staticmethod
    def _need(i, layer, shape, rank):
        if len(shape) != rank:
            raise _err(i, layer, f"expects a rank-{rank} state, got {shape}")

    def _check_head(self):
        layers = self.spec.layers
        if not layers:
            raise NetworkBuildError("network has no layers")
        k = len(layers) - 1
        while k >= 0 and layers[k]["type"] == "input_rescaling":
            k -= 1
        last = layers[k] if k >= 0 else {}
        ends_relu = last.get("type") == "relu" or (
            last.get("type") in ("conv2d", "conv3d") and last.get("activation") == "relu"
            and not last.get("norm"))
        if not ends_relu:
            raise NetworkBuildError(f"layer {k} ({last.get('type')}): output head must end in ReLU")
        if self.output_shape[0] != 1:
            raise NetworkBuildError(f"output must have one channel, got {self.output_shape}")


def _init_param(info: ParamInfo, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    if info.role == "fourier":
        co, ci, h2, w2, _ = info.shape
        return FourierWeight.init(co, ci, h2 // 2, w2 // 2, rng, requires_grad=False).storage.data
    if info.role == "kernel":
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), info.shape)
    if info.role == "norm_scale":
        return np.ones(info.shape)
    return np.zeros(info.shape)


class Network:
    """A built network: spec, plan and named parameter tensors."""

    def __init__(self, spec: NetworkSpec, params: dict[str, Tensor]):
        self.spec = spec
        self.plan = spec.plan()
        expected = {p.name: p.shape for p in self.plan.params}
        got = {k: v.shape for k, v in params.items()}
        if expected != got:
            raise NetworkBuildError(f"parameter set mismatch: expected {expected}, got {got}")
        self.params = params

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for p in self.plan.params:
            yield p.name, self.params[p.name]

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()

    def copy(self) -> "Network":
        return Network(self.spec, {k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
                                   for k, v in self.params.items()})

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:
        x = ft.as_tensor(x)
        if x.ndim == 2:
            x = ft.reshape(x, (1,) + x.shape)
        if x.shape != self.spec.input_shape:
            raise ValueError(f"input shape {x.shape} != {self.spec.input_shape}")
        stash: dict[str, Tensor] = {}
        m = None
        for i, layer in enumerate(self.spec.layers):
            kind = layer["type"]
            p = lambda s: self.params[f"{i}.{kind}.{s}"]  # noqa: E731
            if kind == "input_scaling":
                m = median_scale(x, float(layer.get("scale", 1.0)))
                x = ft.div(x, m)
            elif kind == "input_rescaling":
                x = ft.mul(x, m)
            elif kind == "relu":
                x = ft.relu(x)
            elif kind == "leaky_relu":
                x = ft.leaky_relu(x, float(layer.get("slope", LEAKY_SLOPE)))
            elif kind == "batch_norm":
                x = ft.instance_norm(x, p("gamma"), p("beta"))
            elif kind == "save_as":
                stash[layer["name"]] = x
            elif kind == "fourier_conv2d":
                x = fourier_conv2d(x, FourierWeight(p("weight")), p("bias"))
            elif kind == "multiscale_fourier_conv2d":
                n = len(layer["factors"])
                outs = multiscale_fourier_conv(x, [FourierWeight(p(f"weight{k}")) for k in range(n)],
                                               layer["factors"], [p(f"bias{k}") for k in range(n)])
                prefix = layer.get("save_prefix", "level")
                for k, y in enumerate(outs):
                    y = _activate(y, layer)
                    if layer.get("norm"):
                        y = ft.instance_norm(y, p(f"gamma{k}"), p(f"beta{k}"))
                    stash[f"{prefix}{k}"] = y
                x = stash[f"{prefix}{n - 1}"]
            elif kind in ("conv2d", "conv3d"):
                x = ft.conv_direct(x, p("weight"), p("bias"), dims=2 if kind == "conv2d" else 3)
                x = _activate(x, layer)
                if layer.get("norm"):
                    x = ft.instance_norm(x, p("gamma"), p("beta"))
            elif kind == "max_pool2d":
                x = ft.max_pool(x, int(layer.get("factor", 2)))
            elif kind == "upsample2d":
                x = ft.nearest_upsample(x, int(layer.get("factor", 2)))
            elif kind == "reshape_2d3d":
                x = reshape_2d3d(x, int(layer["depth"]))
            elif kind == "concat":
                other = stash[layer["source"]]
                if layer.get("reshape_depth"):
                    other = reshape_2d3d(other, int(layer["reshape_depth"]))
                x = ft.concat([x, other], axis=0)
        return x

    def output_planes(self, x) -> Tensor:
        """Forward pass with the channel axis dropped: [D, H, W] (D = 1 for 2-D nets)."""
        y = self.forward(x)
        return ft.reshape(y, (1,) + y.shape[1:] if y.ndim == 3 else y.shape[1:])

    @property
    def output_depth(self) -> int:
        s = self.plan.output_shape
        return 1 if len(s) == 3 else s[1]


def _activate(x: Tensor, layer: dict) -> Tensor:
    act = layer.get("activation")
    if act is None:
        return x
    if act == "relu":
        return ft.relu(x)
    if act == "leaky_relu":
        return ft.leaky_relu(x, float(layer.get("slope", LEAKY_SLOPE)))
    raise ValueError(f"unknown activation {act!r}")


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    plan = spec.plan()
    rng = np.random.default_rng(seed)
    params = {}
    for info in plan.params:
        fan_in = int(np.prod(info.shape[1:])) if info.role == "kernel" else 1
        params[info.name] = Tensor(_init_param(info, fan_in, rng), requires_grad=True)
    return Network(spec, params)


# --- parameter accounting -------------------------------------------------------

def kernel_parameter_counts(spec: NetworkSpec) -> dict[str, int]:
    """Kernel parameters by kind (biases and norm affines excluded).

    ``fourier`` counts stored reals (2 per complex entry over the doubled
    grid); ``fourier_global_kernel`` counts the equivalent real H x W global
    kernel, which is one eighth of that.
    """
    four = sum(int(np.prod(p.shape)) for p in spec.param_infos() if p.role == "fourier")
    conv = sum(int(np.prod(p.shape)) for p in spec.param_infos() if p.role == "kernel")
    return {"fourier": four, "fourier_global_kernel": four // 8, "conv": conv}


def fourier_fraction(spec: NetworkSpec, convention: str = "global_kernel") -> float:
    counts = kernel_parameter_counts(spec)
    four = counts["fourier_global_kernel" if convention == "global_kernel" else "fourier"]
    return four / (four + counts["conv"])


def total_parameters(spec: NetworkSpec) -> int:
    return sum(int(np.prod(p.shape)) for p in spec.param_infos())


# --- presets --------------------------------------------------------------------

def fouriernet2d(size=256, channels=8, kernel=11, scale=0.01) -> NetworkSpec:
    return NetworkSpec("fouriernet2d", (1, size, size), [
        {"type": "input_scaling", "scale": scale},
        {"type": "fourier_conv2d", "channels": channels, "kernel": [size, size]},
        {"type": "leaky_relu", "slope": LEAKY_SLOPE},
        {"type": "batch_norm"},
        {"type": "conv2d", "channels": 1, "kernel": [kernel, kernel]},
        {"type": "relu"},
        {"type": "input_rescaling", "scale": scale},
    ])


def fouriernet3d(size=256, channels=60, depth=12, kernel=(11, 7, 7), scale=0.01) -> NetworkSpec:
    c3 = channels // depth
    return NetworkSpec("fouriernet3d", (1, size, size), [
        {"type": "input_scaling", "scale": scale},
        {"type": "fourier_conv2d", "channels": channels, "kernel": [size, size]},
        {"type": "leaky_relu", "slope": LEAKY_SLOPE},
        {"type": "batch_norm"},
        {"type": "reshape_2d3d", "depth": depth},
        {"type": "conv3d", "channels": c3, "kernel": list(kernel)},
        {"type": "leaky_relu", "slope": LEAKY_SLOPE},
        {"type": "batch_norm"},
        {"type": "conv3d", "channels": 1, "kernel": list(kernel)},
        {"type": "relu"},
        {"type": "input_rescaling", "scale": scale},
    ])


def _conv(kind, channels, kernel, norm=True):
    return {"type": kind, "channels": channels, "kernel": list(kernel), "activation": "relu", "norm": norm}


def fourierunet3d(size=256, channels=60, depth=12, factors=(1, 2, 4, 8), kernel=(11, 7, 7),
                  scale=0.01) -> NetworkSpec:
    c3 = channels // depth
    layers = [
        {"type": "input_scaling", "scale": scale},
        {"type": "multiscale_fourier_conv2d", "channels": channels, "factors": list(factors),
         "activation": "relu", "norm": True, "save_prefix": "enc"},
        {"type": "reshape_2d3d", "depth": depth},
    ]
    for lvl in range(len(factors) - 2, -1, -1):
        layers += [
            {"type": "upsample2d", "factor": factors[lvl + 1] // factors[lvl]},
            {"type": "concat", "source": f"enc{lvl}", "reshape_depth": depth},
            _conv("conv3d", c3, kernel),
            _conv("conv3d", c3, kernel),
        ]
    layers += [_conv("conv3d", 1, (1, 1, 1), norm=False), {"type": "input_rescaling", "scale": scale}]
    return NetworkSpec("fourierunet3d", (1, size, size), layers)


def _unet_encoder(scales, c1, c, kernel2d, scale):
    layers = [
        {"type": "input_scaling", "scale": scale},
        _conv("conv2d", c1, (kernel2d, kernel2d)),
        _conv("conv2d", c, (kernel2d, kernel2d)),
        {"type": "save_as", "name": "s1"},
    ]
    for n in range(2, scales + 1):
        layers += [{"type": "max_pool2d", "factor": 2},
                   _conv("conv2d", c, (kernel2d, kernel2d)),
                   _conv("conv2d", c, (kernel2d, kernel2d))]
        if n < scales:
            layers.append({"type": "save_as", "name": f"s{n}"})
    return layers


def unet2d(size=256, scales=8, c1=12, c=24, kernel=7, scale=0.01) -> NetworkSpec:
    layers = _unet_encoder(scales, c1, c, kernel, scale)
    for n in range(scales - 1, 0, -1):
        layers += [{"type": "upsample2d", "factor": 2},
                   {"type": "concat", "source": f"s{n}"},
                   _conv("conv2d", c, (kernel, kernel)),
                   _conv("conv2d", c, (kernel, kernel))]
    layers += [_conv("conv2d", 1, (1, 1), norm=False), {"type": "input_rescaling", "scale": scale}]
    return NetworkSpec("unet2d", (1, size, size), layers)


def unet3d(size=256, scales=4, c1=30, c=60, depth=12, kernel2d=7, kernel3d=(11, 7, 7),
           scale=0.01) -> NetworkSpec:
    c3 = c // depth
    layers = _unet_encoder(scales, c1, c, kernel2d, scale)
    layers.append({"type": "reshape_2d3d", "depth": depth})
    for n in range(scales - 1, 0, -1):
        layers += [{"type": "upsample2d", "factor": 2},
                   {"type": "concat", "source": f"s{n}", "reshape_depth": depth},
                   _conv("conv3d", c3, kernel3d),
                   _conv("conv3d", c3, kernel3d)]
    layers += [_conv("conv3d", 1, (1, 1, 1), norm=False), {"type": "input_rescaling", "scale": scale}]
    return NetworkSpec("unet3d", (1, size, size), layers)


PRESET_BUILDERS = {
    "fouriernet2d": fouriernet2d,
    "fouriernet3d": fouriernet3d,
    "fourierunet3d": fourierunet3d,
    "unet2d": unet2d,
    "unet3d": unet3d,
}

# Desk-scale variants keep each topology and shrink extents, channels and kernels.
DESK_ARGS = {
    "fouriernet2d": dict(size=32, channels=4, kernel=5),
    "fouriernet3d": dict(size=32, channels=8, depth=4, kernel=(3, 5, 5)),
    "fourierunet3d": dict(size=32, channels=8, depth=4, factors=(1, 2, 4), kernel=(3, 3, 3)),
    "unet2d": dict(size=32, scales=4, c1=2, c=3, kernel=3),
    "unet3d": dict(size=32, scales=3, c1=4, c=8, depth=4, kernel2d=3, kernel3d=(3, 3, 3)),
}


def preset(name: str, variant: str = "desk", **overrides) -> NetworkSpec:
    if name not in PRESET_BUILDERS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESET_BUILDERS)}")
    if variant not in ("desk", "table"):
        raise ValueError("variant must be 'desk' or 'table'")
    args = dict(DESK_ARGS[name]) if variant == "desk" else {}
    args.update(overrides)
    return PRESET_BUILDERS[name](**args)


# --- checkpoints ----------------------------------------------------------------

MANIFEST = "manifest.json"


def _fname(i: int, name: str) -> str:
    return f"{i:03d}_{re.sub(r'[^A-Za-z0-9_]+', '_', name)}.fot"


def save_checkpoint(net: Network, directory: str | os.PathLike, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, t) in enumerate(net.parameters()):
        f = _fname(i, name)
        fot.write(d / f, t.data)
        entries.append({"name": name, "file": f, "shape": list(t.shape)})
    manifest = {"format": "foe-network/1", "spec": json.loads(net.spec.to_json()),
                "params": entries, "extra": extra or {}}
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2))


def load_checkpoint(directory: str | os.PathLike) -> Network:
    d = Path(directory)
    manifest = json.loads((d / MANIFEST).read_text())
    spec = NetworkSpec.from_dict(manifest["spec"])
    params = {}
    for e in manifest["params"]:
        arr = fot.read(d / e["file"])
        if list(arr.shape) != e["shape"]:
            raise ValueError(f"{e['file']}: shape {arr.shape} != manifest {e['shape']}")
        params[e["name"]] = Tensor(arr, requires_grad=True)
    return Network(spec, params)
