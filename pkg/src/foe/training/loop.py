"""Joint (mask + decoder) and decoder-only training loops."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .. import tensor as ft
from ..errors import NumericalError
from ..optics import OpticsConfig, apply_shot_noise, compute_psf_stack, image_volume
from ..tensor import Tape, Tensor, backward, no_grad
from .adam import Adam
from .loss import HighPass, LossConfig
from .sharding import (ReplicaStore, WorkerPool, round_robin, select_planes, sharded_image,
                       sharded_psf_image, sharded_reconstruct_loss)

MODES = ("joint", "decoder_only")
SampleFn = Callable[[int, np.random.Generator], np.ndarray]


@dataclass
class TrainConfig:
    mode: str = "joint"
    iterations: int = 100
    seed: int = 0
    workers: int = 1
    lr_theta: float = 1e-4
    lr_phi: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_grad: int | None = None  # planes imaged with gradient tracking (None: all)
    n_recon: int | None = None  # planes reconstructed per iteration (None: all)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        self.validate()

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 0 or self.workers < 1:
            raise ValueError("iterations must be >= 0 and workers >= 1")
        if self.lr_theta < 0 or self.lr_phi < 0:
            raise ValueError("learning rates must be non-negative")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainResult:
    phi: Tensor
    replicas: ReplicaStore
    records: list[dict]


def _iteration_rngs(seed: int, it: int) -> list[np.random.Generator]:
    """Independent streams for plane selection, data and noise at one iteration."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence([seed, it]).spawn(3)]


def train(optics: OpticsConfig, phi, replicas: ReplicaStore, sample_fn: SampleFn,
          cfg: TrainConfig, log_path: str | os.PathLike | None = None,
          hp: HighPass | None = None) -> TrainResult:
    """Run ``cfg.iterations`` steps; ``phi`` and the replicas are updated in place.

    sample_fn(iteration, rng) returns the ground-truth volume [Z, H, W] on
    the camera grid.  Noise is drawn on the orchestrator after the partial
    images are summed.  Raises NumericalError naming the iteration if the
    loss or a gradient becomes non-finite.
    """
    optics.validate()
    joint = cfg.mode == "joint"
    phi = Tensor(np.array(ft.as_tensor(phi).data, dtype=np.float64), requires_grad=joint)
    nz = optics.num_planes
    if replicas.num_planes != nz:
        raise ValueError(f"replica store covers {replicas.num_planes} planes, optics has {nz}")
    if joint and replicas.depth != 1:
        raise ValueError("joint training reconstructs plane by plane; use a 2-D network")

    opt_theta = Adam(dict(replicas.parameters()), cfg.lr_theta, cfg.beta1, cfg.beta2, cfg.eps)
    opt_phi = Adam({"phi": phi}, cfg.lr_phi, cfg.beta1, cfg.beta2, cfg.eps) if joint else None
    psf_all = None
    if not joint:
        with no_grad():
            psf_all = compute_psf_stack(phi, optics)

    records = []
    log = open(log_path, "w") if log_path is not None else None
    try:
        with WorkerPool(cfg.workers) as pool:
            for it in range(cfg.iterations):
                t0 = time.perf_counter()
                rng_plan, rng_data, rng_noise = _iteration_rngs(cfg.seed, it)
                v = np.asarray(sample_fn(it, rng_data), dtype=np.float64)
                if v.ndim != 3 or v.shape[0] != nz:
                    raise ValueError(f"sample volume has shape {v.shape}, expected {nz} planes")
                plan = select_planes(nz, cfg.n_grad if joint else 0, cfg.n_recon, rng_plan, cfg.workers)
                opt_theta.zero_grad()
                if opt_phi:
                    opt_phi.zero_grad()

                with Tape() as tape:
                    if joint:
                        parts = []
                        if plan.z_gradient:
                            parts.append(sharded_psf_image(phi, optics, plan.chunks("gradient"), v, pool))
                        if plan.z_no_gradient:
                            with no_grad():
                                parts.append(sharded_psf_image(phi, optics, plan.chunks("no_gradient"), v, pool))
                        mu = parts[0] if len(parts) == 1 else ft.add(parts[0], parts[1])
                    else:
                        chunks = round_robin(range(nz), cfg.workers)
                        with no_grad():
                            mu = sharded_image([Tensor(psf_all.data[ch]) for ch in chunks],
                                               [v[ch] for ch in chunks], pool)
                    mu = ft.scale(mu, optics.photon_budget)
                    c = apply_shot_noise(mu, eps=rng_noise.standard_normal(mu.shape))
                    total, terms = sharded_reconstruct_loss(c, v, plan.z_reconstruct, replicas,
                                                            cfg.loss, pool, hp)
                if not np.isfinite(terms.loss):
                    raise NumericalError(f"iteration {it}: loss is {terms.loss}")
                backward(total, tape)
                try:
                    opt_theta.step()
                    if opt_phi:
                        opt_phi.step()
                except NumericalError as err:
                    raise NumericalError(f"iteration {it}: {err}") from None

                rec = {"iter": it, "loss": terms.loss, "l_hnmse": terms.l_hnmse,
                       "l_nmse": terms.l_nmse, "wall_ms": 1e3 * (time.perf_counter() - t0)}
                records.append(rec)
                if log:
                    log.write(json.dumps(rec) + "\n")
                    log.flush()
    finally:
        if log:
            log.close()
    return TrainResult(phi, replicas, records)


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def estimate_input_scale(optics: OpticsConfig, phi, sample_fn: SampleFn, n: int = 16, seed: int = 0) -> float:
    """Typical median(c) / mean(v) for a fixed mask and data source.

    Used as the input-scaling factor of a decoder, this starts the network
    near the right output amplitude, so early training is spent on
    structure rather than on a global intensity factor.
    """
    with no_grad():
        s = compute_psf_stack(ft.as_tensor(phi), optics)
        ratios = []
        for i in range(n):
            rng_data, rng_noise = [np.random.default_rng(q) for q in np.random.SeedSequence([seed, i]).spawn(2)]
            v = np.asarray(sample_fn(i, rng_data), dtype=np.float64)
            mu = ft.scale(image_volume(s, Tensor(v)), optics.photon_budget)
            c = apply_shot_noise(mu, eps=rng_noise.standard_normal(mu.shape)).data
            if v.mean() > 0 and np.median(c) > 0:
                ratios.append(np.median(c) / v.mean())
    if not ratios:
        raise ValueError("no informative samples for input-scale estimation")
    return float(np.median(ratios))
