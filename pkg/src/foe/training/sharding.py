"""Plane selection, worker pools and the sharded imaging / reconstruction ops.

Workers receive immutable snapshots (arrays, configs, parameter copies),
build their own tapes on their own threads and return plain arrays.  The
orchestrator reduces results in a fixed order, so sums do not depend on
which worker finished first.  The fused ops below record a single node on
the orchestrator tape whose backward fans the cotangent back out to the
same workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .. import tensor as ft
from ..networks import Network, build_network, NetworkSpec
from ..optics import OpticsConfig, compute_psf_stack, image_volume
from ..tensor import Tape, Tensor, backward, no_grad
from ..tensor.core import record
from ..tensor.ops import getitem
from .loss import HighPass, LossConfig, loss_terms, normalizers


def round_robin(items: Sequence[int], workers: int) -> list[list[int]]:
    """Deal items to ``workers`` chunks in turn; empty chunks are dropped."""
    if workers < 1:
        raise ValueError("worker count must be positive")
    return [list(items[j::workers]) for j in range(min(workers, len(items)))]


@dataclass(frozen=True)
class ShardPlan:
    workers: int
    z_gradient: tuple[int, ...]
    z_no_gradient: tuple[int, ...]
    z_reconstruct: tuple[int, ...]

    def __post_init__(self):
        if set(self.z_gradient) & set(self.z_no_gradient):
            raise ValueError("gradient and no-gradient plane sets overlap")

    def chunks(self, which: str) -> list[list[int]]:
        planes = {"gradient": self.z_gradient, "no_gradient": self.z_no_gradient,
                  "reconstruct": self.z_reconstruct}[which]
        return round_robin(planes, self.workers)


def select_planes(num_planes: int, n_grad: int | None, n_recon: int | None,
                  rng: np.random.Generator, workers: int = 1) -> ShardPlan:
    """Draw the gradient subset and an independent reconstruction subset.

    Planes not in the gradient subset are imaged without gradient tracking.
    ``None`` means all planes.
    """
    n_grad = num_planes if n_grad is None else n_grad
    n_recon = num_planes if n_recon is None else n_recon
    if not (0 <= n_grad <= num_planes and 1 <= n_recon <= num_planes):
        raise ValueError(f"bad plane counts grad={n_grad} recon={n_recon} of {num_planes}")
    grad = sorted(rng.choice(num_planes, n_grad, replace=False).tolist()) if n_grad < num_planes \
        else list(range(num_planes))
    rest = [z for z in range(num_planes) if z not in set(grad)]
    recon = sorted(rng.choice(num_planes, n_recon, replace=False).tolist()) if n_recon < num_planes \
        else list(range(num_planes))
    return ShardPlan(workers, tuple(grad), tuple(rest), tuple(recon))


class WorkerPool:
    """Ordered map over a thread pool (inline when workers == 1)."""

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError("worker count must be positive")
        self.workers = workers
        self._ex = ThreadPoolExecutor(workers) if workers > 1 else None

    def map(self, fn: Callable, items: Iterable) -> list:
        items = list(items)
        if self._ex is None:
            return [fn(it) for it in items]
        return list(self._ex.map(fn, items))

    def close(self) -> None:
        if self._ex is not None:
            self._ex.shutdown()

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


_INLINE = WorkerPool(1)


def _ordered_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    total = arrays[0].copy()
    for a in arrays[1:]:
        total = total + a
    return total


class _VJP:
    """A worker's recorded forward pass; maps a cotangent to leaf gradients."""

    def __init__(self, tape: Tape, out: Tensor, leaves: Sequence[Tensor]):
        self.tape, self.out, self.leaves = tape, out, leaves

    def __call__(self, g: np.ndarray) -> list[np.ndarray | None]:
        with self.tape:
            surrogate = ft.tsum(ft.mul(self.out, Tensor(g)))
        backward(surrogate, self.tape)
        return [leaf.grad for leaf in self.leaves]


def _fused(name: str, parts: list[tuple[np.ndarray, _VJP | None]], inputs: Sequence[Tensor],
           routes: list[list[int]], pool: WorkerPool) -> Tensor:
    """Record sum(parts) with a backward that asks each worker for its VJP.

    ``routes[j]`` lists the positions in ``inputs`` that worker j's leaves map to.
    """
    total = _ordered_sum([p for p, _ in parts])

    def back(g):
        per_worker = pool.map(lambda vjp: vjp(g) if vjp is not None else [], [h for _, h in parts])
        grads: list = [None] * len(inputs)
        for route, leaf_grads in zip(routes, per_worker):
            for pos, lg in zip(route, leaf_grads):
                if lg is None:
                    continue
                grads[pos] = lg if grads[pos] is None else grads[pos] + lg
        return tuple(np.zeros(t.shape, t.dtype) if gr is None else gr for t, gr in zip(inputs, grads))

    return record(name, total, inputs, back)


def sharded_image(psf_chunks: Sequence[Tensor], volume_chunks: Sequence, pool: WorkerPool | None = None) -> Tensor:
    """Sum over chunks of image_volume(s_j, v_j), each chunk imaged by one worker."""
    pool = pool or _INLINE
    if len(psf_chunks) != len(volume_chunks) or not psf_chunks:
        raise ValueError("need one volume chunk per PSF chunk")
    vols = [ft.as_tensor(v) for v in volume_chunks]
    track = ft.grad_enabled()

    def work(args):
        s, v = args
        s_leaf = Tensor(s.data, requires_grad=s.requires_grad and track)
        v_leaf = Tensor(v.data, requires_grad=v.requires_grad and track)
        if not (s_leaf.requires_grad or v_leaf.requires_grad):
            with no_grad():
                return image_volume(s_leaf, v_leaf).data, None
        tape = Tape()
        with tape:
            out = image_volume(s_leaf, v_leaf)
        return out.data, _VJP(tape, out, [s_leaf, v_leaf])

    parts = pool.map(work, list(zip(psf_chunks, vols)))
    n = len(psf_chunks)
    return _fused("sharded_image", parts, list(psf_chunks) + vols, [[j, n + j] for j in range(n)], pool)


def sharded_psf_image(phi: Tensor, cfg: OpticsConfig, plane_chunks: Sequence[Sequence[int]],
                      volume: np.ndarray, pool: WorkerPool | None = None) -> Tensor:
    """Image the given planes of ``volume`` through PSFs computed on the workers.

    Differentiable in ``phi`` when gradients are being recorded; each
    worker returns its partial image and later its share of dL/dphi.
    """
    pool = pool or _INLINE
    if not plane_chunks:
        raise ValueError("no planes to image")
    phi = ft.as_tensor(phi)
    track = ft.grad_enabled() and phi.requires_grad
    volume = np.asarray(volume)

    def work(planes):
        leaf = Tensor(phi.data, requires_grad=track)
        vol = Tensor(volume[list(planes)])
        if not track:
            with no_grad():
                return image_volume(compute_psf_stack(leaf, cfg, planes), vol).data, None
        tape = Tape()
        with tape:
            out = image_volume(compute_psf_stack(leaf, cfg, planes), vol)
        return out.data, _VJP(tape, out, [leaf])

    parts = pool.map(work, plane_chunks)
    return _fused("sharded_psf_image", parts, [phi], [[0]] * len(parts), pool)


class ReplicaStore:
    """One reconstruction network per block of planes.

    A 2-D network serves one plane; a network emitting D planes serves D
    consecutive planes.  Replica k covers planes [k*D, (k+1)*D).
    """

    def __init__(self, nets: Sequence[Network]):
        if not nets:
            raise ValueError("empty replica store")
        spec = nets[0].spec
        if any(n.spec != spec for n in nets):
            raise ValueError("replicas must share one network spec")
        self.nets = list(nets)
        self.depth = nets[0].output_depth

    @classmethod
    def build(cls, spec: NetworkSpec, num_planes: int, seed: int = 0) -> "ReplicaStore":
        probe = build_network(spec, seed)
        depth = probe.output_depth
        if num_planes % depth:
            raise ValueError(f"{num_planes} planes not divisible by network depth {depth}")
        return cls([probe] + [build_network(spec, [seed, k]) for k in range(1, num_planes // depth)])

    @property
    def num_planes(self) -> int:
        return len(self.nets) * self.depth

    def units(self, planes: Sequence[int]) -> list[tuple[int, list[int]]]:
        """Group planes by replica: [(replica, planes served), ...] in ascending order."""
        out: dict[int, list[int]] = {}
        for p in sorted(planes):
            if not 0 <= p < self.num_planes:
                raise ValueError(f"plane {p} outside replica range")
            out.setdefault(p // self.depth, []).append(p)
        return sorted(out.items())

    def parameters(self, replicas: Iterable[int] | None = None) -> list[tuple[str, Tensor]]:
        idx = range(len(self.nets)) if replicas is None else replicas
        return [(f"r{k}/{name}", t) for k in idx for name, t in self.nets[k].parameters()]


@dataclass
class ReconTerms:
    loss: float
    l_hnmse: float
    l_nmse: float


def recon_chunks(store: ReplicaStore, planes: Sequence[int], workers: int) -> list[list[tuple[int, list[int]]]]:
    """Deal replica units round-robin; every chunk must reconstruct the same number of planes."""
    units = store.units(planes)
    chunks = [units[j::workers] for j in range(min(workers, len(units)))]
    sizes = {sum(len(p) for _, p in ch) for ch in chunks}
    if len(sizes) != 1:
        raise ValueError(f"reconstruction chunks have unequal plane counts {sorted(sizes)}; "
                         f"choose a plane count divisible by the worker count")
    return chunks


def sharded_reconstruct_loss(c: Tensor, v: np.ndarray, planes: Sequence[int], store: ReplicaStore,
                             cfg: LossConfig = LossConfig(), pool: WorkerPool | None = None,
                             hp: HighPass | None = None) -> tuple[Tensor, ReconTerms]:
    """Mean over equal-size chunks of the per-chunk loss, normalisers shared across chunks.

    Each worker reconstructs its planes with snapshot copies of the replicas
    and differentiates its own chunk loss immediately; the recorded node
    scales those gradients by the incoming cotangent.
    """
    pool = pool or _INLINE
    c = ft.as_tensor(c)
    v = np.asarray(v)
    planes = sorted(planes)
    norms = normalizers(v[planes], cfg, hp)
    chunks = recon_chunks(store, planes, pool.workers)
    want_c = c.requires_grad and ft.grad_enabled()

    def work(chunk):
        c_leaf = Tensor(c.data, requires_grad=want_c)
        nets = {k: store.nets[k].copy() for k, _ in chunk}
        tape = Tape()
        with tape:
            outs, targets = [], []
            for k, ps in chunk:
                y = nets[k].output_planes(c_leaf)
                rows = [p - k * store.depth for p in ps]
                if rows != list(range(store.depth)):
                    y = ft.concat([getitem(y, slice(r, r + 1)) for r in rows], axis=0)
                outs.append(y)
                targets.extend(ps)
            v_hat = outs[0] if len(outs) == 1 else ft.concat(outs, axis=0)
            total, l_h, l_n = loss_terms(Tensor(v[targets]), v_hat, cfg, hp, norms)
        backward(total, tape)
        pgrads = [t.grad for k, _ in chunk for _, t in nets[k].parameters()]
        return total.item(), l_h.item(), l_n.item(), c_leaf.grad, pgrads

    results = pool.map(work, chunks)
    n = len(chunks)
    inputs: list[Tensor] = [c]
    for chunk in chunks:
        for k, _ in chunk:
            inputs.extend(t for _, t in store.nets[k].parameters())
    mean = sum(r[0] for r in results) / n
    terms = ReconTerms(mean, sum(r[1] for r in results) / n, sum(r[2] for r in results) / n)

    def back(g):
        gc = None
        for r in results:
            if r[3] is not None:
                gc = r[3] if gc is None else gc + r[3]
        out = [np.zeros(c.shape) if gc is None else g * gc / n]
        for r in results:
            out.extend(np.zeros_like(pg) if pg is None else g * pg / n for pg in r[4])
        return tuple(out)

    return record("sharded_reconstruct_loss", np.float64(mean), inputs, back), terms
