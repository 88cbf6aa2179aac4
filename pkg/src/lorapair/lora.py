"""Low-rank adapters wrapped around frozen d×k weight matrices.

An adapter keeps the base weight W0 frozen and learns A (d×r) and B (k×r);
the effective weight is ``W0 + s·A·Bᵀ``. B starts at zero, so a fresh adapter
reproduces the base layer exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, matmul, scale, transpose
from .errors import RankError, ShapeError, StateError, ValidationError

INIT_STD = 0.02


@dataclass(eq=False)
class LoraAdapter:
    W0: Tensor
    A: Tensor
    B: Tensor
    rank: int
    scale: float = 1.0
    target: str = ""
    merged: bool = False
    _w0_copy: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._w0_copy is None:
            self._w0_copy = self.W0.data.copy()

    @property
    def d(self):
        return self.W0.shape[0]

    @property
    def k(self):
        return self.W0.shape[1]

    @property
    def num_trainable(self):
        return self.rank * (self.d + self.k)

    def delta(self):
        return self.scale * (self.A.data @ self.B.data.T)


def check_rank(d, k, r):
    if not 1 <= r < min(d, k):
        raise RankError(f"rank {r} must satisfy 1 <= r < min(d={d}, k={k})")


def inject_lora(layer_weight: Tensor, r: int, *, scale: float = 1.0, rng=None, target="") -> LoraAdapter:
    """Wrap a dense weight with a zero-initialised low-rank adapter."""
    if layer_weight.data.ndim != 2:
        raise ShapeError(f"adapter target must be a matrix, got {layer_weight.shape}")
    d, k = layer_weight.shape
    check_rank(d, k, r)
    rng = np.random.default_rng(0) if rng is None else rng
    W0 = Tensor(layer_weight.data.copy(), requires_grad=False, name=target or None)
    A = Tensor(rng.normal(0.0, INIT_STD, size=(d, r)), requires_grad=True, name=f"{target}.A")
    B = Tensor(np.zeros((k, r)), requires_grad=True, name=f"{target}.B")
    return LoraAdapter(W0=W0, A=A, B=B, rank=r, scale=float(scale), target=target)


def adapter_forward(adapter: LoraAdapter, x: Tensor) -> Tensor:
    """x·W0 + s·(x·A)·Bᵀ without forming the dense sum."""
    if adapter.merged:
        raise StateError(f"adapter {adapter.target!r} is merged; unmerge before training")
    base = matmul(x, adapter.W0)
    low = matmul(matmul(x, adapter.A), transpose(adapter.B))
    if adapter.scale != 1.0:
        low = scale(low, adapter.scale)
    return add(base, low)


def merge(adapter: LoraAdapter) -> Tensor:
    if adapter.merged:
        raise StateError(f"adapter {adapter.target!r} is already merged")
    w = Tensor(adapter.W0.data + adapter.delta(), name=adapter.target or None)
    adapter.merged = True
    return w


def unmerge(adapter: LoraAdapter, merged_weight: Tensor) -> LoraAdapter:
    if not adapter.merged:
        raise StateError(f"adapter {adapter.target!r} was never merged")
    if merged_weight.shape != adapter.W0.shape:
        raise ShapeError(f"merged weight {merged_weight.shape} does not match {adapter.W0.shape}")
    adapter.W0 = Tensor(adapter._w0_copy.copy(), name=adapter.W0.name)
    adapter.merged = False
    return adapter


def match_targets(names, targets):
    """Layer names selected by target patterns.

    A pattern selects a layer when it equals the full name or its last
    dot-separated component, so ``query`` picks every ``layers.N.attn.query``.
    """
    chosen = []
    for name in names:
        leaf = name.rsplit(".", 1)[-1]
        if name in targets or leaf in targets:
            chosen.append(name)
    unknown = [t for t in targets if not any(n == t or n.rsplit(".", 1)[-1] == t for n in names)]
    if unknown:
        raise ValidationError(f"no layer matches adapter target(s) {unknown}")
    return chosen


def inject_adapters(model, targets, r, *, scale=1.0, rng=None):
    """Attach one adapter per selected linear layer of ``model``.

    Layers too narrow for rank ``r`` (such as the 2-column classifier head)
    get the largest admissible rank instead.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for name in match_targets(model.linear_names(), targets):
        w = model.params[name]
        layer_r = min(r, min(w.shape) - 1)
        model.adapters[name] = inject_lora(w, layer_r, scale=scale, rng=rng, target=name)
    return model.adapters


def trainable_param_report(model) -> dict:
    """Exact parameter counts for anything with ``params`` and ``adapters`` dicts.

    ``ratio`` is total / trainable (infinite when nothing trains).
    """
    total = sum(p.size for p in model.params.values())
    trainable = sum(p.size for p in model.params.values() if p.requires_grad)
    for ad in getattr(model, "adapters", {}).values():
        total += ad.A.size + ad.B.size
        trainable += ad.A.size + ad.B.size
    ratio = total / trainable if trainable else float("inf")
    return {"total_params": total, "trainable_params": trainable, "ratio": ratio}
