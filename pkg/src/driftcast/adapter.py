"""Dual-path correction adapter: (z, hisgrad) -> delta in feature space.

Two separate input projections (one for the current feature, one for the
batched historical feature-gradient, which lives on a much smaller scale)
are summed, passed through ReLU, a hidden layer, ReLU again, and an output
layer that is zero-initialized so a fresh adapter is an exact no-op.

Ablation flags skip a path structurally: a disabled path is never
evaluated, so the output is bit-exact independent of that input and the
path's parameter gradients are exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import checkpoint
from .diffmath import AffineLayer, _as_matrix, affine_apply


class AdapterNet:
    def __init__(self, path_feat: AffineLayer, path_grad: AffineLayer,
                 hidden: AffineLayer, out: AffineLayer,
                 use_feat: bool = True, use_grad: bool = True) -> None:
        h = hidden.out_dim
        if path_feat.out_dim != h or path_grad.out_dim != h or hidden.in_dim != h:
            raise ValueError("path/hidden widths disagree")
        if out.in_dim != h:
            raise ValueError("out layer in_dim != hidden width")
        if path_feat.in_dim != path_grad.in_dim or out.out_dim != path_feat.in_dim:
            raise ValueError("adapter must map d -> d")
        self.path_feat = path_feat
        self.path_grad = path_grad
        self.hidden = hidden
        self.out = out
        self.use_feat = bool(use_feat)
        self.use_grad = bool(use_grad)
        self.cached_tape: Optional["AdapterTape"] = None

    @property
    def d(self) -> int:
        return self.path_feat.in_dim

    @property
    def h(self) -> int:
        return self.hidden.out_dim

    def clone(self) -> "AdapterNet":
        return AdapterNet(self.path_feat.clone(), self.path_grad.clone(),
                          self.hidden.clone(), self.out.clone(),
                          self.use_feat, self.use_grad)

    def named_params(self) -> List[Tuple[str, np.ndarray]]:
        out: List[Tuple[str, np.ndarray]] = []
        for lname in ("path_feat", "path_grad", "hidden", "out"):
            layer = getattr(self, lname)
            out.append((f"{lname}.weight", layer.weight))
            out.append((f"{lname}.bias", layer.bias))
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        lname, field = name.split(".")
        setattr(getattr(self, lname), field, value)


def build_adapter(d: int, h: Optional[int] = None, use_feat: bool = True,
                  use_grad: bool = True, seed: int = 0) -> AdapterNet:
    """Seeded adapter; hidden width defaults to d; out layer starts at zero."""
    if h is None:
        h = d
    rng = np.random.default_rng(seed)
    path_feat = AffineLayer.seeded(h, d, rng)
    path_grad = AffineLayer.seeded(h, d, rng)
    hidden = AffineLayer.seeded(h, h, rng)
    out = AffineLayer(np.zeros((d, h)), np.zeros(d))
    return AdapterNet(path_feat, path_grad, hidden, out, use_feat, use_grad)


@dataclass
class AdapterTape:
    """Forward record with weight snapshots, for delayed backward passes."""

    z: np.ndarray
    hisgrad: np.ndarray
    s: np.ndarray         # summed path outputs, pre-ReLU
    r1: np.ndarray        # relu(s), hidden input
    hh: np.ndarray        # hidden pre-activation
    r2: np.ndarray        # relu(hh), out input
    w_hidden: np.ndarray
    w_out: np.ndarray
    use_feat: bool
    use_grad: bool


def adapter_forward_with_tape(a: AdapterNet, z, hisgrad
                              ) -> Tuple[np.ndarray, AdapterTape]:
    z = _as_matrix(z, "z")
    hisgrad = _as_matrix(hisgrad, "hisgrad")
    if z.shape[1] != a.d or hisgrad.shape[1] != a.d:
        raise ValueError(
            f"expected width {a.d}, got z {z.shape}, hisgrad {hisgrad.shape}")
    if z.shape[0] != hisgrad.shape[0]:
        raise ValueError(f"row mismatch: z {z.shape}, hisgrad {hisgrad.shape}")
    if a.use_feat and a.use_grad:
        s = (affine_apply(a.path_feat.weight, a.path_feat.bias, z)
             + affine_apply(a.path_grad.weight, a.path_grad.bias, hisgrad))
    elif a.use_feat:
        s = affine_apply(a.path_feat.weight, a.path_feat.bias, z)
    elif a.use_grad:
        s = affine_apply(a.path_grad.weight, a.path_grad.bias, hisgrad)
    else:
        s = np.zeros((z.shape[0], a.h))
    r1 = np.maximum(s, 0.0)
    hh = affine_apply(a.hidden.weight, a.hidden.bias, r1)
    r2 = np.maximum(hh, 0.0)
    delta = affine_apply(a.out.weight, a.out.bias, r2)
    tape = AdapterTape(z=z, hisgrad=hisgrad, s=s, r1=r1, hh=hh, r2=r2,
                       w_hidden=a.hidden.weight, w_out=a.out.weight,
                       use_feat=a.use_feat, use_grad=a.use_grad)
    return delta, tape


def adapter_forward(a: AdapterNet, z, hisgrad) -> np.ndarray:
    """Correction delta (C x d); the forward cache is retained on `a`."""
    delta, tape = adapter_forward_with_tape(a, z, hisgrad)
    a.cached_tape = tape
    return delta


def adapter_backward_tape(tape: AdapterTape, grad_delta) -> Dict[str, np.ndarray]:
    """Parameter gradients for the pass recorded on `tape` (chain rule only;
    works after the live adapter has been updated, since weights are snapshots)."""
    grad_delta = _as_matrix(grad_delta, "grad_delta")
    if grad_delta.shape != tape.z.shape:
        raise ValueError(f"grad_delta shape {grad_delta.shape} != {tape.z.shape}")
    grads: Dict[str, np.ndarray] = {}
    grads["out.weight"] = grad_delta.T @ tape.r2
    grads["out.bias"] = grad_delta.sum(axis=0)
    g = (grad_delta @ tape.w_out) * (tape.hh > 0.0)
    grads["hidden.weight"] = g.T @ tape.r1
    grads["hidden.bias"] = g.sum(axis=0)
    g = (g @ tape.w_hidden) * (tape.s > 0.0)
    d = tape.z.shape[1]
    h = tape.s.shape[1]
    if tape.use_feat:
        grads["path_feat.weight"] = g.T @ tape.z
        grads["path_feat.bias"] = g.sum(axis=0)
    else:
        grads["path_feat.weight"] = np.zeros((h, d))
        grads["path_feat.bias"] = np.zeros(h)
    if tape.use_grad:
        grads["path_grad.weight"] = g.T @ tape.hisgrad
        grads["path_grad.bias"] = g.sum(axis=0)
    else:
        grads["path_grad.weight"] = np.zeros((h, d))
        grads["path_grad.bias"] = np.zeros(h)
    return grads


def adapter_backward(a: AdapterNet, grad_delta) -> Dict[str, np.ndarray]:
    """Backward for the pending adapter_forward; clears the cache."""
    if a.cached_tape is None:
        raise RuntimeError("adapter_backward without a cached forward pass")
    grads = adapter_backward_tape(a.cached_tape, grad_delta)
    a.cached_tape = None
    return grads


def sgd_step(a: AdapterNet, grads: Dict[str, np.ndarray], lr: float) -> AdapterNet:
    """theta <- theta - lr * grad on every adapter parameter, in place on `a`
    but with freshly allocated arrays (old tapes keep their snapshots)."""
    if lr == 0.0:
        return a
    for name, value in a.named_params():
        g = grads.get(name)
        if g is not None:
            a.set_param(name, value - lr * np.asarray(g, dtype=np.float64))
    return a


def save_adapter(a: AdapterNet, path: str) -> None:
    meta = {"kind": "adapter", "d": str(a.d), "h": str(a.h),
            "use_feat": str(int(a.use_feat)), "use_grad": str(int(a.use_grad))}
    checkpoint.write_blocks(path, meta, a.named_params())


def load_adapter(path: str) -> AdapterNet:
    meta, params = checkpoint.read_blocks(path)
    if meta.get("kind") != "adapter":
        raise ValueError(f"{path}: not an adapter checkpoint")
    layers = {}
    for lname in ("path_feat", "path_grad", "hidden", "out"):
        layers[lname] = AffineLayer(params[f"{lname}.weight"],
                                    params[f"{lname}.bias"].reshape(-1))
    return AdapterNet(layers["path_feat"], layers["path_grad"], layers["hidden"],
                      layers["out"], bool(int(meta["use_feat"])),
                      bool(int(meta["use_grad"])))
