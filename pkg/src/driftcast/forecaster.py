"""Channel-independent MLP forecaster split into an encoder and a head.

The model normalizes each lookback window per channel, runs the channels
as batch rows through a stack of affine blocks (ReLU strictly between
blocks), maps the last block to the horizon with a linear head, and
denormalizes. One block output is exposed as the feature z; corrections
are added there and the remaining computation is resumed by head_forward.

Every forward pass records a tape (inputs and weight snapshots) so that
gradients can later be taken under the parameters that produced the
prediction, even if the live model has moved on since.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .diffmath import AffineLayer, _as_matrix, affine_apply

STD_EPS = 1e-5


@dataclass
class NormStats:
    """Per-channel lookback statistics; std is already clamped at STD_EPS."""

    mean: np.ndarray  # (C,)
    std: np.ndarray   # (C,)


@dataclass
class Sample:
    """One forecasting instance: lookback x (L x C), target y (k x C)."""

    x: np.ndarray
    y: np.ndarray
    origin: int


def normalize(x) -> Tuple[np.ndarray, NormStats]:
    """Per-channel standardization over the lookback window.

    Population std (ddof=0), clamped at STD_EPS so constant channels
    normalize to zeros instead of failing.
    """
    x = _as_matrix(x, "x")
    if x.shape[0] < 2:
        raise ValueError(f"lookback needs at least 2 rows, got {x.shape[0]}")
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_EPS)
    return (x - mean) / std, NormStats(mean=mean, std=std)


def denormalize(y_norm, stats: NormStats) -> np.ndarray:
    """Undo normalize on a (k x C) prediction: y_norm * std + mean."""
    return np.asarray(y_norm, dtype=np.float64) * stats.std + stats.mean


@dataclass
class HeadTape:
    """Record of one pass from the feature tap to the denormalized output.

    relu_srcs[j] is the array whose sign pattern gated the ReLU before the
    j-th post-tap block; weights are snapshots taken at forward time.
    """

    tap_input: np.ndarray
    relu_srcs: List[np.ndarray]
    post_weights: List[np.ndarray]
    head_in: np.ndarray
    head_weight: np.ndarray
    stats: NormStats


@dataclass
class FullTape:
    """Record of a complete forward pass (normalized input to prediction)."""

    ins: List[np.ndarray]            # input fed to each block
    pre: List[np.ndarray]            # pre-activation output of each block
    block_weights: List[np.ndarray]  # snapshots
    head_in: np.ndarray
    head_weight: np.ndarray
    y_norm: np.ndarray               # head output before denormalization
    stats: NormStats
    tap_index: int

    def head_view(self) -> HeadTape:
        t = self.tap_index
        return HeadTape(
            tap_input=self.pre[t],
            relu_srcs=self.pre[t:-1],
            post_weights=self.block_weights[t + 1:],
            head_in=self.head_in,
            head_weight=self.head_weight,
            stats=self.stats,
        )


class ForecastModel:
    """Encoder blocks + linear head; channels share all weights."""

    def __init__(self, blocks: Sequence[AffineLayer], head: AffineLayer,
                 L: int, k: int, tap_index: Optional[int] = None) -> None:
        blocks = list(blocks)
        if not blocks:
            raise ValueError("need at least one encoder block")
        if blocks[0].in_dim != L:
            raise ValueError(f"first block expects in_dim {L}, got {blocks[0].in_dim}")
        for i in range(1, len(blocks)):
            if blocks[i].in_dim != blocks[i - 1].out_dim:
                raise ValueError(f"block {i} in_dim != block {i - 1} out_dim")
        if head.in_dim != blocks[-1].out_dim:
            raise ValueError("head in_dim != last block out_dim")
        if head.out_dim != k:
            raise ValueError(f"head out_dim {head.out_dim} != horizon {k}")
        if tap_index is None:
            # default tap: second-last block (the only block if there is one)
            tap_index = max(len(blocks) - 2, 0)
        if not 0 <= tap_index < len(blocks):
            raise ValueError(f"tap_index {tap_index} outside [0, {len(blocks)})")
        self.blocks = blocks
        self.head = head
        self.L = L
        self.k = k
        self.tap_index = tap_index

    @property
    def d(self) -> int:
        """Feature width at the tap."""
        return self.blocks[self.tap_index].out_dim

    def clone(self) -> "ForecastModel":
        return ForecastModel([b.clone() for b in self.blocks], self.head.clone(),
                             self.L, self.k, self.tap_index)

    def named_params(self) -> List[Tuple[str, np.ndarray]]:
        out: List[Tuple[str, np.ndarray]] = []
        for i, blk in enumerate(self.blocks):
            out.append((f"blocks.{i}.weight", blk.weight))
            out.append((f"blocks.{i}.bias", blk.bias))
        out.append(("head.weight", self.head.weight))
        out.append(("head.bias", self.head.bias))
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        if name == "head.weight":
            self.head.weight = value
        elif name == "head.bias":
            self.head.bias = value
        else:
            _, idx, field = name.split(".")
            setattr(self.blocks[int(idx)], field, value)


def build_model(L: int, k: int, d: int = 64, n_blocks: int = 3,
                tap_index: Optional[int] = None, seed: int = 0) -> ForecastModel:
    """Seeded model factory: blocks L -> d -> d ... with a d -> k head."""
    rng = np.random.default_rng(seed)
    dims = [L] + [d] * n_blocks
    blocks = [AffineLayer.seeded(dims[i + 1], dims[i], rng) for i in range(n_blocks)]
    head = AffineLayer.seeded(k, d, rng, scale=np.sqrt(1.0 / d))
    return ForecastModel(blocks, head, L, k, tap_index)


def _forward_rows(model: ForecastModel, rows: np.ndarray):
    """Run (rows x L) through all blocks and the head; ReLU between blocks only."""
    ins: List[np.ndarray] = []
    pre: List[np.ndarray] = []
    h = rows
    for i, blk in enumerate(model.blocks):
        if i > 0:
            h = np.maximum(pre[i - 1], 0.0)
        ins.append(h)
        pre.append(affine_apply(blk.weight, blk.bias, h))
    y_norm = affine_apply(model.head.weight, model.head.bias, pre[-1])
    return ins, pre, y_norm


def encode(model: ForecastModel, x) -> Tuple[np.ndarray, NormStats, FullTape]:
    """Feature z (C x d) of one lookback window, plus stats and full tape."""
    x = _as_matrix(x, "x")
    if x.shape[0] != model.L:
        raise ValueError(f"x has {x.shape[0]} rows, model expects L={model.L}")
    x_norm, stats = normalize(x)
    ins, pre, y_norm = _forward_rows(model, x_norm.T)
    tape = FullTape(ins=ins, pre=pre,
                    block_weights=[b.weight for b in model.blocks],
                    head_in=pre[-1], head_weight=model.head.weight,
                    y_norm=y_norm, stats=stats, tap_index=model.tap_index)
    return pre[model.tap_index], stats, tape


def predict_with_tape(model: ForecastModel, x) -> Tuple[np.ndarray, FullTape]:
    """Prediction plus the full tape of the same pass (for parameter grads)."""
    _, stats, tape = encode(model, x)
    return denormalize(tape.y_norm.T, stats), tape


def head_forward_with_tape(model: ForecastModel, z_adj, stats: NormStats
                           ) -> Tuple[np.ndarray, HeadTape]:
    """Resume the forward pass from the tap with a (possibly adjusted) z."""
    z_adj = _as_matrix(z_adj, "z_adj")
    if z_adj.shape[1] != model.d:
        raise ValueError(f"z_adj width {z_adj.shape[1]} != feature width {model.d}")
    relu_srcs: List[np.ndarray] = []
    post_weights: List[np.ndarray] = []
    h = z_adj
    for i in range(model.tap_index + 1, len(model.blocks)):
        blk = model.blocks[i]
        relu_srcs.append(h)
        post_weights.append(blk.weight)
        h = affine_apply(blk.weight, blk.bias, np.maximum(h, 0.0))
    y_norm = affine_apply(model.head.weight, model.head.bias, h)
    y_hat = denormalize(y_norm.T, stats)
    tape = HeadTape(tap_input=z_adj, relu_srcs=relu_srcs, post_weights=post_weights,
                    head_in=h, head_weight=model.head.weight, stats=stats)
    return y_hat, tape


def head_forward(model: ForecastModel, z_adj, stats: NormStats) -> np.ndarray:
    y_hat, _ = head_forward_with_tape(model, z_adj, stats)
    return y_hat


def predict(model: ForecastModel, x) -> np.ndarray:
    """Full model output; literally encode followed by head_forward."""
    z, stats, _ = encode(model, x)
    return head_forward(model, z, stats)


def _grad_into_norm(grad_yhat: np.ndarray, stats: NormStats) -> np.ndarray:
    """dL/d(y_norm rows): undo denormalization and transpose to (C x k)."""
    return (np.asarray(grad_yhat, dtype=np.float64) * stats.std).T


def _head_tape(tape) -> HeadTape:
    return tape.head_view() if isinstance(tape, FullTape) else tape


def grad_wrt_feature(model: ForecastModel, tape, grad_yhat) -> np.ndarray:
    """Backpropagate dL/dy_hat to the tap input recorded on the tape."""
    if tape is None:
        raise ValueError("grad_wrt_feature needs a forward tape")
    ht = _head_tape(tape)
    g = _grad_into_norm(grad_yhat, ht.stats) @ ht.head_weight
    for src, w in zip(reversed(ht.relu_srcs), reversed(ht.post_weights)):
        g = (g @ w) * (src > 0.0)
    return g


def grad_wrt_last_layer(model: ForecastModel, tape, grad_yhat
                        ) -> Tuple[np.ndarray, np.ndarray]:
    """Head weight/bias gradients for the pass recorded on the tape."""
    if tape is None:
        raise ValueError("grad_wrt_last_layer needs a forward tape")
    ht = _head_tape(tape)
    g_norm = _grad_into_norm(grad_yhat, ht.stats)
    return g_norm.T @ ht.head_in, g_norm.sum(axis=0)


def _backward_all_params(block_weights: List[np.ndarray], ins: List[np.ndarray],
                         pre: List[np.ndarray], head_weight: np.ndarray,
                         head_in: np.ndarray, g_norm: np.ndarray
                         ) -> Dict[str, np.ndarray]:
    grads = {"head.weight": g_norm.T @ head_in, "head.bias": g_norm.sum(axis=0)}
    g = g_norm @ head_weight
    for i in range(len(block_weights) - 1, -1, -1):
        grads[f"blocks.{i}.weight"] = g.T @ ins[i]
        grads[f"blocks.{i}.bias"] = g.sum(axis=0)
        if i > 0:
            g = (g @ block_weights[i]) * (pre[i - 1] > 0.0)
    return grads


def param_grads(model: ForecastModel, tape: FullTape, grad_yhat) -> Dict[str, np.ndarray]:
    """Gradients of every model parameter for the pass on a full tape."""
    if not isinstance(tape, FullTape):
        raise ValueError("param_grads needs a FullTape from encode")
    g_norm = _grad_into_norm(grad_yhat, tape.stats)
    return _backward_all_params(tape.block_weights, tape.ins, tape.pre,
                                tape.head_weight, tape.head_in, g_norm)


def apply_param_step(model: ForecastModel, grads: Dict[str, np.ndarray], lr: float) -> None:
    """One SGD step on the named parameters; allocates fresh arrays so that
    existing tapes keep pointing at the pre-step values."""
    if lr == 0.0:
        return
    for name, value in model.named_params():
        g = grads.get(name)
        if g is not None:
            model.set_param(name, value - lr * g)


def offline_train(model: ForecastModel, train_samples: Sequence[Sample],
                  epochs: int, lr: float = 0.001, batch: int = 32,
                  seed: int = 0) -> ForecastModel:
    """Mini-batch SGD on MSE over the shuffled train split; returns a clone.

    Channel rows of a batch are stacked into one matrix per layer call, so a
    batch of m samples with C channels runs as (m*C) rows.
    """
    if not train_samples:
        raise ValueError("train_samples is empty")
    out = model.clone()
    if epochs == 0:
        return out
    normed = [normalize(s.x) for s in train_samples]
    x_rows = [xn.T for xn, _ in normed]                    # each C x L
    y_rows = [np.asarray(s.y, dtype=np.float64).T for s in train_samples]
    stds = [st.std for _, st in normed]
    means = [st.mean for _, st in normed]
    rng = np.random.default_rng(seed)
    n = len(train_samples)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = order[lo:lo + batch]
            rows = np.vstack([x_rows[j] for j in idx])
            targ = np.vstack([y_rows[j] for j in idx])
            std_col = np.concatenate([stds[j] for j in idx])[:, None]
            mean_col = np.concatenate([means[j] for j in idx])[:, None]
            ins, pre, y_norm = _forward_rows(out, rows)
            diff = (y_norm * std_col + mean_col) - targ
            g_norm = (2.0 * diff / diff.size) * std_col
            grads = _backward_all_params([b.weight for b in out.blocks], ins, pre,
                                         out.head.weight, pre[-1], g_norm)
            apply_param_step(out, grads, lr)
    return out


def save_model(model: ForecastModel, path: str) -> None:
    meta = {"kind": "forecaster", "L": str(model.L), "k": str(model.k),
            "d": str(model.d), "blocks": str(len(model.blocks)),
            "tap_index": str(model.tap_index)}
    checkpoint.write_blocks(path, meta, model.named_params())


def load_model(path: str) -> ForecastModel:
    meta, params = checkpoint.read_blocks(path)
    if meta.get("kind") != "forecaster":
        raise ValueError(f"{path}: not a forecaster checkpoint")
    n_blocks = int(meta["blocks"])
    blocks = [AffineLayer(params[f"blocks.{i}.weight"],
                          params[f"blocks.{i}.bias"].reshape(-1))
              for i in range(n_blocks)]
    head = AffineLayer(params["head.weight"], params["head.bias"].reshape(-1))
    return ForecastModel(blocks, head, int(meta["L"]), int(meta["k"]),
                         int(meta["tap_index"]))
