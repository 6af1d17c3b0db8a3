"""Streaming deployment loop under k-step delayed feedback.

Four methods over the same strict-time-order sample stream:

  ori     frozen pretrained model, no adaptation
  fogd    persistent feature-space correction, delayed single-sample step
  ogd     delayed single-sample step on all model parameters
  adaptz  dual-path adapter producing the correction from the current
          feature and a batched historical feature-gradient; adapter and
          head are updated from a b-sample window of cached predictions

Every method predicts first and only then observes the delayed target, so
the first m predictions never depend on how much stream follows. Learning
reads go through a ring cache that logs (reader_step, read_step) pairs,
which lets tests audit that updates only touch records at least k old.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adapter import (AdapterNet, AdapterTape, adapter_backward_tape,
                      adapter_forward_with_tape, sgd_step)
from .diffmath import mse_with_grad
from .forecaster import (ForecastModel, HeadTape, NormStats, Sample,
                         apply_param_step, encode, grad_wrt_feature,
                         grad_wrt_last_layer, head_forward_with_tape,
                         param_grads, predict_with_tape)

METHODS = ("ori", "fogd", "ogd", "adaptz")
PRETRAIN_EPOCH_CHOICES = (0, 1, 3, 5, 10)


@dataclass
class EngineConfig:
    method: str = "adaptz"
    horizon: int = 24
    lookback: int = 96
    hist_batch: int = 24
    lr_adapter: float = 0.0003
    lr_head: float = 0.00003
    lr_fogd: float = 0.001
    lr_ogd: float = 0.000003
    pretrain_epochs: int = 3
    pretrain_lr: float = 0.001
    use_feat: bool = True
    use_grad: bool = True
    freeze_online: bool = False
    hisgrad_adjusted: bool = False  # experimental: gradient at g(z+delta)
    seed: int = 2025

    def validated(self) -> "EngineConfig":
        if self.method not in METHODS:
            raise ValueError(f"method {self.method!r} not in {METHODS}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.hist_batch < 1:
            raise ValueError("hist_batch must be >= 1")
        if self.lookback < 2:
            raise ValueError("lookback must be >= 2")
        # zero is allowed so frozen-equivalence runs can switch learning off
        for name in ("lr_adapter", "lr_head", "lr_fogd", "lr_ogd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.pretrain_epochs not in PRETRAIN_EPOCH_CHOICES:
            raise ValueError(
                f"pretrain_epochs must be one of {PRETRAIN_EPOCH_CHOICES}")
        if self.pretrain_lr <= 0:
            raise ValueError("pretrain_lr must be > 0")
        return self


@dataclass
class StepRecord:
    """Per-step cache entry; fields unused by a method stay None."""

    t: int
    y: np.ndarray
    x: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    hisgrad_used: Optional[np.ndarray] = None
    delta: Optional[np.ndarray] = None
    yhat: Optional[np.ndarray] = None
    stats: Optional[NormStats] = None
    head_tape: Optional[HeadTape] = None
    adapter_tape: Optional[AdapterTape] = None


class RingCache:
    """Bounded step-keyed store with an instrumented read log."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: Dict[int, StepRecord] = {}
        self.read_log: List[Tuple[int, int]] = []
        self.feature_shape: Optional[Tuple[int, int]] = None

    def put(self, t: int, rec: StepRecord) -> None:
        self._data[t] = rec
        if rec.z is not None:
            self.feature_shape = rec.z.shape
        for key in [key for key in self._data if key <= t - self.capacity]:
            del self._data[key]

    def get(self, t: int, reader: Optional[int] = None) -> StepRecord:
        if t not in self._data:
            raise RuntimeError(
                f"cache miss for step {t}: evicted or never stored")
        if reader is not None:
            self.read_log.append((reader, t))
        return self._data[t]

    def __contains__(self, t: int) -> bool:
        return t in self._data


@dataclass
class MetricsTrace:
    method: str
    steps: List[int]
    step_mse: np.ndarray
    preds: List[np.ndarray]
    final_model: ForecastModel
    final_adapter: Optional[AdapterNet] = None
    cache_reads: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def mse(self) -> float:
        return float(np.mean(self.step_mse)) if len(self.step_mse) else float("nan")

    def cum_mse(self) -> np.ndarray:
        n = len(self.step_mse)
        return np.cumsum(self.step_mse) / np.arange(1, n + 1)


def write_trace_csv(trace: MetricsTrace, path: str) -> None:
    lines = ["t,step_mse,cum_mse"]
    for t, sm, cm in zip(trace.steps, trace.step_mse, trace.cum_mse()):
        lines.append(f"{t},{repr(float(sm))},{repr(float(cm))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _check_cfg_model(model: ForecastModel, cfg: EngineConfig) -> None:
    if cfg.horizon != model.k:
        raise ValueError(f"cfg.horizon {cfg.horizon} != model horizon {model.k}")
    if cfg.lookback != model.L:
        raise ValueError(f"cfg.lookback {cfg.lookback} != model lookback {model.L}")


def _check_sample(model: ForecastModel, sample: Sample, prev_origin: Optional[int],
                  channels: Optional[int]) -> int:
    x = sample.x
    y = sample.y
    if x.shape[0] != model.L:
        raise ValueError(f"sample x rows {x.shape[0]} != lookback {model.L}")
    if channels is not None and x.shape[1] != channels:
        raise ValueError(f"channel count changed: {x.shape[1]} != {channels}")
    if y.shape != (model.k, x.shape[1]):
        raise ValueError(f"sample y shape {y.shape} != ({model.k}, {x.shape[1]})")
    if prev_origin is not None and sample.origin <= prev_origin:
        raise ValueError(
            f"out-of-order stream timestamps: {sample.origin} after {prev_origin}")
    return x.shape[1]


def compute_hisgrad(model: ForecastModel, cache: RingCache, t: int, k: int,
                    b: int, adjusted: bool = False) -> np.ndarray:
    """Average over the window [t-k-b+1, t-k] of the per-sample gradient of
    the squared forecast error with respect to the cached feature, evaluated
    under the model's current parameters. Zero matrix before warm-up.

    The window is stacked into one (b*C)-row pass: the model is channel
    independent, so b*C rows behave like one sample with b*C channels.
    """
    if cache.feature_shape is None:
        raise RuntimeError("compute_hisgrad: cache holds no feature records")
    if t < k + b - 1:
        return np.zeros(cache.feature_shape)
    recs = [cache.get(i, reader=t) for i in range(t - k - b + 1, t - k + 1)]
    C, d = cache.feature_shape
    if adjusted:
        rows = np.vstack([rec.z + rec.delta for rec in recs])
    else:
        rows = np.vstack([rec.z for rec in recs])
    stacked = NormStats(mean=np.concatenate([r.stats.mean for r in recs]),
                        std=np.concatenate([r.stats.std for r in recs]))
    y_stack = np.hstack([rec.y for rec in recs])            # k x (b*C)
    yhat, tape = head_forward_with_tape(model, rows, stacked)
    g_yhat = 2.0 * (yhat - y_stack) / (model.k * C)         # per-sample MSE grad
    g_rows = grad_wrt_feature(model, tape, g_yhat)
    return g_rows.reshape(b, C, d).mean(axis=0)


def _window_update(model: ForecastModel, a: AdapterNet, cache: RingCache,
                   s: int, k: int, b: int, cfg: EngineConfig) -> None:
    """One delayed update from the b cached adjusted predictions: window MSE
    backpropagated through each step's own tape (parameters as they were)."""
    a_grads: Dict[str, np.ndarray] = {}
    gw_head: Optional[np.ndarray] = None
    gb_head: Optional[np.ndarray] = None
    for i in range(s - k - b + 1, s - k + 1):
        rec = cache.get(i, reader=s)
        _, g_sample = mse_with_grad(rec.yhat, rec.y)
        g_y = g_sample / b                                  # window-mean loss
        if cfg.lr_head > 0:
            gw, gb = grad_wrt_last_layer(model, rec.head_tape, g_y)
            gw_head = gw if gw_head is None else gw_head + gw
            gb_head = gb if gb_head is None else gb_head + gb
        if cfg.lr_adapter > 0:
            g_z = grad_wrt_feature(model, rec.head_tape, g_y)
            for name, g in adapter_backward_tape(rec.adapter_tape, g_z).items():
                a_grads[name] = g if name not in a_grads else a_grads[name] + g
    if cfg.lr_adapter > 0:
        sgd_step(a, a_grads, cfg.lr_adapter)
    if cfg.lr_head > 0:
        model.head.weight = model.head.weight - cfg.lr_head * gw_head
        model.head.bias = model.head.bias - cfg.lr_head * gb_head


def run_ori(model: ForecastModel, stream: Sequence[Sample],
            cfg: EngineConfig) -> MetricsTrace:
    """Frozen baseline: predict every sample, adapt nothing."""
    cfg.validated()
    _check_cfg_model(model, cfg)
    model = model.clone()
    steps: List[int] = []
    mses: List[float] = []
    preds: List[np.ndarray] = []
    prev = None
    channels = None
    for sample in stream:
        channels = _check_sample(model, sample, prev, channels)
        prev = sample.origin
        z, stats, _ = encode(model, sample.x)
        yhat, _ = head_forward_with_tape(model, z, stats)
        loss, _ = mse_with_grad(yhat, sample.y)
        steps.append(sample.origin)
        mses.append(loss)
        preds.append(yhat)
    return MetricsTrace("ori", steps, np.asarray(mses), preds, final_model=model)


def run_adaptz(model: ForecastModel, adapter_net: AdapterNet,
               stream: Sequence[Sample], cfg: EngineConfig) -> MetricsTrace:
    """Adapter-corrected deployment with the delayed window update."""
    cfg.validated()
    _check_cfg_model(model, cfg)
    model = model.clone()
    a = adapter_net.clone()
    a.use_feat = cfg.use_feat
    a.use_grad = cfg.use_grad
    k, b = model.k, cfg.hist_batch
    cache = RingCache(k + b + 2)
    hisgrad: Optional[np.ndarray] = None
    steps: List[int] = []
    mses: List[float] = []
    preds: List[np.ndarray] = []
    prev = None
    channels = None
    learning = (not cfg.freeze_online) and (cfg.lr_adapter > 0 or cfg.lr_head > 0)
    for s, sample in enumerate(stream):
        channels = _check_sample(model, sample, prev, channels)
        prev = sample.origin
        z, stats, _ = encode(model, sample.x)
        if hisgrad is None:
            hisgrad = np.zeros_like(z)
        delta, a_tape = adapter_forward_with_tape(a, z, hisgrad)
        yhat, h_tape = head_forward_with_tape(model, z + delta, stats)
        loss, _ = mse_with_grad(yhat, sample.y)             # metrics-only read
        steps.append(sample.origin)
        mses.append(loss)
        preds.append(yhat)
        cache.put(s, StepRecord(t=s, y=sample.y, z=z, hisgrad_used=hisgrad,
                                delta=delta, yhat=yhat, stats=stats,
                                head_tape=h_tape, adapter_tape=a_tape))
        # next step's hisgrad, evaluated before this step's parameter update
        hisgrad = compute_hisgrad(model, cache, s, k, b,
                                  adjusted=cfg.hisgrad_adjusted)
        if learning and s >= k + b - 1:
            _window_update(model, a, cache, s, k, b, cfg)
    return MetricsTrace("adaptz", steps, np.asarray(mses), preds,
                        final_model=model, final_adapter=a,
                        cache_reads=cache.read_log)


def run_fogd(model: ForecastModel, stream: Sequence[Sample],
             cfg: EngineConfig) -> MetricsTrace:
    """Feature-space delayed gradient descent on a persistent correction."""
    cfg.validated()
    _check_cfg_model(model, cfg)
    model = model.clone()
    k = model.k
    cache = RingCache(k + 2)
    delta: Optional[np.ndarray] = None
    steps: List[int] = []
    mses: List[float] = []
    preds: List[np.ndarray] = []
    prev = None
    channels = None
    for s, sample in enumerate(stream):
        channels = _check_sample(model, sample, prev, channels)
        prev = sample.origin
        z, stats, _ = encode(model, sample.x)
        if delta is None:
            delta = np.zeros_like(z)
        yhat, h_tape = head_forward_with_tape(model, z + delta, stats)
        loss, _ = mse_with_grad(yhat, sample.y)
        steps.append(sample.origin)
        mses.append(loss)
        preds.append(yhat)
        cache.put(s, StepRecord(t=s, y=sample.y, z=z, delta=delta, yhat=yhat,
                                stats=stats, head_tape=h_tape))
        if s >= k and cfg.lr_fogd > 0:
            rec = cache.get(s - k, reader=s)
            _, g_y = mse_with_grad(rec.yhat, rec.y)
            g_delta = grad_wrt_feature(model, rec.head_tape, g_y)
            delta = delta - cfg.lr_fogd * g_delta
    return MetricsTrace("fogd", steps, np.asarray(mses), preds,
                        final_model=model, cache_reads=cache.read_log)


def run_ogd(model: ForecastModel, stream: Sequence[Sample],
            cfg: EngineConfig) -> MetricsTrace:
    """Delayed single-sample gradient step on all model parameters."""
    cfg.validated()
    _check_cfg_model(model, cfg)
    model = model.clone()
    k = model.k
    cache = RingCache(k + 2)
    steps: List[int] = []
    mses: List[float] = []
    preds: List[np.ndarray] = []
    prev = None
    channels = None
    for s, sample in enumerate(stream):
        channels = _check_sample(model, sample, prev, channels)
        prev = sample.origin
        z, stats, _ = encode(model, sample.x)
        yhat, _ = head_forward_with_tape(model, z, stats)
        loss, _ = mse_with_grad(yhat, sample.y)
        steps.append(sample.origin)
        mses.append(loss)
        preds.append(yhat)
        cache.put(s, StepRecord(t=s, y=sample.y, x=sample.x, stats=stats))
        if s >= k and cfg.lr_ogd > 0:
            rec = cache.get(s - k, reader=s)
            yh_d, ftape = predict_with_tape(model, rec.x)
            _, g_y = mse_with_grad(yh_d, rec.y)
            apply_param_step(model, param_grads(model, ftape, g_y), cfg.lr_ogd)
    return MetricsTrace("ogd", steps, np.asarray(mses), preds,
                        final_model=model, cache_reads=cache.read_log)


def run_method(method: str, model: ForecastModel, adapter_net: Optional[AdapterNet],
               stream: Sequence[Sample], cfg: EngineConfig) -> MetricsTrace:
    if method == "ori":
        return run_ori(model, stream, cfg)
    if method == "fogd":
        return run_fogd(model, stream, cfg)
    if method == "ogd":
        return run_ogd(model, stream, cfg)
    if method == "adaptz":
        if adapter_net is None:
            raise ValueError("adaptz needs an adapter")
        return run_adaptz(model, adapter_net, stream, cfg)
    raise ValueError(f"unknown method {method!r}")


def pretrain_adapter(model: ForecastModel, adapter_net: AdapterNet,
                     val_samples: Sequence[Sample], epochs: int,
                     lr: float = 0.001, seed: int = 2025,
                     hist_batch: int = 24,
                     hisgrad_adjusted: bool = False) -> AdapterNet:
    """Calibrate the adapter by replaying the validation split.

    Runs the adaptz loop over the split once per epoch with caches reset,
    carrying the adapter across epochs; the head stays frozen (it only
    moves during deployment). The replay is chronological and fully
    deterministic, so `seed` is accepted for interface parity only.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    a = adapter_net.clone()
    if epochs == 0 or not len(val_samples):
        return a
    cfg = EngineConfig(method="adaptz", horizon=model.k, lookback=model.L,
                       hist_batch=hist_batch, lr_adapter=lr, lr_head=0.0,
                       use_feat=a.use_feat, use_grad=a.use_grad,
                       hisgrad_adjusted=hisgrad_adjusted, seed=seed,
                       pretrain_epochs=0)
    for _ in range(epochs):
        trace = run_adaptz(model, a, val_samples, cfg)
        a = trace.final_adapter
    return a
