"""Experiment orchestration: config parsing, run grids, CSV outputs.

Config files are flat `key=value` text; blank lines and `#` comments are
ignored and repeating a key appends to a list (change_point, magnitude,
method, horizon, seed). `--set key=value` wins over the file with a
warning. Every run is summarized as one row of results.csv and emits a
trace_<run-id>.csv, where the run id is a content hash of the resolved
per-run configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import traceback
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .adapter import build_adapter
from .datastream import (DriftSpec, SeriesFrame, SplitSpec, chrono_split,
                         gen_concept_drift, gen_mean_shift, load_csv, write_csv)
from .engine import (EngineConfig, MetricsTrace, pretrain_adapter, run_method,
                     write_trace_csv)
from .forecaster import build_model, offline_train
from .regret import FAMILIES, report_rows, run_oco, make_problem

METHOD_TOKENS = ("ori", "fogd", "ogd", "adaptz", "adaptz-nograd", "adaptz-nofeat")

# every key a run config may contain, with its scalar/list arity
_LIST_KEYS = ("method", "horizon", "seed", "change_point", "magnitude")
_SCALAR_KEYS = (
    "data", "dataset", "kind", "length", "channels", "ar_coeff", "noise_std",
    "gen_seed", "lookback", "hist_batch", "lr_adapter", "lr_head", "lr_fogd",
    "lr_ogd", "pretrain_epochs", "pretrain_lr", "use_feat", "use_grad",
    "freeze_online", "hisgrad_adjusted", "width", "blocks", "tap_index",
    "train_epochs", "train_lr", "train_batch", "train_frac", "val_frac",
    "test_frac", "out_dir",
)
VALID_KEYS = tuple(sorted(_LIST_KEYS + _SCALAR_KEYS))
_GEN_KEYS = ("kind", "length", "channels", "ar_coeff", "noise_std", "gen_seed",
             "change_point", "magnitude")


@dataclass
class ExperimentPlan:
    dataset: str
    data_path: Optional[str]
    drift: Optional[DriftSpec]
    methods: List[str]
    horizons: List[int]
    seeds: List[int]
    split: SplitSpec
    engine: EngineConfig
    model_width: int = 64
    model_blocks: int = 3
    tap_index: Optional[int] = None
    train_epochs: int = 5
    train_lr: float = 0.001
    train_batch: int = 32
    out_dir: str = "runs"


def read_kv_file(path: str) -> List[Tuple[str, str]]:
    pairs: List[Tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            pairs.append((key.strip(), value.strip()))
    return pairs


def _merge_pairs(file_pairs: Sequence[Tuple[str, str]],
                 override_pairs: Sequence[Tuple[str, str]],
                 valid: Sequence[str], warn=None) -> Dict[str, List[str]]:
    for key, _ in list(file_pairs) + list(override_pairs):
        if key not in valid:
            raise ValueError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(valid))}")
    merged: Dict[str, List[str]] = {}
    for key, value in file_pairs:
        merged.setdefault(key, []).append(value)
    overridden: Dict[str, List[str]] = {}
    for key, value in override_pairs:
        if key in merged and key not in overridden and warn is not None:
            warn(f"warning: --set {key} overrides config file value {merged[key]}")
        overridden.setdefault(key, []).append(value)
    merged.update(overridden)
    return merged


def _get(conf: Dict[str, List[str]], key: str, cast, default):
    if key not in conf:
        return default
    raw = conf[key][-1]
    try:
        return cast(raw)
    except ValueError:
        raise ValueError(f"config key {key}: cannot parse {raw!r}") from None


def _get_list(conf: Dict[str, List[str]], key: str, cast, default):
    if key not in conf:
        return list(default)
    try:
        return [cast(raw) for raw in conf[key]]
    except ValueError:
        raise ValueError(f"config key {key}: cannot parse {conf[key]!r}") from None


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(raw)


def parse_overrides(sets: Sequence[str]) -> List[Tuple[str, str]]:
    pairs = []
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def _drift_from_conf(conf: Dict[str, List[str]], default_kind: str = "concept_drift"
                     ) -> DriftSpec:
    length = _get(conf, "length", int, 6000)
    default_cp = [int(0.8 * length)]
    return DriftSpec(
        kind=_get(conf, "kind", str, default_kind),
        change_points=_get_list(conf, "change_point", int, default_cp),
        magnitudes=_get_list(conf, "magnitude", float,
                             [1.0] * len(conf.get("change_point", default_cp))),
        ar_coeff=_get(conf, "ar_coeff", float, 0.8),
        noise_std=_get(conf, "noise_std", float, 0.1),
        channels=_get(conf, "channels", int, 2),
        length=length,
        seed=_get(conf, "gen_seed", int, 7),
    )


def parse_config(path: Optional[str] = None,
                 overrides: Sequence[str] = ()) -> ExperimentPlan:
    """Resolve a config file plus --set overrides into an ExperimentPlan.

    Defaults with an empty config match EngineConfig: hist_batch 24, the
    four learning rates, pretraining lr 0.001 over 3 epochs, seed 2025,
    lookback 96, split 60/10/30.
    """
    file_pairs = read_kv_file(path) if path is not None else []
    over_pairs = parse_overrides(overrides)
    conf = _merge_pairs(file_pairs, over_pairs, VALID_KEYS,
                        warn=lambda msg: print(msg, file=sys.stderr))
    methods = _get_list(conf, "method", str, ["adaptz"])
    for m in methods:
        if m not in METHOD_TOKENS:
            raise ValueError(f"unknown method {m!r}; valid: {', '.join(METHOD_TOKENS)}")
    data_path = _get(conf, "data", str, None)
    drift = None if data_path is not None else _drift_from_conf(conf)
    if data_path is not None:
        bad = [k for k in _GEN_KEYS if k in conf]
        if bad:
            raise ValueError(f"config mixes data= with generator keys {bad}")
        dataset = _get(conf, "dataset", str,
                       os.path.splitext(os.path.basename(data_path))[0])
    else:
        dataset = _get(conf, "dataset", str, drift.kind)
    engine = EngineConfig(
        method=_method_flags(methods[0])[0],
        horizon=_get_list(conf, "horizon", int, [24])[0],
        lookback=_get(conf, "lookback", int, 96),
        hist_batch=_get(conf, "hist_batch", int, 24),
        lr_adapter=_get(conf, "lr_adapter", float, 0.0003),
        lr_head=_get(conf, "lr_head", float, 0.00003),
        lr_fogd=_get(conf, "lr_fogd", float, 0.001),
        lr_ogd=_get(conf, "lr_ogd", float, 0.000003),
        pretrain_epochs=_get(conf, "pretrain_epochs", int, 3),
        pretrain_lr=_get(conf, "pretrain_lr", float, 0.001),
        use_feat=_get(conf, "use_feat", _bool, True),
        use_grad=_get(conf, "use_grad", _bool, True),
        freeze_online=_get(conf, "freeze_online", _bool, False),
        hisgrad_adjusted=_get(conf, "hisgrad_adjusted", _bool, False),
        seed=_get_list(conf, "seed", int, [2025])[0],
    ).validated()
    split = SplitSpec(train_frac=_get(conf, "train_frac", float, 0.60),
                      val_frac=_get(conf, "val_frac", float, 0.10),
                      test_frac=_get(conf, "test_frac", float, 0.30))
    return ExperimentPlan(
        dataset=dataset, data_path=data_path, drift=drift, methods=methods,
        horizons=_get_list(conf, "horizon", int, [24]),
        seeds=_get_list(conf, "seed", int, [2025]),
        split=split, engine=engine,
        model_width=_get(conf, "width", int, 64),
        model_blocks=_get(conf, "blocks", int, 3),
        tap_index=_get(conf, "tap_index", int, None),
        train_epochs=_get(conf, "train_epochs", int, 5),
        train_lr=_get(conf, "train_lr", float, 0.001),
        train_batch=_get(conf, "train_batch", int, 32),
        out_dir=_get(conf, "out_dir", str, "runs"),
    )


def _method_flags(token: str) -> Tuple[str, bool, bool]:
    """Map a method token to (engine method, use_feat, use_grad)."""
    if token == "adaptz-nograd":
        return "adaptz", True, False
    if token == "adaptz-nofeat":
        return "adaptz", False, True
    return token, True, True


def _run_id(parts: Dict[str, str]) -> str:
    blob = "\n".join(f"{k}={parts[k]}" for k in sorted(parts))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _resolved_parts(plan: ExperimentPlan, cfg: EngineConfig, token: str,
                    horizon: int, seed: int) -> Dict[str, str]:
    parts = {
        "dataset": plan.dataset, "method": token, "horizon": str(horizon),
        "seed": str(seed), "width": str(plan.model_width),
        "blocks": str(plan.model_blocks), "tap_index": str(plan.tap_index),
        "train_epochs": str(plan.train_epochs), "train_lr": repr(plan.train_lr),
        "train_batch": str(plan.train_batch),
        "train_frac": repr(plan.split.train_frac),
        "val_frac": repr(plan.split.val_frac),
        "test_frac": repr(plan.split.test_frac),
    }
    if plan.data_path is not None:
        parts["data"] = plan.data_path
    else:
        d = plan.drift
        parts.update({"kind": d.kind, "length": str(d.length),
                      "channels": str(d.channels), "ar_coeff": repr(d.ar_coeff),
                      "noise_std": repr(d.noise_std), "gen_seed": str(d.seed),
                      "change_points": ",".join(map(str, d.change_points)),
                      "magnitudes": ",".join(map(repr, d.magnitudes))})
    for name in ("lookback", "hist_batch", "lr_adapter", "lr_head", "lr_fogd",
                 "lr_ogd", "pretrain_epochs", "pretrain_lr", "use_feat",
                 "use_grad", "freeze_online", "hisgrad_adjusted"):
        parts[name] = repr(getattr(cfg, name))
    return parts


def load_plan_frame(plan: ExperimentPlan) -> SeriesFrame:
    if plan.data_path is not None:
        return load_csv(plan.data_path)
    if plan.drift.kind == "mean_shift":
        return gen_mean_shift(plan.drift)
    return gen_concept_drift(plan.drift)


@dataclass
class RunResult:
    dataset: str
    method: str
    horizon: int
    seed: int
    mse: Optional[float]
    status: str
    run_id: str
    trace: Optional[MetricsTrace] = None
    imp: Optional[float] = None


def execute_plan(plan: ExperimentPlan) -> List[RunResult]:
    """Run the full grid in deterministic order; failures do not stop siblings."""
    frame = load_plan_frame(plan)
    splits: Dict[int, tuple] = {}
    trained_models: Dict[Tuple[int, int], object] = {}
    results: List[RunResult] = []
    for horizon in plan.horizons:
        for seed in plan.seeds:
            base_cfg = replace(plan.engine, horizon=horizon, seed=seed)
            for token in plan.methods:
                method, use_feat, use_grad = _method_flags(token)
                cfg = replace(base_cfg, method=method,
                              use_feat=use_feat and base_cfg.use_feat,
                              use_grad=use_grad and base_cfg.use_grad)
                parts = _resolved_parts(plan, cfg, token, horizon, seed)
                run_id = _run_id(parts)
                try:
                    if horizon not in splits:
                        splits[horizon] = chrono_split(frame, plan.split,
                                                       cfg.lookback, horizon)
                    train, val, test = splits[horizon]
                    if (horizon, seed) not in trained_models:
                        model = build_model(cfg.lookback, horizon,
                                            d=plan.model_width,
                                            n_blocks=plan.model_blocks,
                                            tap_index=plan.tap_index, seed=seed)
                        trained_models[(horizon, seed)] = offline_train(
                            model, train, plan.train_epochs, lr=plan.train_lr,
                            batch=plan.train_batch, seed=seed + 1)
                    trained = trained_models[(horizon, seed)]
                    adapter_net = None
                    if method == "adaptz":
                        adapter_net = build_adapter(trained.d,
                                                    use_feat=cfg.use_feat,
                                                    use_grad=cfg.use_grad,
                                                    seed=seed + 2)
                        if cfg.pretrain_epochs > 0:
                            adapter_net = pretrain_adapter(
                                trained, adapter_net, val, cfg.pretrain_epochs,
                                lr=cfg.pretrain_lr, seed=seed,
                                hist_batch=cfg.hist_batch,
                                hisgrad_adjusted=cfg.hisgrad_adjusted)
                    trace = run_method(method, trained, adapter_net, test, cfg)
                    results.append(RunResult(plan.dataset, token, horizon, seed,
                                             trace.mse, "ok", run_id, trace))
                except Exception:
                    traceback.print_exc(file=sys.stderr)
                    results.append(RunResult(plan.dataset, token, horizon, seed,
                                             None, "error", run_id))
    by_key = {(r.dataset, r.horizon, r.seed, r.method): r for r in results}
    for r in results:
        if r.method == "adaptz" and r.status == "ok":
            ori = by_key.get((r.dataset, r.horizon, r.seed, "ori"))
            if ori is not None and ori.status == "ok" and ori.mse:
                r.imp = (ori.mse - r.mse) / ori.mse
    return results


RESULTS_HEADER = "dataset,method,horizon,seed,mse,status,imp"


def results_rows(results: List[RunResult]) -> List[str]:
    rows = [RESULTS_HEADER]
    for r in results:
        mse = "" if r.mse is None else repr(float(r.mse))
        imp = "" if r.imp is None else repr(float(r.imp))
        rows.append(f"{r.dataset},{r.method},{r.horizon},{r.seed},{mse},{r.status},{imp}")
    return rows


def run_plan(plan: ExperimentPlan) -> Tuple[List[RunResult], str]:
    """Execute and write results.csv plus one trace CSV per successful run.

    Returns (results, results_path); process exit status should be nonzero
    iff any run aborted.
    """
    os.makedirs(plan.out_dir, exist_ok=True)
    results = execute_plan(plan)
    results_path = os.path.join(plan.out_dir, "results.csv")
    with open(results_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(results_rows(results)) + "\n")
    for r in results:
        if r.trace is not None:
            write_trace_csv(r.trace, os.path.join(plan.out_dir,
                                                  f"trace_{r.run_id}.csv"))
    return results, results_path


def _cmd_run(args) -> int:
    plan = parse_config(args.config, args.set or [])
    results, results_path = run_plan(plan)
    for r in results:
        mse = "" if r.mse is None else f" mse={r.mse:.6f}"
        print(f"[{r.status}] {r.dataset} {r.method} h={r.horizon} seed={r.seed}{mse}")
    print(f"wrote {results_path}")
    return 0 if all(r.status == "ok" for r in results) else 1


def _cmd_gen(args) -> int:
    pairs = read_kv_file(args.drift)
    conf = _merge_pairs(pairs, [], _GEN_KEYS)
    spec = _drift_from_conf(conf)
    frame = gen_mean_shift(spec) if spec.kind == "mean_shift" else gen_concept_drift(spec)
    write_csv(frame, args.out)
    print(f"wrote {args.out} ({frame.T} rows, {frame.C} channels)")
    return 0


def _cmd_regret(args) -> int:
    families = FAMILIES if args.family == "all" else (args.family,)
    for fam in families:
        if fam not in FAMILIES:
            raise ValueError(f"unknown family {fam!r}; valid: {', '.join(FAMILIES)} or all")
    runs = [run_oco(make_problem(fam, 2025 + i))
            for fam in families for i in range(args.seeds)]
    rows = report_rows(runs)
    text = "\n".join(rows) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    n_fail = sum(1 for row in rows[1:] if row.endswith(",0"))
    return 0 if n_fail == 0 else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="driftcast",
        description="streaming forecaster adaptation experiments")
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="execute an experiment plan")
    p_run.add_argument("--config", default=None, help="flat key=value config file")
    p_run.add_argument("--set", action="append", metavar="key=value",
                       help="override a config key (wins over the file)")
    p_gen = sub.add_parser("gen", help="generate a synthetic drift CSV")
    p_gen.add_argument("--drift", required=True, help="drift spec file (key=value)")
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_reg = sub.add_parser("regret", help="run the dynamic-regret bound sweep")
    p_reg.add_argument("--family", required=True,
                       help=f"one of {', '.join(FAMILIES)}, or all")
    p_reg.add_argument("--seeds", type=int, default=20)
    p_reg.add_argument("--out", default=None, help="also write the report here")
    args = parser.parse_args(argv)
    try:
        if args.cmd == "run":
            return _cmd_run(args)
        if args.cmd == "gen":
            return _cmd_gen(args)
        return _cmd_regret(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
