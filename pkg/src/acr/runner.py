"""Seeded experiment execution: configs, per-seed runs, sweeps and reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .buffer import canonical_policy
from .data import CORRUPTIONS, TaskStream, make_image_stream, make_synthetic_stream, parse_corruption
from .estimator import ACRClassifier
from .evaluate import AccuracyMatrix, acc, bwt, iid_row, ood_accuracy_matrix

logger = logging.getLogger(__name__)

ENV_PREFIX = "ACR_"
SUMMARY_COLUMNS = ["policy", "seed", "ACC_iid", "BWT_iid", "ACC_ood", "BWT_ood", "CV_tasks", "CV_classes"]
METRICS = SUMMARY_COLUMNS[2:]


def default_stream() -> dict:
    return {"kind": "image", "T": 5, "classes_per_task": 4, "samples_per_class": 250, "side": 10}


def default_corruptions() -> List[str]:
    return [f"{k}:{s}" for k in CORRUPTIONS for s in range(1, 6)]


@dataclass
class RunConfig:
    stream: dict = field(default_factory=default_stream)
    policy: str = "challenging"
    loss: str = "pcl"
    buffer_size: int = 200
    batch_size: int = 16
    epochs: int = 20
    E: int = 5
    tau: float = 0.1
    lr: float = 0.05
    hidden: List[int] = field(default_factory=lambda: [64])
    embed_dim: int = 32
    normalize: bool = False
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    corruptions: List[str] = field(default_factory=default_corruptions)
    out: str = "runs/default"
    dump_ledgers: bool = False
    save_checkpoints: bool = False

    def validate(self) -> "RunConfig":
        self.policy = canonical_policy(self.policy)
        if self.loss not in ("pcl", "ce"):
            raise ValueError(f"loss must be 'pcl' or 'ce', got {self.loss!r}")
        if self.batch_size < 1 or self.buffer_size < 1:
            raise ValueError("batch_size and buffer_size must be >= 1")
        if not 1 <= self.E <= self.epochs:
            raise ValueError(f"need 1 <= E <= epochs (E={self.E}, epochs={self.epochs})")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for spec in self.corruptions:
            parse_corruption(spec)
        return self

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(doc: dict, overrides: Dict[str, object]) -> dict:
    """Set ``key`` or ``stream.key`` entries; unknown keys are rejected."""
    names = {f.name for f in dataclasses.fields(RunConfig)}
    doc = json.loads(json.dumps(doc))
    for key, value in overrides.items():
        head, _, rest = key.partition(".")
        if head not in names:
            raise KeyError(f"unknown config key {key!r}")
        if rest:
            doc.setdefault(head, {})[rest] = value
        else:
            doc[head] = value
    return doc


def env_overrides(environ=None) -> Dict[str, object]:
    """``ACR_EPOCHS=3`` -> ``{"epochs": 3}``; ``ACR_STREAM__SIDE=12`` -> ``{"stream.side": 12}``."""
    environ = os.environ if environ is None else environ
    fields = {f.name.lower(): f.name for f in dataclasses.fields(RunConfig)}
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX) and len(k) > len(ENV_PREFIX):
            head, sep, rest = k[len(ENV_PREFIX):].lower().partition("__")
            key = fields.get(head, head) + (f".{rest.replace('__', '.')}" if sep else "")
            out[key] = _coerce(v)
    return out


def config_from_dict(doc: dict) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - names
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    doc = dict(doc)
    if "stream" in doc:
        doc["stream"] = {**default_stream(), **doc["stream"]}
    return RunConfig(**doc).validate()


def load_config(path, overrides: Optional[Dict[str, object]] = None, environ=None) -> RunConfig:
    """Read a JSON config; environment overrides apply first, then ``overrides``."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{p}: invalid JSON ({exc})") from None
    doc = apply_overrides(doc, env_overrides(environ))
    doc = apply_overrides(doc, overrides or {})
    return config_from_dict(doc)


def build_stream(spec: dict, seed: int) -> TaskStream:
    spec = dict(spec)
    kind = spec.pop("kind", "image")
    if kind == "image":
        return make_image_stream(seed=seed, **spec)
    if kind == "vector":
        return make_synthetic_stream(seed=seed, **spec)
    raise ValueError(f"unknown stream kind {kind!r}")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def make_estimator(config: RunConfig, seed: int, side: Optional[int]) -> ACRClassifier:
    return ACRClassifier(
        policy=config.policy, loss=config.loss, buffer_size=config.buffer_size, batch_size=config.batch_size,
        epochs=config.epochs, E=config.E, tau=config.tau, lr=config.lr, hidden=tuple(config.hidden),
        embed_dim=config.embed_dim, normalize=config.normalize, image_side=side, random_state=seed,
    )


def run_seed(config: RunConfig, seed: int, outdir: Optional[Path] = None) -> dict:
    """Train on every task of the seed's stream, evaluating after each one."""
    stream = build_stream(config.stream, seed)
    clf = make_estimator(config, seed, stream.side)
    tests = stream.test_sets()
    iid = AccuracyMatrix(stream.T, "iid")
    snapshots = []
    cv_history = []
    for task in stream.tasks:
        clf.partial_fit(task.X_train, task.y_train, task_id=task.task_id, sample_ids=task.ids_train)
        snapshots.append(clf.snapshot())
        for j, v in enumerate(iid_row(clf, tests, task.task_id)):
            iid.set(task.task_id, j, v)
        cv = clf.buffer_.cv_report()
        cv_history.append({"stage": task.task_id, "size": len(clf.buffer_), **cv})
        if outdir is not None and config.dump_ledgers and clf.ledger_ is not None:
            outdir.mkdir(parents=True, exist_ok=True)
            clf.ledger_.to_csv(outdir / f"confidence_task{task.task_id}.csv")

    ood, per_spec = None, {}
    if stream.kind == "image" and config.corruptions:
        specs = [parse_corruption(s) for s in config.corruptions]
        ood, per_spec = ood_accuracy_matrix(snapshots, tests, specs, stream.side, seed)

    final_cv = cv_history[-1]
    row = {
        "policy": config.policy,
        "seed": seed,
        "ACC_iid": acc(iid),
        "BWT_iid": bwt(iid),
        "ACC_ood": acc(ood) if ood is not None else None,
        "BWT_ood": bwt(ood) if ood is not None else None,
        "CV_tasks": final_cv["cv_tasks"],
        "CV_classes": final_cv["cv_classes"],
    }
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        iid.to_csv(outdir / "alpha_iid.csv")
        if ood is not None:
            ood.to_csv(outdir / "alpha_ood.csv")
            for (kind, sev), m in per_spec.items():
                m.to_csv(outdir / f"alpha_ood_{kind}_{sev}.csv")
        clf.buffer_.export_json(outdir / "buffer.json")
        with open(outdir / "buffer_cv.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "size", "cv_tasks", "cv_classes"])
            for h in cv_history:
                w.writerow([h["stage"], h["size"], _fmt(h["cv_tasks"]), _fmt(h["cv_classes"])])
        if config.save_checkpoints:
            from .model import save_checkpoint

            save_checkpoint(outdir / "checkpoint.json", clf.encoder_, clf.proxies_)
    return {"row": row, "iid": iid, "ood": ood, "per_spec": per_spec, "cv_history": cv_history,
            "model": clf}


def aggregate(rows: Sequence[dict]) -> Dict[str, Dict[str, float]]:
    """Mean and population std of every metric across seed rows."""
    out = {}
    for m in METRICS:
        vals = np.array([r[m] for r in rows if r[m] is not None and not np.isnan(r[m])], dtype=np.float64)
        out[m] = {"mean": float(vals.mean()) if vals.size else None,
                  "std": float(vals.std()) if vals.size else None}
    return out


def write_summary(path: Path, rows: Sequence[dict], agg: Dict[str, Dict[str, float]], policy: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
        w.writerow([policy, "mean", *[_fmt(agg[m]["mean"]) for m in METRICS]])


def run_experiment(config: RunConfig) -> dict:
    """Run every seed, write per-seed outputs and ``summary.csv`` under ``config.out``."""
    config.validate()
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    rows = []
    for seed in config.seeds:
        logger.info("policy=%s seed=%d", config.policy, seed)
        rows.append(run_seed(config, seed, out / f"seed_{seed}")["row"])
    agg = aggregate(rows)
    write_summary(out / "summary.csv", rows, agg, config.policy)
    (out / "aggregate.json").write_text(json.dumps({"policy": config.policy, "seeds": list(config.seeds),
                                                    "metrics": agg}, indent=1))
    (out / "config.json").write_text(json.dumps(dataclasses.asdict(config), indent=1))
    return {"rows": rows, "aggregate": agg}


def parse_values(text: str) -> List:
    """``"2..7"`` -> [2, ..., 7]; ``"2,3,5"`` -> [2, 3, 5]; non-integers kept as JSON values."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [_coerce(v.strip()) for v in text.split(",") if v.strip()]


def sweep(config: RunConfig, param: str, values: Sequence) -> List[dict]:
    """One full experiment per value, each under ``<out>/<param>=<value>``."""
    base = Path(config.out)
    results = []
    for v in values:
        doc = apply_overrides(dataclasses.asdict(config), {param: v, "out": str(base / f"{param}={v}")})
        cfg = config_from_dict(doc)
        res = run_experiment(cfg)
        results.append({"value": v, **res})
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([param, *SUMMARY_COLUMNS])
        for res in results:
            for r in res["rows"]:
                w.writerow([res["value"], *[_fmt(r[c]) for c in SUMMARY_COLUMNS]])
    return results


def _read_summary(path: Path) -> List[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if not r["seed"].lstrip("-").isdigit():
                continue
            rows.append({"policy": r["policy"], "seed": int(r["seed"]),
                         **{m: float(r[m]) if r[m] else None for m in METRICS}})
    return rows


def report(directory) -> List[dict]:
    """Collect every ``summary.csv`` below ``directory`` into one comparison table."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"report directory not found: {root}")
    table = []
    for path in sorted(root.rglob("summary.csv")):
        rows = _read_summary(path)
        if not rows:
            continue
        agg = aggregate(rows)
        label = str(path.parent.relative_to(root)) if path.parent != root else root.name
        table.append({"run": label, "policy": rows[0]["policy"], "n_seeds": len(rows), **agg})
    with open(root / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "policy", "n_seeds", *[f"{m}_{s}" for m in METRICS for s in ("mean", "std")]])
        for t in table:
            w.writerow([t["run"], t["policy"], t["n_seeds"],
                        *[_fmt(t[m][s]) for m in METRICS for s in ("mean", "std")]])
    return table


def format_report(table: Sequence[dict]) -> str:
    def cell(d, pct=True):
        if d["mean"] is None:
            return "-"
        k = 100.0 if pct else 1.0
        return f"{d['mean'] * k:6.2f} ± {d['std'] * k:5.2f}"

    head = f"{'run':<28} {'ACC iid':>15} {'ACC ood':>15} {'BWT iid':>15} {'BWT ood':>15} {'CV cls':>15}"
    lines = [head, "-" * len(head)]
    for t in table:
        lines.append(f"{t['run']:<28} {cell(t['ACC_iid']):>15} {cell(t['ACC_ood']):>15} "
                     f"{cell(t['BWT_iid']):>15} {cell(t['BWT_ood']):>15} {cell(t['CV_classes'], False):>15}")
    return "\n".join(lines)
