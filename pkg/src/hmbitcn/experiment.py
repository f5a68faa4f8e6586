"""Experiment configuration and the multi-run drivers behind the CLI."""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from .cif import CifConfig
from .data import ConfigError, Dataset, SyntheticSpec, atomic_write, generate_synthetic, load_dataset
from .metrics import METRIC_NAMES
from .model import Direction, HmBiTcnConfig
from .train import MetricsReport, SplitSpec, TrainConfig, format_pm, run_multi_seed, split


@dataclass
class ExperimentConfig:
    """One JSON document describing data, fusion, model, training and split.

    Exactly one of ``dataset`` (a dataset directory) or ``synthetic`` is used;
    ``dataset`` wins when both are set. ``model.input_channels`` and
    ``model.num_classes`` are taken from the data, and ``cif`` replaces
    ``model.cif``.
    """

    dataset: str | None = None
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    cif: CifConfig | None = None
    model: HmBiTcnConfig = field(default_factory=HmBiTcnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    output_dir: str = "runs"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"dataset", "synthetic", "cif", "model", "train", "split", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                dataset=d.get("dataset"),
                synthetic=None if d.get("synthetic", {}) is None else SyntheticSpec(**d.get("synthetic", {})),
                cif=None if d.get("cif") is None else CifConfig.from_dict(d["cif"]),
                model=HmBiTcnConfig.from_dict({**d.get("model", {}), "cif": None}),
                train=TrainConfig(**d.get("train", {})),
                split=SplitSpec(**d.get("split", {})),
                output_dir=d.get("output_dir", "runs"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
            "cif": None if self.cif is None else self.cif.to_dict(),
            "model": {**self.model.to_dict(), "cif": None},
            "train": self.train.to_dict(),
            "split": self.split.to_dict(),
            "output_dir": self.output_dir,
        }

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(raw)

    def save(self, path) -> None:
        atomic_write(Path(path), json.dumps(self.to_dict(), indent=2) + "\n")

    def load_data(self) -> Dataset:
        if self.dataset is not None:
            return load_dataset(self.dataset)
        if self.synthetic is None:
            raise ConfigError("config names neither a dataset nor a synthetic spec")
        return generate_synthetic(self.synthetic)

    def model_config(self, ds: Dataset, cif: CifConfig | None | str = "default", direction=None) -> HmBiTcnConfig:
        d = self.model.to_dict()
        d.update(
            input_channels=ds.channels,
            num_classes=ds.num_classes,
            cif=(self.cif if cif == "default" else cif),
        )
        if direction is not None:
            d["direction_mode"] = Direction(direction)
        return HmBiTcnConfig(**d)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    atomic_write(Path(path), rows_to_csv(rows, columns))


def report_row(report: MetricsReport, **labels) -> dict:
    row = dict(labels)
    for name in METRIC_NAMES:
        row[name] = format_pm(report.mean[name], report.std[name])
    return row


def ablation(cfg: ExperimentConfig, seeds=None):
    """{CIF off, on} x {forward, backward, both} on one fixed split.

    Returns (table rows, per-seed rows, {(cif, direction): MetricsReport}).
    """
    if cfg.cif is None:
        raise ConfigError("ablation needs a cif section to compare against")
    ds = cfg.load_data()
    splits = split(ds, cfg.split)
    table, per_seed, reports = [], [], {}
    for use_cif, direction in itertools.product((False, True), (Direction.FORWARD, Direction.BACKWARD, Direction.BOTH)):
        model_cfg = cfg.model_config(ds, cfg.cif if use_cif else None, direction)
        report, _ = run_multi_seed(model_cfg, splits, cfg.train, seeds)
        label = {"cif": "on" if use_cif else "off", "direction": direction.value}
        reports[(label["cif"], label["direction"])] = report
        table.append(report_row(report, **label))
        for run in report.per_seed:
            per_seed.append({**label, **run})
    return table, per_seed, reports


def cif_grid(cfg: ExperimentConfig, ts, ns, coefficients, seeds=None) -> list[dict]:
    """Manual sweep over fusion hyperparameters; one multi-seed run per cell."""
    ds = cfg.load_data()
    splits = split(ds, cfg.split)
    rows = []
    for t, n, (a, b) in itertools.product(ts, ns, coefficients):
        cif = CifConfig(t=t, n=n, a=a, b=b)
        report, _ = run_multi_seed(cfg.model_config(ds, cif), splits, cfg.train, seeds)
        row = {"t": t, "n": n, "a": a, "b": b}
        for name in METRIC_NAMES:
            row[f"{name}_mean"] = report.mean[name]
            row[f"{name}_std"] = report.std[name]
        rows.append(row)
    return rows
