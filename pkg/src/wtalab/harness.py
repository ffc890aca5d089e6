"""Experiment orchestration: configs, training loop, evaluation, sweeps, charts.

A run is described by one JSON config. Training is deterministic given
(config, seed): data, initialization and batch order all derive from the
seed, and every reduction uses a fixed order. The wall-clock column in the
epoch log is the only non-reproducible output.

Output directory layout for one run:

    config.json          the fully resolved config that was executed
    epochs.csv           one row per epoch
    checkpoint_final.json  parameters after the last epoch
    checkpoint_best.json   parameters at the best validation minFDE epoch
    metrics.csv          validation metrics of the best checkpoint
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import schedulers
from ._svgchart import line_chart
from .datagen import GeneratorConfig, Scene, featurize, generate, load_dataset
from .errors import ConfigurationError, InputError, NonFiniteError
from .losses import LossConfig, batch_objective
from .metrics import MetricsReport, evaluate, write_report_csv
from .network import (
    AdamState,
    ModelConfig,
    ModelParams,
    adam_step,
    backward_batch,
    forward_batch,
    init_adam,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .postselect import NMSConfig, nms_select
from .schedulers import ScheduleState

logger = logging.getLogger(__name__)

OUT_ROOT_ENV = "WTALAB_OUT_ROOT"

TEMPERATURE_KINDS = ("exponential", "linear", "constant")

EPOCH_COLUMNS = (
    "epoch",
    "schedule_value",
    "train_loss",
    "val_min_ade",
    "val_min_fde",
    "val_miss_rate",
    "val_brier_fde",
    "effective_hypotheses",
    "wall_s",
)

SWEEP_COLUMNS = (
    "t0",
    "rho",
    "seed",
    "status",
    "error",
    "min_ade",
    "min_fde",
    "miss_rate",
    "brier_fde",
    "effective_hypotheses",
)


@dataclasses.dataclass
class ModelSettings:
    """Architecture knobs; input width and horizon come from the data."""

    n_heads: int = 6
    hidden: tuple[int, ...] = (64, 64)
    init: str = "glorot"


@dataclasses.dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= beta < 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1), got {beta}")
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")


@dataclasses.dataclass
class DatasetPaths:
    """Pre-generated dataset files, the alternative to an inline generator."""

    train_path: str
    val_path: str


@dataclasses.dataclass
class ExperimentConfig:
    """Everything needed to reproduce one training run."""

    model: ModelSettings = dataclasses.field(default_factory=ModelSettings)
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    scheduler: ScheduleState = dataclasses.field(
        default_factory=lambda: ScheduleState(kind="exponential")
    )
    optimizer: OptimizerConfig = dataclasses.field(default_factory=OptimizerConfig)
    generator: GeneratorConfig | None = None
    dataset: DatasetPaths | None = None
    train_count: int = 1000
    val_count: int = 400
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    out_dir: str = "run"
    eval_top_k: int | None = None
    nms: NMSConfig | None = None

    def validate(self) -> None:
        if (self.generator is None) == (self.dataset is None):
            raise ConfigurationError(
                "exactly one of 'generator' and 'dataset' must be set"
            )
        if self.generator is not None:
            self.generator.validate()
            if self.train_count < 1 or self.val_count < 1:
                raise ConfigurationError("train_count and val_count must be >= 1")
        self.loss.validate(self.model.n_heads)
        self.optimizer.validate()
        if self.model.n_heads < 1:
            raise ConfigurationError("model.n_heads must be >= 1")
        if self.model.init not in ("glorot", "clustered"):
            raise ConfigurationError(f"unknown init mode {self.model.init!r}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")
        if self.nms is not None:
            self.nms.validate()
        if self.eval_top_k is not None and self.eval_top_k < 1:
            raise ConfigurationError("eval_top_k must be >= 1")
        variant = self.loss.variant
        kind = self.scheduler.kind
        if variant == "awta" and kind not in TEMPERATURE_KINDS:
            raise ConfigurationError(
                f"awta needs a temperature schedule, got kind {kind!r}"
            )
        if variant == "ewta" and kind not in ("ewta-topn", "constant"):
            raise ConfigurationError(
                f"ewta needs an ewta-topn or constant schedule, got kind {kind!r}"
            )
        if variant == "dac" and kind not in ("dac-depth", "constant"):
            raise ConfigurationError(
                f"dac needs a dac-depth or constant schedule, got kind {kind!r}"
            )


def resolve_out_dir(out_dir: str) -> Path:
    """Relative output paths land under $WTALAB_OUT_ROOT (default: cwd)."""
    path = Path(out_dir)
    if not path.is_absolute():
        root = os.environ.get(OUT_ROOT_ENV)
        if root:
            path = Path(root) / path
    return path


# ---------------------------------------------------------------------------
# Config JSON round trip.
# ---------------------------------------------------------------------------


def config_to_dict(config: ExperimentConfig) -> dict:
    out = {
        "model": {
            "n_heads": config.model.n_heads,
            "hidden": list(config.model.hidden),
            "init": config.model.init,
        },
        "loss": dataclasses.asdict(config.loss),
        "scheduler": {
            "kind": config.scheduler.kind,
            "t0": config.scheduler.t0,
            "rho": config.scheduler.rho,
            "t_floor": config.scheduler.t_floor,
            "total_steps": config.scheduler.total_steps,
        },
        "optimizer": dataclasses.asdict(config.optimizer),
        "train_count": config.train_count,
        "val_count": config.val_count,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "out_dir": config.out_dir,
        "eval_top_k": config.eval_top_k,
        "nms": dataclasses.asdict(config.nms) if config.nms else None,
    }
    if config.generator is not None:
        gen = dataclasses.asdict(config.generator)
        gen["probabilities"] = list(config.generator.probabilities)
        gen["turns"] = list(config.generator.turns)
        out["generator"] = gen
    if config.dataset is not None:
        out["dataset"] = dataclasses.asdict(config.dataset)
    return out


def _take(block: dict, allowed: set[str], where: str) -> dict:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")
    return block


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    top_allowed = {
        "model", "loss", "scheduler", "optimizer", "generator", "dataset",
        "train_count", "val_count", "epochs", "batch_size", "seed", "out_dir",
        "eval_top_k", "nms",
    }
    _take(data, top_allowed, "config")
    epochs = int(data.get("epochs", 50))
    seed = int(data.get("seed", 0))

    model_block = _take(dict(data.get("model", {})), {"n_heads", "hidden", "init"}, "model")
    model = ModelSettings(
        n_heads=int(model_block.get("n_heads", 6)),
        hidden=tuple(int(h) for h in model_block.get("hidden", (64, 64))),
        init=str(model_block.get("init", "glorot")),
    )

    loss_block = _take(
        dict(data.get("loss", {})),
        {"variant", "temperature", "epsilon", "top_n", "depth", "score_coef"},
        "loss",
    )
    loss = LossConfig(**loss_block)

    sched_block = _take(
        dict(data.get("scheduler", {})),
        {"kind", "t0", "rho", "t_floor", "total_steps"},
        "scheduler",
    )
    sched_block.setdefault("kind", "exponential")
    # An unspecified ladder length means "the whole run".
    sched_block.setdefault("total_steps", max(epochs, 1))
    scheduler = ScheduleState(step=0, **sched_block)

    optim_block = _take(
        dict(data.get("optimizer", {})), {"lr", "beta1", "beta2", "eps"}, "optimizer"
    )
    optimizer = OptimizerConfig(**optim_block)

    generator = None
    if data.get("generator") is not None:
        gen_block = _take(
            dict(data["generator"]),
            {
                "n_branches", "probabilities", "turns", "speed", "noise_std",
                "past_len", "future_len", "seed",
            },
            "generator",
        )
        gen_block.setdefault("seed", seed)
        if "probabilities" in gen_block:
            gen_block["probabilities"] = tuple(gen_block["probabilities"])
        if "turns" in gen_block:
            gen_block["turns"] = tuple(gen_block["turns"])
        generator = GeneratorConfig(**gen_block)

    dataset = None
    if data.get("dataset") is not None:
        ds_block = _take(dict(data["dataset"]), {"train_path", "val_path"}, "dataset")
        dataset = DatasetPaths(**ds_block)

    nms = None
    if data.get("nms") is not None:
        nms_block = _take(dict(data["nms"]), {"k_out", "radius", "order"}, "nms")
        nms = NMSConfig(**nms_block)

    config = ExperimentConfig(
        model=model,
        loss=loss,
        scheduler=scheduler,
        optimizer=optimizer,
        generator=generator,
        dataset=dataset,
        train_count=int(data.get("train_count", 1000)),
        val_count=int(data.get("val_count", 400)),
        epochs=epochs,
        batch_size=int(data.get("batch_size", 64)),
        seed=seed,
        out_dir=str(data.get("out_dir", "run")),
        eval_top_k=data.get("eval_top_k"),
        nms=nms,
    )
    config.validate()
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return config_from_dict(data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Epoch records.
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class EpochRecord:
    """One training epoch as logged to epochs.csv."""

    epoch: int
    schedule_value: float | None
    train_loss: float
    val_min_ade: float
    val_min_fde: float
    val_miss_rate: float
    val_brier_fde: float
    effective_hypotheses: int
    wall_s: float


def write_epoch_csv(records: list[EpochRecord], path: str | Path) -> None:
    lines = [",".join(EPOCH_COLUMNS)]
    for r in records:
        lines.append(
            ",".join(
                [
                    str(r.epoch),
                    "" if r.schedule_value is None else repr(r.schedule_value),
                    repr(r.train_loss),
                    repr(r.val_min_ade),
                    repr(r.val_min_fde),
                    repr(r.val_miss_rate),
                    repr(r.val_brier_fde),
                    str(r.effective_hypotheses),
                    f"{r.wall_s:.4f}",
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_epoch_csv(path: str | Path) -> list[EpochRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != ",".join(EPOCH_COLUMNS):
        raise InputError(f"{path} is not an epoch log CSV")
    records = []
    for line in lines[1:]:
        v = line.split(",")
        records.append(
            EpochRecord(
                epoch=int(v[0]),
                schedule_value=None if v[1] == "" else float(v[1]),
                train_loss=float(v[2]),
                val_min_ade=float(v[3]),
                val_min_fde=float(v[4]),
                val_miss_rate=float(v[5]),
                val_brier_fde=float(v[6]),
                effective_hypotheses=int(v[7]),
                wall_s=float(v[8]),
            )
        )
    return records


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------


def _schedule_control(
    config: ExperimentConfig, epoch: int
) -> tuple[float | None, LossConfig]:
    """Resolve the per-epoch loss settings from the schedule."""
    state = config.scheduler.at(epoch)
    loss = config.loss
    if loss.variant == "awta":
        value = schedulers.temperature(state)
        return value, dataclasses.replace(loss, temperature=value)
    if loss.variant == "ewta":
        if state.kind == "constant":
            return float(loss.top_n), loss
        n = schedulers.ewta_topn(state, config.model.n_heads)
        return float(n), dataclasses.replace(loss, top_n=n)
    if loss.variant == "dac":
        if state.kind == "constant":
            return float(loss.depth), loss
        depth = schedulers.dac_depth(state, config.model.n_heads)
        return float(depth), dataclasses.replace(loss, depth=depth)
    return None, loss


def _load_scenes(config: ExperimentConfig) -> tuple[list[Scene], list[Scene]]:
    if config.generator is not None:
        train = generate(config.generator, config.train_count, start_index=0)
        val = generate(config.generator, config.val_count, start_index=config.train_count)
        return train, val
    assert config.dataset is not None
    return load_dataset(config.dataset.train_path), load_dataset(config.dataset.val_path)


def _featurize_split(scenes: list[Scene]) -> tuple[np.ndarray, np.ndarray]:
    feats = [featurize(s) for s in scenes]
    widths = {f.features.size for f in feats}
    horizons = {f.target.shape[0] for f in feats}
    if len(widths) != 1 or len(horizons) != 1:
        raise ConfigurationError(
            "scenes must share one past length and one future length"
        )
    return np.stack([f.features for f in feats]), np.stack([f.target for f in feats])


@dataclasses.dataclass
class TrainResult:
    params: ModelParams
    records: list[EpochRecord]
    best_params: ModelParams
    best_epoch: int
    report: MetricsReport
    out_dir: Path


def train(config: ExperimentConfig, write_outputs: bool = True) -> TrainResult:
    """Train one model per the config.

    Returns the final parameters, the per-epoch records, and the best
    checkpoint by validation minFDE. With write_outputs (the default) the
    run directory described in the module docstring is produced.

    Raises NonFiniteError naming the epoch and batch if the loss or a
    gradient stops being finite.
    """
    config.validate()
    train_scenes, val_scenes = _load_scenes(config)
    features, targets = _featurize_split(train_scenes)
    n_scenes, input_dim = features.shape
    horizon = targets.shape[1]

    model_config = ModelConfig(
        input_dim=input_dim,
        n_heads=config.model.n_heads,
        horizon=horizon,
        hidden=tuple(config.model.hidden),
        init=config.model.init,
    )
    # Independent streams so the init does not shift with the batch order.
    params = init_params(model_config, np.random.default_rng([config.seed, 1]))
    shuffle_rng = np.random.default_rng([config.seed, 2])
    adam: AdamState = init_adam(params)

    out_dir = resolve_out_dir(config.out_dir)
    if write_outputs:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(config, out_dir / "config.json")

    records: list[EpochRecord] = []
    best_epoch = -1
    best_fde = math.inf
    best_params = params.copy()
    clamped_total = 0

    for epoch in range(config.epochs):
        started = time.perf_counter()
        schedule_value, epoch_loss = _schedule_control(config, epoch)
        order = shuffle_rng.permutation(n_scenes)
        loss_sum = 0.0
        for batch_index, start in enumerate(range(0, n_scenes, config.batch_size)):
            rows = order[start : start + config.batch_size]
            preds, logits, activations = forward_batch(params, features[rows])
            objective = batch_objective(preds, logits, targets[rows], epoch_loss)
            if not np.all(np.isfinite(objective.loss)):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch} batch {batch_index}"
                )
            clamped_total += objective.score_clamped
            grads = backward_batch(
                params, activations, objective.d_trajectories, objective.d_score_logits
            )
            try:
                params, adam = adam_step(
                    params,
                    grads,
                    adam,
                    lr=config.optimizer.lr,
                    beta1=config.optimizer.beta1,
                    beta2=config.optimizer.beta2,
                    eps=config.optimizer.eps,
                )
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"epoch {epoch} batch {batch_index}: {exc}"
                ) from exc
            loss_sum += float(np.sum(objective.loss))
        report = evaluate(params, val_scenes)
        records.append(
            EpochRecord(
                epoch=epoch,
                schedule_value=schedule_value,
                train_loss=loss_sum / n_scenes,
                val_min_ade=report.min_ade,
                val_min_fde=report.min_fde,
                val_miss_rate=report.miss_rate,
                val_brier_fde=report.brier_fde,
                effective_hypotheses=report.effective_hypotheses,
                wall_s=time.perf_counter() - started,
            )
        )
        if report.min_fde < best_fde:
            best_fde = report.min_fde
            best_epoch = epoch
            best_params = params.copy()

    if clamped_total:
        logger.warning(
            "winner score clamped to the probability floor %d times", clamped_total
        )

    select = None
    if config.nms is not None:
        select = lambda hyps: nms_select(hyps, config.nms)
    best_report = evaluate(
        best_params, val_scenes, top_k=config.eval_top_k, select=select
    )

    result = TrainResult(
        params=params,
        records=records,
        best_params=best_params,
        best_epoch=best_epoch,
        report=best_report,
        out_dir=out_dir,
    )
    if write_outputs:
        write_epoch_csv(records, out_dir / "epochs.csv")
        save_checkpoint(params, out_dir / "checkpoint_final.json")
        save_checkpoint(best_params, out_dir / "checkpoint_best.json")
        write_report_csv(best_report, out_dir / "metrics.csv")
    return result


def evaluate_cmd(
    config: ExperimentConfig,
    checkpoint_path: str | Path,
    out_path: str | Path | None = None,
) -> MetricsReport:
    """Evaluate a saved checkpoint on the config's validation split."""
    config.validate()
    params = load_checkpoint(checkpoint_path)
    _, val_scenes = _load_scenes(config)
    select = None
    if config.nms is not None:
        select = lambda hyps: nms_select(hyps, config.nms)
    report = evaluate(params, val_scenes, top_k=config.eval_top_k, select=select)
    if out_path is not None:
        write_report_csv(report, out_path)
    return report


# ---------------------------------------------------------------------------
# Sweeps.
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class SweepCell:
    t0: float
    rho: float
    seed: int
    status: str
    error: str = ""
    report: MetricsReport | None = None


def _run_cell(config: ExperimentConfig, write_outputs: bool) -> SweepCell:
    cell = SweepCell(
        t0=config.scheduler.t0,
        rho=config.scheduler.rho,
        seed=config.seed,
        status="ok",
    )
    try:
        result = train(config, write_outputs=write_outputs)
        cell.report = result.report
    except Exception as exc:  # a failed cell must not sink the sweep
        cell.status = "failed"
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def sweep(
    base: ExperimentConfig,
    t0_values: list[float],
    rho_values: list[float],
    seeds: list[int],
    out_dir: str | Path | None = None,
    workers: int = 1,
    write_cell_outputs: bool = False,
) -> list[SweepCell]:
    """Train one run per (t0, rho, seed) grid cell.

    Cells are independent; failures are recorded per cell and do not stop
    the sweep. Results come back in grid order (t0 outermost, seed
    innermost) regardless of completion order. When out_dir is given, the
    aggregate table is written there as sweep.csv.
    """
    if not t0_values or not rho_values or not seeds:
        raise InputError("sweep needs at least one t0, rho and seed")
    configs = []
    for t0 in t0_values:
        for rho in rho_values:
            for seed in seeds:
                scheduler = dataclasses.replace(base.scheduler, t0=t0, rho=rho)
                cell_dir = str(
                    Path(base.out_dir) / f"cell-t0_{t0:g}-rho_{rho:g}-seed_{seed}"
                )
                configs.append(
                    dataclasses.replace(
                        base, scheduler=scheduler, seed=seed, out_dir=cell_dir
                    )
                )
    if workers <= 1:
        cells = [_run_cell(c, write_cell_outputs) for c in configs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(
                pool.map(lambda c: _run_cell(c, write_cell_outputs), configs)
            )
    if out_dir is not None:
        out = resolve_out_dir(str(out_dir))
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(cells, out / "sweep.csv")
    return cells


def write_sweep_csv(cells: list[SweepCell], path: str | Path) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for cell in cells:
        if cell.report is not None:
            metric_values = [
                repr(cell.report.min_ade),
                repr(cell.report.min_fde),
                repr(cell.report.miss_rate),
                repr(cell.report.brier_fde),
                str(cell.report.effective_hypotheses),
            ]
        else:
            metric_values = ["", "", "", "", ""]
        writer.writerow(
            [repr(cell.t0), repr(cell.rho), str(cell.seed), cell.status, cell.error]
            + metric_values
        )
    Path(path).write_text(buffer.getvalue())


# ---------------------------------------------------------------------------
# Charts.
# ---------------------------------------------------------------------------


def emit_charts(
    data: list[EpochRecord] | list[SweepCell], out_dir: str | Path
) -> list[Path]:
    """Write deterministic SVG line charts plus the underlying CSV.

    Epoch records produce loss, schedule value and effective-hypotheses
    curves against the epoch index. Sweep cells produce final minADE
    against t0 with one line per rho.
    """
    out = resolve_out_dir(str(out_dir))
    out.mkdir(parents=True, exist_ok=True)
    if not data:
        raise InputError("no records to chart")
    written: list[Path] = []
    if isinstance(data[0], EpochRecord):
        records: list[EpochRecord] = data  # type: ignore[assignment]
        epochs = [float(r.epoch) for r in records]
        charts = [
            (
                "loss_vs_epoch.svg",
                "Training loss",
                "loss",
                [("train_loss", epochs, [r.train_loss for r in records])],
            ),
            (
                "effective_hypotheses_vs_epoch.svg",
                "Effective hypotheses",
                "heads in use",
                [
                    (
                        "effective_hypotheses",
                        epochs,
                        [float(r.effective_hypotheses) for r in records],
                    )
                ],
            ),
        ]
        scheduled = [r for r in records if r.schedule_value is not None]
        if scheduled:
            charts.append(
                (
                    "schedule_vs_epoch.svg",
                    "Schedule control value",
                    "value",
                    [
                        (
                            "schedule_value",
                            [float(r.epoch) for r in scheduled],
                            [float(r.schedule_value) for r in scheduled],
                        )
                    ],
                )
            )
        for filename, title, y_label, series in charts:
            target = out / filename
            target.write_text(line_chart(series, title, "epoch", y_label))
            written.append(target)
        csv_path = out / "charts_data.csv"
        write_epoch_csv(records, csv_path)
        written.append(csv_path)
        return written

    cells: list[SweepCell] = [c for c in data if isinstance(c, SweepCell)]
    if len(cells) != len(data):
        raise InputError("chart input must be all EpochRecord or all SweepCell")
    rhos = sorted({c.rho for c in cells})
    series = []
    for rho in rhos:
        points = sorted(
            (c.t0, c.report.min_ade)
            for c in cells
            if c.rho == rho and c.report is not None
        )
        if points:
            series.append(
                (f"rho={rho:g}", [p[0] for p in points], [p[1] for p in points])
            )
    if not series:
        raise InputError("no successful sweep cells to chart")
    target = out / "sweep_min_ade_vs_t0.svg"
    target.write_text(line_chart(series, "Sweep: min ADE vs t0", "t0", "min_ade"))
    written.append(target)
    csv_path = out / "sweep_data.csv"
    write_sweep_csv(cells, csv_path)
    written.append(csv_path)
    return written
