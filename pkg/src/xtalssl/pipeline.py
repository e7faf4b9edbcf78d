"""Training orchestration: Adam, pre-training, fine-tuning, ablation harness.

Determinism contract: every run is a pure function of (configs, master seed,
input files).  The master seed fans out into independent per-purpose streams
(split / init / shuffle / augment / validation views) via SeedSequence spawn
keys, so e.g. changing the number of epochs never perturbs the weight init.
Wall-clock time is measured and logged but deliberately kept out of the
canonical report JSON so reports stay byte-identical across reruns.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, make_views
from .autodiff import Tape, Tensor
from .featurize import CrystalGraph, GaussianBasis, build_graph, merge_graphs
from .geometry import NeighborConfig, build_neighbor_list
from .loss import BatchTooSmall, LossConfig, bt_loss_from_embeddings, mae_metric, mse_loss
from .model import (
    ModelConfig,
    ModelParams,
    check_encoder_compatible,
    encode,
    init_params,
    load_checkpoint,
    load_encoder_weights,
    project,
    regress,
    save_checkpoint,
)
from .structure_io import Dataset, EmptyDataset, SplitSpec, split_dataset

logger = logging.getLogger("xtalssl")


class MissingGradient(ValueError):
    pass


class UnlabeledDataset(ValueError):
    pass


# seed fan-out: the root SeedSequence(seed) drives dataset splitting (see
# structure_io.split_dataset); spawned children drive everything else
_INIT, _SHUFFLE, _AUGMENT, _VAL_VIEWS = 1, 2, 3, 4


def rng_for(seed: int, purpose_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(purpose_id,)))


class Adam:
    """Standard Adam with bias-corrected moments."""

    def __init__(self, tensors: list[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = list(tensors)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for i, t in enumerate(self.tensors):
            if t.grad is None:
                raise MissingGradient(f"parameter {i} has no gradient")
            g = t.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class PretrainConfig:
    lr: float = 1e-5
    batch: int = 64
    epochs: int = 15
    val_fraction: float = 0.05
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    neighbor: NeighborConfig = field(default_factory=NeighborConfig)
    basis: GaussianBasis = field(default_factory=GaussianBasis)
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def __post_init__(self):
        if self.batch < 2:
            raise ValueError("pretrain batch must be >= 2 (loss needs batch statistics)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class FinetuneConfig:
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 200
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    init_checkpoint: str | None = None
    neighbor: NeighborConfig = field(default_factory=NeighborConfig)
    basis: GaussianBasis = field(default_factory=GaussianBasis)
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("finetune batch must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass
class RunReport:
    kind: str
    config: dict
    epochs: list[dict]
    best_epoch: int
    n_train: int
    n_val: int
    n_test: int | None = None
    test_mae: float | None = None
    wall_clock_seconds: float | None = None

    def to_json(self) -> str:
        """Canonical JSON; wall clock is logged, not serialized, so reruns match byte for byte."""
        payload = {
            "kind": self.kind,
            "config": self.config,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "n_train": self.n_train,
            "n_val": self.n_val,
        }
        if self.n_test is not None:
            payload["n_test"] = self.n_test
        if self.test_mae is not None:
            payload["test_mae"] = self.test_mae
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _config_echo(mcfg: ModelConfig, tcfg) -> dict:
    echo = {"model": dataclasses.asdict(mcfg)}
    echo.update(dataclasses.asdict(tcfg))
    return json.loads(json.dumps(echo))  # tuples -> lists, everything jsonable


def _snapshot(params: ModelParams) -> list[np.ndarray]:
    return [t.data.copy() for t in params.trainable()]


def _restore(params: ModelParams, snapshot: list[np.ndarray]) -> None:
    for t, data in zip(params.trainable(), snapshot):
        t.data = data.copy()


def _batches(order: np.ndarray, batch: int, drop_below: int) -> list[np.ndarray]:
    out = [order[i:i + batch] for i in range(0, len(order), batch)]
    return [b for b in out if len(b) >= drop_below]


def _merged_views(structures, pcfg: PretrainConfig, rng) -> tuple:
    views_a, views_b = [], []
    for s in structures:
        ga, gb = make_views(s, pcfg.augment, pcfg.neighbor, pcfg.basis, rng)
        views_a.append(ga)
        views_b.append(gb)
    merged_a, seg_a = merge_graphs(views_a)
    merged_b, seg_b = merge_graphs(views_b)
    return merged_a, seg_a, merged_b, seg_b, len(structures)


def _bt_batch_loss(params, pcfg, merged_a, seg_a, merged_b, seg_b, n):
    za = project(params, encode(params, merged_a, seg_a, n))
    zb = project(params, encode(params, merged_b, seg_b, n))
    return bt_loss_from_embeddings(za, zb, pcfg.loss)


@dataclass
class PretrainResult:
    params: ModelParams
    report: RunReport
    final_path: str | None
    best_path: str | None


def pretrain(data: Dataset, mcfg: ModelConfig, pcfg: PretrainConfig,
             out_dir=None) -> PretrainResult:
    """Self-supervised pre-training; writes final and best-validation checkpoints."""
    t_start = time.perf_counter()
    n = len(data.entries)
    if n == 0:
        raise EmptyDataset("pretrain needs a nonempty dataset")

    perm = rng_for(pcfg.seed, 0).permutation(n)  # purpose 0: split
    n_val = int(np.floor(pcfg.val_fraction * n))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    structures = [e.structure for e in data.entries]

    params = init_params(mcfg, rng_for(pcfg.seed, _INIT), with_projector=True, with_head=False)
    adam = Adam(params.trainable(), pcfg.lr)
    shuffle_rng = rng_for(pcfg.seed, _SHUFFLE)
    augment_rng = rng_for(pcfg.seed, _AUGMENT)

    epochs_log: list[dict] = []
    best_epoch = pcfg.epochs
    best_val = np.inf
    best_state: list[np.ndarray] | None = None

    for epoch in range(1, pcfg.epochs + 1):
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        batch_losses = []
        for batch_idx in _batches(order, pcfg.batch, drop_below=2):
            params.zero_grad()
            with Tape() as tape:
                loss = _bt_batch_loss(params, pcfg,
                                      *_merged_views([structures[i] for i in batch_idx],
                                                     pcfg, augment_rng))
                tape.backward(loss)
            adam.step()
            batch_losses.append(float(loss.data))
        if not batch_losses:
            raise BatchTooSmall("training split yields no batch of size >= 2")
        train_loss = float(np.mean(batch_losses))

        val_loss = None
        if n_val >= 2:
            # fresh stream each epoch -> identical validation views every epoch
            val_rng = rng_for(pcfg.seed, _VAL_VIEWS)
            val_losses = []
            for batch_idx in _batches(val_idx, pcfg.batch, drop_below=2):
                loss = _bt_batch_loss(params, pcfg,
                                      *_merged_views([structures[i] for i in batch_idx],
                                                     pcfg, val_rng))
                val_losses.append(float(loss.data))
            if val_losses:
                val_loss = float(np.mean(val_losses))
        if val_loss is not None and val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = _snapshot(params)
        epochs_log.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.info("pretrain epoch %d/%d train_loss=%.6f val_loss=%s",
                    epoch, pcfg.epochs, train_loss,
                    "n/a" if val_loss is None else f"{val_loss:.6f}")

    if best_state is None:
        best_epoch = pcfg.epochs
        best_state = _snapshot(params)

    final_path = best_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        final_path = os.path.join(out_dir, "pretrain_final.ckpt")
        best_path = os.path.join(out_dir, "pretrain_best.ckpt")
        save_checkpoint(final_path, params)
        final_state = _snapshot(params)
        _restore(params, best_state)
        save_checkpoint(best_path, params)
        _restore(params, final_state)

    wall = time.perf_counter() - t_start
    logger.info("pretrain wall clock: %.2fs", wall)
    report = RunReport(kind="pretrain", config=_config_echo(mcfg, pcfg), epochs=epochs_log,
                       best_epoch=best_epoch, n_train=len(train_idx), n_val=n_val,
                       wall_clock_seconds=wall)
    return PretrainResult(params=params, report=report, final_path=final_path, best_path=best_path)


@dataclass
class FinetuneResult:
    params: ModelParams
    report: RunReport
    label_mean: float
    label_std: float
    checkpoint_path: str | None


def _graphs_for(entries, neighbor: NeighborConfig, basis: GaussianBasis) -> list[CrystalGraph]:
    return [build_graph(e.structure, build_neighbor_list(e.structure, neighbor), basis)
            for e in entries]


def _predict_std(params: ModelParams, graphs: list[CrystalGraph], batch: int) -> np.ndarray:
    """Inference-mode standardized predictions, one scalar per graph."""
    preds = []
    for lo in range(0, len(graphs), batch):
        merged, seg = merge_graphs(graphs[lo:lo + batch])
        out = regress(params, encode(params, merged, seg, len(graphs[lo:lo + batch])))
        preds.append(out.data[:, 0])
    return np.concatenate(preds) if preds else np.zeros(0)


def finetune(data: Dataset, mcfg: ModelConfig, fcfg: FinetuneConfig,
             out_dir=None) -> FinetuneResult:
    """Supervised fine-tuning; reports test MAE of the best-validation epoch."""
    t_start = time.perf_counter()
    if data.kind != "labeled":
        raise UnlabeledDataset("finetune needs a labeled dataset")

    train_d, val_d, test_d = split_dataset(data, SplitSpec(fractions=fcfg.split, seed=fcfg.seed))
    if not train_d.entries:
        raise EmptyDataset("finetune training split is empty")

    graphs_train = _graphs_for(train_d.entries, fcfg.neighbor, fcfg.basis)
    graphs_val = _graphs_for(val_d.entries, fcfg.neighbor, fcfg.basis)
    graphs_test = _graphs_for(test_d.entries, fcfg.neighbor, fcfg.basis)
    y_train = np.array([e.label for e in train_d.entries], dtype=np.float64)
    y_val = np.array([e.label for e in val_d.entries], dtype=np.float64)
    y_test = np.array([e.label for e in test_d.entries], dtype=np.float64)

    label_mean = float(y_train.mean())
    label_std = float(y_train.std())
    if label_std < 1e-12:
        label_std = 1.0  # constant labels: leave the scale alone
    y_train_std = (y_train - label_mean) / label_std
    y_val_std = (y_val - label_mean) / label_std

    params = init_params(mcfg, rng_for(fcfg.seed, _INIT), with_projector=False, with_head=True)
    if fcfg.init_checkpoint is not None:
        ck_cfg, arrays = load_checkpoint(fcfg.init_checkpoint)
        check_encoder_compatible(mcfg, ck_cfg)
        load_encoder_weights(params, arrays)

    adam = Adam(params.trainable(), fcfg.lr)
    shuffle_rng = rng_for(fcfg.seed, _SHUFFLE)

    epochs_log: list[dict] = []
    best_epoch = fcfg.epochs
    best_val = np.inf
    best_state: list[np.ndarray] | None = None

    for epoch in range(1, fcfg.epochs + 1):
        order = shuffle_rng.permutation(len(graphs_train))
        batch_losses = []
        for batch_idx in _batches(order, fcfg.batch, drop_below=1):
            params.zero_grad()
            merged, seg = merge_graphs([graphs_train[i] for i in batch_idx])
            with Tape() as tape:
                pred = regress(params, encode(params, merged, seg, len(batch_idx)))
                loss = mse_loss(pred, y_train_std[batch_idx])
                tape.backward(loss)
            adam.step()
            batch_losses.append(float(loss.data))
        train_loss = float(np.mean(batch_losses))

        val_loss = None
        if len(graphs_val) > 0:
            val_pred = _predict_std(params, graphs_val, fcfg.batch)
            val_loss = float(np.mean((val_pred - y_val_std) ** 2))
        if val_loss is not None and val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = _snapshot(params)
        epochs_log.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.info("finetune epoch %d/%d train_mse=%.6f val_mse=%s",
                    epoch, fcfg.epochs, train_loss,
                    "n/a" if val_loss is None else f"{val_loss:.6f}")

    if best_state is not None:
        _restore(params, best_state)
    else:
        best_epoch = fcfg.epochs

    test_mae = None
    if len(graphs_test) > 0:
        test_pred = _predict_std(params, graphs_test, fcfg.batch) * label_std + label_mean
        test_mae = mae_metric(test_pred, y_test)
        logger.info("finetune test MAE (original units): %.6f", test_mae)

    ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "finetune_model.ckpt")
        save_checkpoint(ckpt_path, params,
                        extra={"label_mean": np.float64(label_mean),
                               "label_std": np.float64(label_std)})

    wall = time.perf_counter() - t_start
    logger.info("finetune wall clock: %.2fs", wall)
    report = RunReport(kind="finetune", config=_config_echo(mcfg, fcfg), epochs=epochs_log,
                       best_epoch=best_epoch, n_train=len(train_d.entries),
                       n_val=len(val_d.entries), n_test=len(test_d.entries),
                       test_mae=test_mae, wall_clock_seconds=wall)
    return FinetuneResult(params=params, report=report, label_mean=label_mean,
                          label_std=label_std, checkpoint_path=ckpt_path)


def evaluate(params: ModelParams, data: Dataset, label_mean: float, label_std: float,
             batch: int = 128, neighbor: NeighborConfig = NeighborConfig(),
             basis: GaussianBasis = GaussianBasis()) -> dict:
    """MAE of a fine-tuned model over every entry of a labeled dataset."""
    if data.kind != "labeled":
        raise UnlabeledDataset("evaluate needs a labeled dataset")
    graphs = _graphs_for(data.entries, neighbor, basis)
    labels = np.array([e.label for e in data.entries], dtype=np.float64)
    pred = _predict_std(params, graphs, batch) * label_std + label_mean
    return {"n_entries": len(data.entries), "mae": mae_metric(pred, labels)}


def export_embeddings(params: ModelParams, data: Dataset,
                      neighbor: NeighborConfig = NeighborConfig(),
                      basis: GaussianBasis = GaussianBasis()) -> str:
    """CSV of per-entry latents: id, z0..z{H-1}[, label]; rows sorted by id."""
    hidden = params.config.hidden_dim
    header = ["id"] + [f"z{i}" for i in range(hidden)] + (
        ["label"] if data.kind == "labeled" else [])
    lines = [",".join(header)]
    for entry in sorted(data.entries, key=lambda e: e.id):
        g = build_graph(entry.structure, build_neighbor_list(entry.structure, neighbor), basis)
        z = encode(params, g).data[0]
        row = [entry.id] + [repr(float(v)) for v in z]
        if data.kind == "labeled":
            row.append(repr(float(entry.label)))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

ABLATION_ARMS: dict[str, AugmentConfig] = {
    "RP": AugmentConfig(enable_perturb=True, enable_atom_mask=False, enable_edge_mask=False),
    "AM+EM": AugmentConfig(enable_perturb=False, enable_atom_mask=True, enable_edge_mask=True),
    "RP+AM+EM": AugmentConfig(enable_perturb=True, enable_atom_mask=True, enable_edge_mask=True),
}


@dataclass
class AblationRow:
    arm: str
    seeds: list[int]
    maes: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.maes))

    @property
    def std(self) -> float:
        return float(np.std(self.maes))  # population std over seeds


def ablation_run(pretrain_data: Dataset, finetune_data: Dataset, mcfg: ModelConfig,
                 pcfg: PretrainConfig, fcfg: FinetuneConfig, seeds: list[int],
                 out_dir=None, arms: dict[str, AugmentConfig] | None = None) -> list[AblationRow]:
    """One pretrain+finetune per (arm, seed); aggregates test MAE per arm."""
    if not seeds:
        raise ValueError("ablation needs at least one seed")
    arms = ABLATION_ARMS if arms is None else arms
    rows = []
    for arm_name, augment in arms.items():
        maes = []
        for seed in seeds:
            logger.info("ablation arm=%s seed=%d", arm_name, seed)
            arm_pcfg = dataclasses.replace(pcfg, augment=augment, seed=seed)
            result = pretrain(pretrain_data, mcfg, arm_pcfg, out_dir=None)
            with tempfile.TemporaryDirectory() as tmp:
                ckpt = os.path.join(tmp, "pretrain.ckpt")
                save_checkpoint(ckpt, result.params)
                arm_fcfg = dataclasses.replace(fcfg, seed=seed, init_checkpoint=ckpt)
                ft = finetune(finetune_data, mcfg, arm_fcfg, out_dir=None)
            if ft.report.test_mae is None:
                raise ValueError("ablation requires a nonempty test split")
            maes.append(ft.report.test_mae)
        rows.append(AblationRow(arm=arm_name, seeds=list(seeds), maes=maes))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
            fh.write(ablation_csv(rows))
        with open(os.path.join(out_dir, "ablation_runs.csv"), "w", encoding="utf-8") as fh:
            fh.write(ablation_runs_csv(rows))
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    lines = ["arm,n_seeds,mean_test_mae,std_test_mae"]
    for r in rows:
        lines.append(f"{r.arm},{len(r.seeds)},{r.mean!r},{r.std!r}")
    return "\n".join(lines) + "\n"


def ablation_runs_csv(rows: list[AblationRow]) -> str:
    lines = ["arm,seed,test_mae"]
    for r in rows:
        for seed, mae in zip(r.seeds, r.maes):
            lines.append(f"{r.arm},{seed},{mae!r}")
    return "\n".join(lines) + "\n"
