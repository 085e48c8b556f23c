"""Optimisation, training loop, cross-validation and scarcity sweeps."""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .datasets import Bag, BagDatasetSpec, build_bags, gen_toy
from .metrics import MetricsReport, classification_metrics
from .milcore import MILModel, ModelConfig, compute_losses
from .toporeg import input_topology

__all__ = [
    "AdamState",
    "Adam",
    "adam_step",
    "TrainConfig",
    "EpochRecord",
    "TrainHistory",
    "gamma_schedule",
    "train",
    "evaluate",
    "k_fold",
    "cross_validate",
    "PoolSource",
    "ToySource",
    "SweepResult",
    "scarcity_sweep",
    "HISTORY_HEADER",
    "SWEEP_HEADER",
]

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "loss_class", "loss_topo_fwd", "loss_topo_rev", "val_accuracy", "val_f1")
SWEEP_HEADER = ("bag_count", "size_mean", "size_std", "model", "run", "f1", "accuracy")


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.lr,
            *self.betas,
            eps=self.eps,
        )


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    model: ModelConfig
    lam: float = 0.0
    lr: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 100
    patience: int | None = None
    seed: int = 0
    gamma_start: float = 0.5

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be at least 1")
        self.betas = tuple(float(b) for b in self.betas)


@dataclass
class EpochRecord:
    epoch: int
    loss_class: float
    loss_topo_fwd: float
    loss_topo_rev: float
    val_accuracy: float | None = None
    val_f1: float | None = None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def best_val_accuracy(self) -> float | None:
        vals = [r.val_accuracy for r in self.records if r.val_accuracy is not None]
        return max(vals) if vals else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in self.records:
            w.writerow(
                [
                    r.epoch,
                    repr(r.loss_class),
                    repr(r.loss_topo_fwd),
                    repr(r.loss_topo_rev),
                    "" if r.val_accuracy is None else repr(r.val_accuracy),
                    "" if r.val_f1 is None else repr(r.val_f1),
                ]
            )
        return buf.getvalue()


def gamma_schedule(epoch: int, epochs: int, start: float = 0.5) -> float:
    """Instance-loss weight: linear from ``start`` at epoch 0 to 0 at the last epoch."""
    if epochs <= 1:
        return start
    return start * (1.0 - epoch / (epochs - 1))


def evaluate(model: MILModel, bags: Sequence[Bag]) -> MetricsReport:
    bags = list(bags)
    if bags and bags[0].instances.shape[1] != model.config.encoder.input_dim:
        raise ValueError(
            f"model expects {model.config.encoder.input_dim} features, data has {bags[0].instances.shape[1]}"
        )
    proba = model.predict_proba(bags)
    return classification_metrics([b.label for b in bags], proba, model.config.n_classes)


def train(
    bags: Sequence[Bag],
    config: TrainConfig,
    val_bags: Sequence[Bag] | None = None,
) -> tuple[MILModel, TrainHistory]:
    """Train one model, one bag per step.

    With ``val_bags`` the returned model is the snapshot of the epoch with the
    best validation accuracy (earliest on ties); otherwise the final model.
    """
    bags = list(bags)
    if not bags:
        raise ValueError("no training bags")
    mcfg = config.model
    negatives = [b for b in bags if b.label == 0]
    if mcfg.aggregator == "anomaly" and not negatives:
        raise ValueError("anomaly pooling needs at least one negative training bag")
    neg_instances = np.concatenate([b.instances for b in negatives]) if negatives else None

    model = MILModel(mcfg, seed=config.seed)
    opt = Adam(model.parameters(), config.lr, config.betas)
    rng = np.random.default_rng(config.seed)
    topology = [input_topology(b.instances) for b in bags] if config.lam > 0 else [None] * len(bags)

    history = TrainHistory()
    best_state, best_gaussian, best_acc, stale = None, None, -np.inf, 0
    for epoch in range(config.epochs):
        if mcfg.aggregator == "anomaly":
            model.fit_gaussian(neg_instances)
        gamma = gamma_schedule(epoch, config.epochs, config.gamma_start) if mcfg.dual_head else 0.0
        sums = np.zeros(3)
        for i in rng.permutation(len(bags)):
            bag = bags[i]
            opt.zero_grad()
            losses = compute_losses(bag.instances, bag.label, model, config.lam, gamma, topology=topology[i])
            losses.total.backward()
            opt.step()
            sums += (losses.classification, losses.topo.forward, losses.topo.reverse)
        sums /= len(bags)
        if not np.all(np.isfinite(sums)):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")

        record = EpochRecord(epoch, float(sums[0]), float(sums[1]), float(sums[2]))
        if val_bags:
            report = evaluate(model, val_bags)
            record.val_accuracy, record.val_f1 = report.accuracy, report.f1
            if report.accuracy > best_acc:
                best_acc, stale = report.accuracy, 0
                best_state, best_gaussian = model.state_dict(), model.gaussian
                history.best_epoch = epoch
            else:
                stale += 1
        history.records.append(record)
        if config.patience is not None and val_bags and stale >= config.patience:
            log.info("early stop at epoch %d", epoch)
            break

    if best_state is not None:
        model.load_state_dict(best_state)
        model.gaussian = best_gaussian
    return model, history


# ---------------------------------------------------------------------------
# cross-validation


def _shuffled(items: Sequence, seed: int) -> list:
    order = np.random.default_rng(seed).permutation(len(items))
    return [items[i] for i in order]


def k_fold(bags: Sequence[Bag], k: int, seed: int = 0, group_aware: bool = False) -> list[tuple[list[Bag], list[Bag]]]:
    """Seeded shuffle then round-robin fold assignment.

    In group-aware mode whole groups are dealt to folds, so no group spans two
    folds; bags without a group count as their own group.
    """
    bags = list(bags)
    if k < 2:
        raise ValueError("k must be at least 2")
    if group_aware:
        keys = sorted({b.group if b.group is not None else f"\0{b.id}" for b in bags})
        if len(keys) < k:
            raise ValueError(f"only {len(keys)} groups for {k} folds")
        fold_of = {g: i % k for i, g in enumerate(_shuffled(keys, seed))}
        assign = [fold_of[b.group if b.group is not None else f"\0{b.id}"] for b in bags]
    else:
        if len(bags) < k:
            raise ValueError(f"only {len(bags)} bags for {k} folds")
        order = np.random.default_rng(seed).permutation(len(bags))
        assign = [0] * len(bags)
        for pos, i in enumerate(order):
            assign[i] = pos % k
    folds = []
    for f in range(k):
        test = [b for b, a in zip(bags, assign) if a == f]
        train_ = [b for b, a in zip(bags, assign) if a != f]
        folds.append((train_, test))
    return folds


def cross_validate(
    bags: Sequence[Bag], config: TrainConfig, k: int = 10, runs: int = 5, base_seed: int = 0
) -> np.ndarray:
    """Best-epoch test-fold accuracy for every (run, fold), shape ``(runs, k)``.

    Folds are re-drawn each run with seed ``base_seed + run``.
    """
    out = np.zeros((runs, k))
    for run in range(runs):
        seed = base_seed + run
        for f, (tr, te) in enumerate(k_fold(bags, k, seed)):
            _, hist = train(tr, replace(config, seed=seed), val_bags=te)
            out[run, f] = hist.best_val_accuracy()
    return out


# ---------------------------------------------------------------------------
# scarcity sweep


@dataclass
class PoolSource:
    """Draw bags from a labelled pool (picklable, for worker processes)."""

    pool_x: np.ndarray
    pool_y: np.ndarray
    positive_label: int
    positive_cap: float = 0.2

    def __call__(self, n_bags: int, size_mean: float, size_std: float, seed: int) -> list[Bag]:
        spec = BagDatasetSpec(n_bags, size_mean, size_std, self.positive_cap, self.positive_label, seed)
        return build_bags(self.pool_x, self.pool_y, spec)


@dataclass
class ToySource:
    dim: int = 100
    positive_cap: float = 0.2

    def __call__(self, n_bags: int, size_mean: float, size_std: float, seed: int) -> list[Bag]:
        return gen_toy(n_bags, size_mean, size_std, self.dim, seed, self.positive_cap)


BagSource = Callable[[int, float, float, int], list]

TEST_SEED_OFFSET = 100_000


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in self.rows:
            w.writerow([r["bag_count"], repr(r["size_mean"]), repr(r["size_std"]), r["model"], r["run"],
                        repr(r["f1"]), repr(r["accuracy"])])
        return buf.getvalue()

    def summary(self) -> list[dict]:
        """Mean and sample std over runs for each (bag_count, size, model) cell."""
        cells: dict[tuple, list[dict]] = {}
        for r in self.rows:
            cells.setdefault((r["bag_count"], r["size_mean"], r["size_std"], r["model"]), []).append(r)
        out = []
        for key in sorted(cells):
            rs = cells[key]
            f1 = np.array([r["f1"] for r in rs])
            acc = np.array([r["accuracy"] for r in rs])
            out.append(
                {
                    "bag_count": key[0],
                    "size_mean": key[1],
                    "size_std": key[2],
                    "model": key[3],
                    "runs": len(rs),
                    "f1_mean": float(f1.mean()),
                    "f1_std": float(f1.std(ddof=1)) if len(rs) > 1 else 0.0,
                    "accuracy_mean": float(acc.mean()),
                    "accuracy_std": float(acc.std(ddof=1)) if len(rs) > 1 else 0.0,
                }
            )
        return out


def _sweep_cell(args) -> dict:
    train_source, test_source, count, mean, std, run, model_name, config, test_bags, base_seed = args
    seed = base_seed + run
    tr = train_source(count, mean, std, seed)
    te = test_source(test_bags, mean, std, seed + TEST_SEED_OFFSET)
    model, _ = train(tr, replace(config, seed=seed))
    report = evaluate(model, te)
    return {"bag_count": count, "size_mean": float(mean), "size_std": float(std), "model": model_name,
            "run": run, "f1": report.f1, "accuracy": report.accuracy}


def default_workers() -> int:
    env = os.environ.get("TOPOMIL_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def scarcity_sweep(
    train_source: BagSource,
    bag_counts: Iterable[int],
    size_specs: Iterable[tuple[float, float]],
    runs: int,
    base_config: TrainConfig,
    lam: float,
    *,
    test_source: BagSource | None = None,
    test_bags: int = 100,
    base_seed: int = 0,
    workers: int | None = None,
    skip: set[tuple] | frozenset = frozenset(),
    on_row: Callable[[dict], None] | None = None,
) -> SweepResult:
    """Train a baseline (lambda = 0) and a regularised model for every
    (bag count, bag-size spec, run) and score both on a fresh test set.

    Run ``r`` uses seed ``base_seed + r`` for data, initialisation and
    shuffling; the test set comes from ``test_source`` (default: the training
    source) with an offset seed.  Cells whose key
    ``(bag_count, size_mean, size_std, model, run)`` is in ``skip`` are not run.
    """
    test_source = test_source or train_source
    models = (("baseline", replace(base_config, lam=0.0)), ("topo", replace(base_config, lam=lam)))
    jobs = []
    for count in bag_counts:
        for mean, std in size_specs:
            for name, cfg in models:
                for run in range(runs):
                    if (int(count), float(mean), float(std), name, run) in skip:
                        continue
                    jobs.append((train_source, test_source, int(count), float(mean), float(std), run, name, cfg,
                                 test_bags, base_seed))
    workers = workers or default_workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = []
            for row in pool.map(_sweep_cell, jobs):
                rows.append(row)
                if on_row:
                    on_row(row)
    else:
        rows = []
        for job in jobs:
            row = _sweep_cell(job)
            rows.append(row)
            if on_row:
                on_row(row)
    order = {"baseline": 0, "topo": 1}
    rows.sort(key=lambda r: (r["bag_count"], r["size_mean"], r["size_std"], order[r["model"]], r["run"]))
    return SweepResult(rows)
