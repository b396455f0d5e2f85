"""
Scaled-down trend experiments on synthetic data.

Each driver takes a resolved configuration, runs its trainings and returns an
:class:`ExperimentResult` whose table has one row per seed.
"""

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from ..data.synthetic import SplitDataset, SyntheticSpec, gen_synthetic
from ..ssm.routes import RouteSet
from ..utils.helpers import derive_rng, resolve_config
from .trainer import (
    BATCH_STREAM,
    CoTrainer,
    SupervisedState,
    TrainSettings,
    diversity_measure,
    evaluate_predictions,
    predict,
    supervised_iteration,
)

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
# a trend must hold in at least this many of the five seeds
REQUIRED_WINS = 4
OVERFIT_DICE = 0.95


@dataclass
class ExperimentResult:
    name: str
    table: pd.DataFrame
    passed: bool

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {verdict}\n{self.table.to_string(index=False, float_format=lambda v: f'{v:.4f}')}"


def _override(config: Dict[str, Any], **sections: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(config)
    for section, values in sections.items():
        merged[section] = dict(merged[section], **values)
    return resolve_config(merged)


def _run_dir(config: Dict[str, Any], name: str, seed: int) -> Path:
    return Path(config["output"]["directory"]) / "experiments" / name / f"seed_{seed}"


def train_supervised(config: Dict[str, Any], dataset: SplitDataset, route_set: RouteSet,
                     iterations: int) -> SupervisedState:
    """Train one network on the labeled split only."""
    settings = TrainSettings.from_config(config)
    cfg = settings.trainer
    state = SupervisedState.create(settings.network, route_set, cfg.seed)
    n_labeled = len(dataset.labeled_images)
    for t in range(iterations):
        rng = derive_rng(cfg.seed, BATCH_STREAM, t)
        idx = rng.choice(n_labeled, size=cfg.labeled_batch_size, replace=n_labeled < cfg.labeled_batch_size)
        _, loss = supervised_iteration(state, dataset.labeled_images[idx], dataset.labeled_masks[idx], settings)
        if (t + 1) % cfg.eval_interval == 0:
            logger.info(f"supervised {route_set.value} iteration {t + 1}: loss={loss:.4f}")
    return state


def _dice(net, images: np.ndarray, masks: np.ndarray) -> float:
    return evaluate_predictions(predict(net, images), masks, net.config.num_classes).summary["dice"]


def overfit_check(config: Dict[str, Any], seeds: Sequence[int] = (0,),
                  iterations: Optional[int] = None) -> ExperimentResult:
    """Co-train on 8 labeled images and no unlabeled ones; training Dice must reach 0.95."""
    rows = []
    for seed in seeds:
        run = _override(config, synthetic={"num_labeled": 8, "num_unlabeled": 0, "seed": seed},
                        trainer={"seed": seed})
        dataset = gen_synthetic(SyntheticSpec.from_config(run))
        trainer = CoTrainer(run, _run_dir(run, "overfit", seed))
        trainer.train(dataset, iterations)
        dice = _dice(trainer.state.net_a, dataset.labeled_images, dataset.labeled_masks)
        rows.append({"seed": seed, "iterations": trainer.state.t, "train_dice": dice})
    table = pd.DataFrame(rows)
    return ExperimentResult("overfit", table, bool((table["train_dice"] >= OVERFIT_DICE).all()))


def semi_supervised_trend(config: Dict[str, Any], seeds: Sequence[int] = DEFAULT_SEEDS,
                          iterations: Optional[int] = None) -> ExperimentResult:
    """Full co-training with 4 labeled + 60 unlabeled images against labeled-only training."""
    rows = []
    for seed in seeds:
        run = _override(config, synthetic={"num_labeled": 4, "num_unlabeled": 60, "seed": seed},
                        trainer={"seed": seed})
        steps = iterations or run["trainer"]["t_max"]
        dataset = gen_synthetic(SyntheticSpec.from_config(run))
        trainer = CoTrainer(run, _run_dir(run, "semi_supervised", seed))
        trainer.train(dataset, steps)
        baseline = train_supervised(run, dataset, RouteSet.HV, steps)
        full = _dice(trainer.state.net_a, dataset.test_images, dataset.test_masks)
        labeled_only = _dice(baseline.net, dataset.test_images, dataset.test_masks)
        rows.append({"seed": seed, "full_dice": full, "labeled_only_dice": labeled_only,
                     "margin": full - labeled_only})
    table = pd.DataFrame(rows)
    passed = (table["full_dice"].mean() >= table["labeled_only_dice"].mean()
              and int((table["margin"] >= 0).sum()) >= min(REQUIRED_WINS, len(table)))
    return ExperimentResult("semi-supervised", table, bool(passed))


def directional_check(config: Dict[str, Any], seeds: Sequence[int] = DEFAULT_SEEDS,
                      iterations: Optional[int] = None) -> ExperimentResult:
    """HV-only against DA-only networks on vertical and tilted test bars."""
    rows = []
    for seed in seeds:
        run = _override(config, synthetic={"seed": seed, "num_test": max(config["synthetic"]["num_test"], 16)},
                        trainer={"seed": seed})
        steps = iterations or run["trainer"]["t_max"]
        dataset = gen_synthetic(SyntheticSpec.from_config(run))
        row: Dict[str, Any] = {"seed": seed}
        for route_set in (RouteSet.HV, RouteSet.DA):
            net = train_supervised(run, dataset, route_set, steps).net
            for family in ("vertical", "tilted"):
                images, masks = dataset.test_subset(family)
                row[f"{route_set.value}_{family}"] = _dice(net, images, masks) if len(images) else None
        rows.append(row)
    table = pd.DataFrame(rows)
    vertical_wins = int((table["HV_vertical"] >= table["DA_vertical"]).sum())
    tilted_wins = int((table["DA_tilted"] >= table["HV_tilted"]).sum())
    needed = min(REQUIRED_WINS, len(table))
    return ExperimentResult("directional", table, vertical_wins >= needed and tilted_wins >= needed)


def diversity_check(config: Dict[str, Any], seeds: Sequence[int] = DEFAULT_SEEDS,
                    iterations: Optional[int] = None) -> ExperimentResult:
    """Diversity of the full method against co-training with both networks scanning HV."""
    rows = []
    for seed in seeds:
        row: Dict[str, Any] = {"seed": seed}
        for label, diverse_scan in (("full", True), ("same_routes", False)):
            run = _override(config, synthetic={"seed": seed}, trainer={"seed": seed, "diverse_scan": diverse_scan})
            dataset = gen_synthetic(SyntheticSpec.from_config(run))
            trainer = CoTrainer(run, _run_dir(run, f"diversity_{label}", seed))
            trainer.train(dataset, iterations)
            images = dataset.test_images if len(dataset.test_images) else dataset.labeled_images
            row[f"{label}_diversity"] = diversity_measure(trainer.state, images,
                                                          run["trainer"]["uncertainty_weighting"])
        rows.append(row)
    table = pd.DataFrame(rows)
    wins = int((table["full_diversity"] > table["same_routes_diversity"]).sum())
    return ExperimentResult("diversity", table, wins >= min(REQUIRED_WINS, len(table)))


def _semi_run(config: Dict[str, Any], seed: int, **trainer: Any) -> Dict[str, Any]:
    return _override(config, synthetic={"num_labeled": 4, "num_unlabeled": 60, "seed": seed},
                     trainer=dict(trainer, seed=seed))


def _cotrain(run: Dict[str, Any], dataset: SplitDataset, name: str, seed: int,
             iterations: Optional[int]) -> CoTrainer:
    trainer = CoTrainer(run, _run_dir(run, name, seed))
    trainer.train(dataset, iterations or run["trainer"]["t_max"])
    return trainer


def _holds(table: pd.DataFrame, better: str, worse: str) -> bool:
    """``better`` beats ``worse`` on average and per seed in enough seeds."""
    wins = int((table[better] >= table[worse]).sum())
    return bool(table[better].mean() >= table[worse].mean() and wins >= min(REQUIRED_WINS, len(table)))


# Cumulative component switches, from plain cross supervision to the full method
ABLATION_VARIANTS = (
    ("baseline", {"diverse_augment": False, "diverse_scan": False, "diverse_feature": False}),
    ("augment", {"diverse_augment": True, "diverse_scan": False, "diverse_feature": False}),
    ("augment_scan", {"diverse_augment": True, "diverse_scan": True, "diverse_feature": False}),
    ("full", {"diverse_augment": True, "diverse_scan": True, "diverse_feature": True}),
)


def ablation_study(config: Dict[str, Any], seeds: Sequence[int] = DEFAULT_SEEDS,
                   iterations: Optional[int] = None) -> ExperimentResult:
    """
    Test Dice as the three diversity components are switched on one after another.

    Passes when the full method beats plain cross-supervised co-training.
    """
    rows = []
    for seed in seeds:
        row: Dict[str, Any] = {"seed": seed}
        for label, switches in ABLATION_VARIANTS:
            run = _semi_run(config, seed, **switches)
            dataset = gen_synthetic(SyntheticSpec.from_config(run))
            trainer = _cotrain(run, dataset, f"ablation_{label}", seed, iterations)
            row[f"{label}_dice"] = _dice(trainer.state.net_a, dataset.test_images, dataset.test_masks)
        rows.append(row)
    table = pd.DataFrame(rows)
    return ExperimentResult("ablation", table, _holds(table, "full_dice", "baseline_dice"))


def fusion_comparison(config: Dict[str, Any], seeds: Sequence[int] = DEFAULT_SEEDS,
                      iterations: Optional[int] = None) -> ExperimentResult:
    """Uncertainty-weighted route fusion against the plain route sum inside the contrastive term."""
    rows = []
    for seed in seeds:
        row: Dict[str, Any] = {"seed": seed}
        for label, weighting in (("weighted", True), ("plain", False)):
            run = _semi_run(config, seed, uncertainty_weighting=weighting)
            dataset = gen_synthetic(SyntheticSpec.from_config(run))
            trainer = _cotrain(run, dataset, f"fusion_{label}", seed, iterations)
            row[f"{label}_dice"] = _dice(trainer.state.net_a, dataset.test_images, dataset.test_masks)
            row[f"{label}_diversity"] = diversity_measure(trainer.state, dataset.test_images, weighting)
        rows.append(row)
    table = pd.DataFrame(rows)
    return ExperimentResult("fusion", table, _holds(table, "weighted_dice", "plain_dice"))


def patch_size_sweep(config: Dict[str, Any], seeds: Sequence[int] = DEFAULT_SEEDS,
                     iterations: Optional[int] = None, sizes: Optional[Sequence[int]] = None) -> ExperimentResult:
    """
    Fixed augmentation patch sizes against a size drawn per iteration.

    Args:
        sizes: Fixed sizes to compare; defaults to H/8, H/4, H/2 and H

    Passes when the random mode matches or beats every fixed size on mean test Dice.
    """
    extent = config["synthetic"]["image_size"]
    if sizes is None:
        sizes = sorted({max(1, extent // 8), max(1, extent // 4), max(1, extent // 2), extent})
    modes = [(f"patch_{size}", size) for size in sizes] + [("random", "random")]
    rows = []
    for seed in seeds:
        row: Dict[str, Any] = {"seed": seed}
        for label, patch_size in modes:
            run = _override(_semi_run(config, seed), augment={"patch_size": patch_size})
            dataset = gen_synthetic(SyntheticSpec.from_config(run))
            trainer = _cotrain(run, dataset, f"patch_size_{label}", seed, iterations)
            row[f"{label}_dice"] = _dice(trainer.state.net_a, dataset.test_images, dataset.test_masks)
        rows.append(row)
    table = pd.DataFrame(rows)
    random_mean = table["random_dice"].mean()
    passed = all(random_mean >= table[f"{label}_dice"].mean() for label, _ in modes[:-1])
    return ExperimentResult("patch-size", table, bool(passed))


def single_network_comparison(config: Dict[str, Any], seeds: Sequence[int] = DEFAULT_SEEDS,
                              iterations: Optional[int] = None) -> ExperimentResult:
    """
    Co-training over split route sets against one network scanning all eight directions.

    The single network is trained on the labeled split with the supervised loop.
    """
    rows = []
    for seed in seeds:
        run = _semi_run(config, seed)
        steps = iterations or run["trainer"]["t_max"]
        dataset = gen_synthetic(SyntheticSpec.from_config(run))
        trainer = _cotrain(run, dataset, "single_network", seed, steps)
        single = train_supervised(run, dataset, RouteSet.ALL, steps)
        rows.append({"seed": seed,
                     "co_training_dice": _dice(trainer.state.net_a, dataset.test_images, dataset.test_masks),
                     "single_network_dice": _dice(single.net, dataset.test_images, dataset.test_masks)})
    table = pd.DataFrame(rows)
    return ExperimentResult("single-network", table, _holds(table, "co_training_dice", "single_network_dice"))


EXPERIMENTS: Dict[str, Callable[..., ExperimentResult]] = {
    "overfit": overfit_check,
    "semi-supervised": semi_supervised_trend,
    "directional": directional_check,
    "diversity": diversity_check,
    "ablation": ablation_study,
    "fusion": fusion_comparison,
    "patch-size": patch_size_sweep,
    "single-network": single_network_comparison,
}
