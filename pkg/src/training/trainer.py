"""
Two-network co-training: batch assembly, the training iteration, the
optimizer, evaluation, diversity measurement and state checkpoints.
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..data.augment import AugmentConfig, AugmentedPair, draw_patch_size, mix_augment, weak_pair
from ..data.synthetic import SplitDataset
from ..network.checkpoint import load_network, read_header, read_tensors, save_network, write_tensors
from ..network.segnet import (
    INIT_STREAM,
    NetworkConfig,
    Projector,
    SegNetwork,
    build_pair,
    network_forward,
    projector_forward,
)
from ..ssm.routes import RouteSet
from ..tensor.core import Tape, Tensor, reduce, take
from ..tensor.module import Module
from ..utils.helpers import derive_rng, get_worker_count
from .losses import (
    DICE_EPS,
    ContrastiveConfig,
    ScheduleConfig,
    contrastive_loss,
    cross_supervision_loss,
    fuse_features,
    lambda_schedule,
    pseudo_label,
    segmentation_loss,
    supervised_loss,
    total_loss,
    uncertainty_weights,
)
from .metrics import MetricReport, cosine_distance, metric_report

logger = logging.getLogger(__name__)

# Random stream tags: derive_rng(seed, tag, ...); augmentation streams also key on augment.seed
AUGMENT_STREAM = 1
ITERATION_STREAM = 2
BATCH_STREAM = 3

MODULE_NAMES = ("net_a", "proj_a", "net_b", "proj_b")
METRICS_LOG = "metrics.log"


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 24
    labeled_batch_size: int = 12
    t_max: int = 2000
    eval_interval: int = 100
    checkpoint_interval: int = 500
    unsup_on_labeled: bool = True
    diverse_augment: bool = True
    diverse_scan: bool = True
    diverse_feature: bool = True
    uncertainty_weighting: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 1 <= self.labeled_batch_size <= self.batch_size:
            raise ValueError(f"labeled_batch_size {self.labeled_batch_size} must lie in [1, {self.batch_size}]")
        if self.t_max < 1 or self.eval_interval < 1 or self.checkpoint_interval < 1:
            raise ValueError("t_max, eval_interval and checkpoint_interval must be positive")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "TrainConfig":
        return cls(**config["trainer"])


@dataclass
class TrainSettings:
    """Every setting one training iteration reads."""

    trainer: TrainConfig
    augment: AugmentConfig
    schedule: ScheduleConfig
    contrastive: ContrastiveConfig
    network: NetworkConfig
    dice_eps: float = DICE_EPS

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "TrainSettings":
        return cls(trainer=TrainConfig.from_config(config), augment=AugmentConfig.from_config(config),
                   schedule=ScheduleConfig.from_config(config), contrastive=ContrastiveConfig.from_config(config),
                   network=NetworkConfig.from_config(config), dice_eps=config["losses"]["dice_eps"])


def _zero_buffers(modules: Dict[str, Module]) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{name}": np.zeros(t.shape)
            for prefix, module in modules.items() for name, t in module.named_parameters()}


@dataclass
class CoTrainState:
    """Networks A and B with their projectors, momentum buffers and the iteration counter."""

    net_a: SegNetwork
    proj_a: Projector
    net_b: SegNetwork
    proj_b: Projector
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def create(cls, network_config: NetworkConfig, seed: int, diverse_scan: bool = True) -> "CoTrainState":
        net_a, proj_a, net_b, proj_b = build_pair(network_config, seed, diverse_scan)
        state = cls(net_a, proj_a, net_b, proj_b)
        state.buffers = _zero_buffers(state.modules())
        return state

    def modules(self) -> Dict[str, Module]:
        return {name: getattr(self, name) for name in MODULE_NAMES}

    def parameters(self) -> Dict[str, Tensor]:
        return {f"{prefix}.{name}": t for prefix, module in self.modules().items()
                for name, t in module.named_parameters()}

    def zero_grad(self) -> None:
        for module in self.modules().values():
            module.zero_grad()

    def apply(self, values: Dict[str, np.ndarray]) -> None:
        """Assign ``prefix.parameter`` arrays to the owning modules."""
        grouped: Dict[str, Dict[str, np.ndarray]] = {name: {} for name in MODULE_NAMES}
        for key, value in values.items():
            prefix, name = key.split(".", 1)
            grouped[prefix][name] = value
        for prefix, group in grouped.items():
            if group:
                getattr(self, prefix).assign(group)


@dataclass
class SupervisedState:
    """A single network trained on labeled data only."""

    net: SegNetwork
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def create(cls, network_config: NetworkConfig, route_set: RouteSet, seed: int) -> "SupervisedState":
        net = SegNetwork(network_config, route_set, derive_rng(seed, INIT_STREAM, 1))
        return cls.from_network(net)

    @classmethod
    def from_network(cls, net: SegNetwork) -> "SupervisedState":
        copy = SegNetwork(net.config, net.route_set)
        copy.assign(net.state_dict())
        return cls(net=copy, buffers=_zero_buffers({"net": copy}))


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, Optional[np.ndarray]],
             buffers: Dict[str, np.ndarray], cfg: TrainConfig) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Momentum SGD with L2 weight decay.

        g' = g + wd·θ;  v ← μ·v + g';  θ ← θ − lr·v

    Args:
        params: Current parameter arrays
        grads: Gradients per parameter (None counts as zero)
        buffers: Momentum buffers per parameter
        cfg: Learning rate, momentum and weight decay

    Returns:
        Tuple (updated parameters, updated buffers)
    """
    new_params, new_buffers = {}, {}
    for name, theta in params.items():
        grad = grads.get(name)
        grad = np.zeros_like(theta) if grad is None else grad
        if grad.shape != theta.shape or buffers[name].shape != theta.shape:
            raise ValueError(f"shape mismatch for {name}: {theta.shape}, {grad.shape}, {buffers[name].shape}")
        velocity = cfg.momentum * buffers[name] + (grad + cfg.weight_decay * theta)
        new_buffers[name] = velocity
        new_params[name] = theta - cfg.learning_rate * velocity
    return new_params, new_buffers


def _iteration_patch_size(settings: TrainSettings, extent: int, t: int) -> int:
    if settings.augment.patch_size is not None:
        return settings.augment.patch_size
    return draw_patch_size(extent, derive_rng(settings.trainer.seed, ITERATION_STREAM, settings.augment.seed, t))


def augment_batch(images: np.ndarray, masks: Optional[np.ndarray], settings: TrainSettings, t: int
                  ) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray], int]:
    """
    Build both views for every image of an iteration.

    Args:
        images: (B, H, W) images; the first ``len(masks)`` are labeled
        masks: Labels of the leading images, or None
        settings: Training settings
        t: Iteration counter, used to derive the random streams

    Returns:
        Tuple (views for A, views for B, transformed labels or None, patch size)
    """
    patch_size = _iteration_patch_size(settings, images.shape[-1], t)
    make_pair = mix_augment if settings.trainer.diverse_augment else weak_pair
    n_masks = 0 if masks is None else len(masks)
    pairs: List[AugmentedPair] = []
    for i, image in enumerate(images):
        rng = derive_rng(settings.trainer.seed, AUGMENT_STREAM, settings.augment.seed, t, i)
        pairs.append(make_pair(image, masks[i] if i < n_masks else None, settings.augment, rng, patch_size))
    view_a = np.stack([p.view_a for p in pairs])
    view_b = np.stack([p.view_b for p in pairs])
    labels = np.stack([p.label for p in pairs[:n_masks]]) if n_masks else None
    return view_a, view_b, labels, patch_size


def fused_feature(route_feats: Sequence[Tensor], uncertainty_weighting: bool = True) -> Tensor:
    weights = uncertainty_weights(route_feats) if uncertainty_weighting else None
    return fuse_features(route_feats, weights)


def _as_input(images: np.ndarray) -> Tensor:
    return Tensor(images[..., None])


def train_iteration(state: CoTrainState, labeled_images: np.ndarray, labeled_masks: np.ndarray,
                    unlabeled_images: np.ndarray, settings: TrainSettings) -> Tuple[CoTrainState, Dict[str, float]]:
    """
    One co-training step over a labeled and an unlabeled sub-batch.

    Args:
        state: Co-training state, updated in place
        labeled_images: (n_l, H, W) labeled images
        labeled_masks: (n_l, H, W) labels
        unlabeled_images: (n_u, H, W) unlabeled images, possibly empty
        settings: Training settings

    Returns:
        Tuple (state, breakdown with sup, unsup, dfc, lambda, total and patch_size)
    """
    cfg = settings.trainer
    n_labeled = len(labeled_images)
    if n_labeled == 0:
        raise ValueError("train_iteration needs at least one labeled image")
    if len(labeled_masks) != n_labeled:
        raise ValueError(f"{len(labeled_masks)} labels for {n_labeled} labeled images")
    if state.t >= settings.schedule.t_max:
        raise ValueError(f"iteration {state.t} is past t_max={settings.schedule.t_max}")

    images = np.concatenate([labeled_images, unlabeled_images]) if len(unlabeled_images) else labeled_images
    view_a, view_b, labels, patch_size = augment_batch(images, labeled_masks, settings, state.t)
    labeled_idx = np.arange(n_labeled)
    unsup_idx = np.arange(len(images)) if cfg.unsup_on_labeled else np.arange(n_labeled, len(images))
    lam = lambda_schedule(state.t, settings.schedule)

    state.zero_grad()
    with Tape() as tape:
        logits_a, feats_a = network_forward(state.net_a, _as_input(view_a))
        logits_b, feats_b = network_forward(state.net_b, _as_input(view_b))
        sup = supervised_loss(take(logits_a, labeled_idx, 0), take(logits_b, labeled_idx, 0), labels,
                              settings.dice_eps)
        if len(unsup_idx):
            unsup = cross_supervision_loss(take(logits_a, unsup_idx, 0), take(logits_b, unsup_idx, 0),
                                           settings.dice_eps)
        else:
            unsup = Tensor(0.0)
        if cfg.diverse_feature and len(images) >= 2:
            z_a = projector_forward(state.proj_a, fused_feature(feats_a, cfg.uncertainty_weighting))
            z_b = projector_forward(state.proj_b, fused_feature(feats_b, cfg.uncertainty_weighting))
            dfc = contrastive_loss(z_a, z_b, settings.contrastive)
        else:
            dfc = Tensor(0.0)
        total = total_loss(sup, unsup, dfc, state.t, settings.schedule)
    tape.backward(total)

    params = state.parameters()
    new_params, new_buffers = sgd_step({k: t.data for k, t in params.items()},
                                       {k: t.grad for k, t in params.items()}, state.buffers, cfg)
    state.apply(new_params)
    state.buffers = new_buffers
    state.t += 1

    breakdown = {"sup": sup.item(), "unsup": unsup.item(), "dfc": dfc.item(), "lambda": lam,
                 "total": total.item(), "patch_size": patch_size}
    logger.debug(f"iteration {state.t}: {breakdown}")
    return state, breakdown


def supervised_iteration(state: SupervisedState, images: np.ndarray, masks: np.ndarray,
                         settings: TrainSettings, view: str = "a") -> Tuple[SupervisedState, float]:
    """
    One labeled-only step of a single network.

    The objective is the network's share of the co-training supervised term,
    ½(dice + ce), on the same augmented view network A (or B) would receive.

    Returns:
        Tuple (state, loss value)
    """
    if len(images) == 0:
        raise ValueError("supervised_iteration needs at least one labeled image")
    view_a, view_b, labels, _ = augment_batch(images, masks, settings, state.t)
    views = view_a if view == "a" else view_b

    state.net.zero_grad()
    with Tape() as tape:
        logits, _ = network_forward(state.net, _as_input(views))
        loss = 0.5 * segmentation_loss(logits, labels, settings.dice_eps)
    tape.backward(loss)

    params = dict(state.net.named_parameters())
    new_params, state.buffers = sgd_step({f"net.{k}": t.data for k, t in params.items()},
                                         {f"net.{k}": t.grad for k, t in params.items()},
                                         state.buffers, settings.trainer)
    state.net.assign({k.split(".", 1)[1]: v for k, v in new_params.items()})
    state.t += 1
    return state, loss.item()


def _chunks(count: int, workers: int) -> List[np.ndarray]:
    return [c for c in np.array_split(np.arange(count), max(1, min(workers, count))) if len(c)]


def _map_chunks(fn, count: int) -> List[Any]:
    # forward passes hold no tape, so chunks are independent
    with ThreadPoolExecutor(max_workers=get_worker_count()) as executor:
        return list(executor.map(fn, _chunks(count, get_worker_count())))


def predict(net: SegNetwork, images: np.ndarray) -> np.ndarray:
    """Argmax index maps for (n, H, W) images, with no augmentation."""
    if len(images) == 0:
        raise ValueError("cannot predict on an empty image set")
    results = _map_chunks(lambda idx: pseudo_label(network_forward(net, _as_input(images[idx]))[0]), len(images))
    return np.concatenate(results)


def evaluate_predictions(preds: np.ndarray, masks: np.ndarray, num_classes: int = 2) -> MetricReport:
    return metric_report(list(preds), list(masks), num_classes)


def evaluate(state: CoTrainState, images: np.ndarray, masks: np.ndarray, network: str = "a") -> MetricReport:
    """
    Metric report of one network on labeled images (network A by default).
    """
    if len(images) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    net = state.net_a if network == "a" else state.net_b
    report = evaluate_predictions(predict(net, images), masks, net.config.num_classes)
    logger.info(f"Evaluated network {network} on {len(images)} images: dice={report.summary['dice']}")
    return report


def pooled_fused_features(net: SegNetwork, images: np.ndarray, uncertainty_weighting: bool = True) -> np.ndarray:
    """Globally pooled fused bottleneck feature per image, shape (n, C)."""
    def run(idx):
        _, feats = network_forward(net, _as_input(images[idx]))
        return reduce("mean", fused_feature(feats, uncertainty_weighting), (-3, -2)).data

    return np.concatenate(_map_chunks(run, len(images)))


def diversity_measure(state: CoTrainState, images: np.ndarray, uncertainty_weighting: bool = True) -> float:
    """
    Mean cosine distance between the pooled fused bottleneck features of A and B.

    Returns:
        Value in [0, 2]
    """
    if len(images) == 0:
        raise ValueError("diversity_measure needs at least one image")
    feats_a = pooled_fused_features(state.net_a, images, uncertainty_weighting)
    feats_b = pooled_fused_features(state.net_b, images, uncertainty_weighting)
    return float(np.mean([cosine_distance(a, b) for a, b in zip(feats_a, feats_b)]))


def feature_discrepancy_map(state: CoTrainState, image: np.ndarray, uncertainty_weighting: bool = True) -> np.ndarray:
    """Per-location |channel mean of A's fused feature - channel mean of B's| for one image."""
    maps = []
    for net in (state.net_a, state.net_b):
        _, feats = network_forward(net, _as_input(np.asarray(image)))
        maps.append(fused_feature(feats, uncertainty_weighting).data.mean(axis=-1))
    return np.abs(maps[0] - maps[1])


def save_state(state: CoTrainState, directory: Path) -> Path:
    """Write both networks, both projectors, the momentum buffers and t."""
    directory = Path(directory)
    for name, module in state.modules().items():
        save_network(module, directory / name)
    write_tensors(directory / "optimizer", state.buffers, {"iteration": str(state.t)})
    logger.info(f"Saved co-training state at iteration {state.t} to {directory}")
    return directory


def load_state(directory: Path, network_config: NetworkConfig) -> CoTrainState:
    """Rebuild a co-training state written by :func:`save_state`."""
    directory = Path(directory)
    nets = {}
    for name in ("net_a", "net_b"):
        net = SegNetwork(network_config, RouteSet(read_header(directory / name)["route_set"]))
        load_network(net, directory / name)
        nets[name] = net
    projectors = {}
    for name in ("proj_a", "proj_b"):
        projector = Projector(network_config.bottleneck_channels, network_config.projector_dim,
                              network_config.init_std)
        load_network(projector, directory / name)
        projectors[name] = projector
    header, buffers = read_tensors(directory / "optimizer")
    state = CoTrainState(nets["net_a"], projectors["proj_a"], nets["net_b"], projectors["proj_b"],
                         buffers=buffers, t=int(header["iteration"]))
    if set(buffers) != set(state.parameters()):
        raise ValueError("optimizer buffers do not match the network parameters")
    return state


def format_metrics_line(values: Dict[str, float]) -> str:
    keys = ("iter", "sup", "unsup", "dfc", "lambda", "dice", "diversity")
    parts = []
    for key in keys:
        value = values.get(key)
        if key == "iter":
            parts.append(f"iter={int(value)}")
        else:
            parts.append(f"{key}={'nan' if value is None else format(value, '.6g')}")
    return " ".join(parts)


def read_metrics_log(path: Path) -> pd.DataFrame:
    """Parse ``key=value`` metrics lines into a DataFrame (one row per line)."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        pairs = re.findall(r"(\w+)=(\S+)", line)
        if pairs:
            rows.append({key: float(value) for key, value in pairs})
    return pd.DataFrame(rows)


class CoTrainer:
    """Runs the co-training loop from a resolved configuration."""

    def __init__(self, config: Dict[str, Any], output_dir: Optional[Path] = None):
        """
        Initialize the trainer.

        Args:
            config: Resolved configuration dictionary
            output_dir: Run directory; defaults to ``output.directory``
        """
        self.config = config
        self.settings = TrainSettings.from_config(config)
        self.output_dir = Path(output_dir or config["output"]["directory"])
        cfg = self.settings.trainer
        self.state = CoTrainState.create(self.settings.network, cfg.seed, cfg.diverse_scan)
        self.history: List[Dict[str, float]] = []
        logger.info(f"CoTrainer ready: t_max={cfg.t_max}, batch={cfg.batch_size} "
                    f"({cfg.labeled_batch_size} labeled), output={self.output_dir}")

    def resume(self, directory: Path) -> None:
        self.state = load_state(directory, self.settings.network)
        logger.info(f"Resumed from {directory} at iteration {self.state.t}")

    def sample_batch(self, dataset: SplitDataset, t: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Labeled and unlabeled sub-batches for iteration ``t``."""
        cfg = self.settings.trainer
        rng = derive_rng(cfg.seed, BATCH_STREAM, t)
        n_labeled = len(dataset.labeled_images)
        if n_labeled == 0:
            raise ValueError("dataset has no labeled images")
        take_l = rng.choice(n_labeled, size=cfg.labeled_batch_size, replace=n_labeled < cfg.labeled_batch_size)
        n_unlabeled = len(dataset.unlabeled_images)
        unlabeled_size = cfg.batch_size - cfg.labeled_batch_size if n_unlabeled else 0
        take_u = rng.choice(n_unlabeled, size=unlabeled_size, replace=n_unlabeled < unlabeled_size) \
            if unlabeled_size else np.zeros(0, dtype=np.int64)
        return (dataset.labeled_images[take_l], dataset.labeled_masks[take_l],
                dataset.unlabeled_images[take_u])

    def _eval_split(self, dataset: SplitDataset) -> Tuple[np.ndarray, np.ndarray]:
        if len(dataset.test_images):
            return dataset.test_images, dataset.test_masks
        return dataset.labeled_images, dataset.labeled_masks

    def log_metrics(self, breakdown: Dict[str, float], dataset: SplitDataset) -> Dict[str, float]:
        images, masks = self._eval_split(dataset)
        report = evaluate(self.state, images, masks)
        try:
            diversity = diversity_measure(self.state, images, self.settings.trainer.uncertainty_weighting)
        except ValueError as e:
            logger.warning(f"Diversity measure unavailable at iteration {self.state.t}: {e}")
            diversity = None
        values = dict(breakdown, iter=self.state.t, dice=report.summary["dice"], diversity=diversity)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        with open(self.output_dir / METRICS_LOG, "a", encoding="utf-8") as log_file:
            log_file.write(format_metrics_line(values) + "\n")
        return values

    def train(self, dataset: SplitDataset, iterations: Optional[int] = None) -> MetricReport:
        """
        Train until ``t_max`` (or for ``iterations`` steps) and evaluate network A.

        Args:
            dataset: Split dataset
            iterations: Optional cap on the number of steps taken by this call

        Returns:
            Final metric report of network A
        """
        cfg = self.settings.trainer
        stop = cfg.t_max if iterations is None else min(cfg.t_max, self.state.t + iterations)
        breakdown: Dict[str, float] = {}
        try:
            while self.state.t < stop:
                labeled, masks, unlabeled = self.sample_batch(dataset, self.state.t)
                _, breakdown = train_iteration(self.state, labeled, masks, unlabeled, self.settings)
                self.history.append(dict(breakdown, iter=self.state.t))
                if self.state.t % cfg.eval_interval == 0:
                    values = self.log_metrics(breakdown, dataset)
                    logger.info(format_metrics_line(values))
                if self.state.t % cfg.checkpoint_interval == 0:
                    save_state(self.state, self.output_dir / "checkpoints" / f"iter_{self.state.t:06d}")
        except Exception as e:
            logger.error(f"Training failed at iteration {self.state.t}: {e}")
            raise

        if breakdown and self.state.t % cfg.eval_interval != 0:
            self.log_metrics(breakdown, dataset)
        save_state(self.state, self.output_dir / "checkpoint")
        images, masks = self._eval_split(dataset)
        report = evaluate(self.state, images, masks)
        report.per_image.to_csv(self.output_dir / "report.csv", index=False)
        return report
