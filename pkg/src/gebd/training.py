"""SGD-with-momentum training with a step learning-rate schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import supervision
from . import tensor as tc
from .data_io import BoundaryAnnotation, FrameFeatureSequence, times_to_indices
from .network import BoundaryTransformer, save_checkpoint
from .tensor import Parameter

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class Schedule:
    total_epochs: int = 20
    drop_epochs: tuple[int, ...] = (6, 10)
    drop_factor: float = 10.0
    base_lr: float = 1e-2

    def __post_init__(self):
        self.drop_epochs = tuple(self.drop_epochs)
        if list(self.drop_epochs) != sorted(set(self.drop_epochs)):
            raise ValueError(f"drop_epochs must be strictly ascending: {self.drop_epochs}")
        if self.drop_epochs and self.drop_epochs[-1] >= self.total_epochs:
            raise ValueError("drop epochs must precede total_epochs")
        if self.drop_factor <= 0 or self.base_lr <= 0:
            raise ValueError("drop_factor and base_lr must be positive")


def lr_at(epoch: int, schedule: Schedule) -> float:
    drops = sum(1 for e in schedule.drop_epochs if epoch >= e)
    return schedule.base_lr / schedule.drop_factor ** drops


@dataclass
class OptimizerState:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: list[Parameter], state: OptimizerState) -> None:
    """v <- momentum*v + grad + wd*param ; param <- param - lr*v, using ``p.grad``."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in {p.name}; step aborted")
    for p in params:
        v = state.velocity.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
        if v.shape != p.shape:
            raise ValueError(f"velocity shape {v.shape} != parameter {p.name} shape {p.shape}")
        v = state.momentum * v + p.grad + state.weight_decay * p.data
        state.velocity[p.name] = v
        p.data = p.data - state.lr * v


@dataclass
class TrainConfig:
    epochs: int = 20
    drop_epochs: tuple[int, ...] = (6, 10)
    drop_factor: float = 10.0
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 2
    sigma: float = 1.0
    radius: float = 3.0
    category_weight: float = 1.0
    seed: int = 0

    def schedule(self) -> Schedule:
        return Schedule(self.epochs, tuple(self.drop_epochs), self.drop_factor, self.lr)


@dataclass
class Example:
    video_id: str
    features: np.ndarray
    binary: np.ndarray
    categorical: np.ndarray | None


def make_examples(sequences: dict[str, FrameFeatureSequence], annotations: list[BoundaryAnnotation],
                  cfg: TrainConfig, K: int | None) -> list[Example]:
    """Pair features with their soft labels; ``K`` None skips category labels."""
    out = []
    for ann in annotations:
        if ann.video_id not in sequences:
            raise KeyError(f"no features for annotated video {ann.video_id!r}")
        seq = sequences[ann.video_id]
        idx = times_to_indices(ann.boundaries_s, seq.fps, seq.T)
        binary = supervision.soften(idx, seq.T, cfg.sigma, cfg.radius)
        cat = None
        cats = ann.categories or []
        # unlabeled (category 0) boundaries cannot supervise the category head
        if K is not None and all(c >= 1 for c in cats):
            cat = supervision.soften_categorical(idx, cats, seq.T, K, cfg.sigma, cfg.radius)
        out.append(Example(ann.video_id, np.asarray(seq.features, dtype=np.float64), binary, cat))
    return out


def example_loss(model: BoundaryTransformer, ex: Example, category_weight: float = 1.0) -> tc.Tensor:
    fw = model(ex.features)
    loss = supervision.binary_loss(fw.b, ex.binary)
    if fw.m is not None and ex.categorical is not None and category_weight:
        loss = loss + supervision.categorical_loss(fw.m, ex.categorical) * category_weight
    return loss


@dataclass
class TrainResult:
    model: BoundaryTransformer
    # (epoch, mean loss, lr); entry 0 is the loss before any update, entry
    # e >= 1 the mean loss while training epoch e (0-based schedule index e-1)
    curve: list[tuple[int, float, float]]
    val_f1: list[float] = field(default_factory=list)


def format_curve(curve) -> str:
    return "".join(f"{e} {loss!r} {lr!r}\n" for e, loss, lr in curve)


def train(model: BoundaryTransformer, dataset: list[Example], cfg: TrainConfig, validate=None,
          checkpoint_dir=None) -> TrainResult:
    """Train in place. ``validate(model) -> F1`` is called after every epoch if given.

    With ``checkpoint_dir`` set, ``epoch_XX.ckpt`` is written after each epoch
    (XX counts completed epochs).
    """
    if not dataset:
        raise ValueError("empty training set")
    schedule = cfg.schedule()
    params = model.parameters()
    state = OptimizerState(lr_at(0, schedule), cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    last_good = None
    result = TrainResult(model, [])

    with tc.no_grad():
        init_loss = float(np.mean([example_loss(model, ex, cfg.category_weight).data
                                   for ex in dataset]))
    result.curve.append((0, init_loss, lr_at(0, schedule)))
    log.info(f"epoch  0 loss {init_loss:.5f} (before training)")

    for epoch in range(cfg.epochs):
        state.lr = lr_at(epoch, schedule)
        snapshot = {p.name: p.data.copy() for p in params}
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grad()
            step_loss = 0.0
            for ex in batch:
                loss = example_loss(model, ex, cfg.category_weight) * (1.0 / len(batch))
                tc.backward(loss)
                step_loss += float(loss.data)
            if not math.isfinite(step_loss):
                for p in params:
                    p.data = snapshot[p.name]
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {start // cfg.batch_size}",
                                       last_good)
            try:
                sgd_step(params, state)
            except FloatingPointError as e:
                for p in params:
                    p.data = snapshot[p.name]
                raise TrainingDiverged(str(e), last_good) from None
            total += step_loss * len(batch)
            count += len(batch)
        mean_loss = total / count
        result.curve.append((epoch + 1, mean_loss, state.lr))
        msg = f"epoch {epoch + 1:2d} loss {mean_loss:.5f} lr {state.lr:g}"
        if validate is not None:
            f1 = validate(model)
            result.val_f1.append(f1)
            msg += f" val_f1 {f1:.4f}"
        log.info(msg)
        if ckpt_dir is not None:
            last_good = ckpt_dir / f"epoch_{epoch + 1:02d}.ckpt"
            save_checkpoint(model, last_good, extra={"epoch": epoch + 1, "loss": mean_loss})
    return result
