"""Two-stage optimization: momentum SGD, step schedules, training loops.

Stage one fits the backbone and per-label attention branches on single
frames.  Stage two freezes those parameters (by default), caches the
per-sequence feature tensors they produce, and fits the graph stack plus
per-node heads on fixed-length windows.

Determinism: every random choice (epoch shuffles, crop offsets, mirror
flips) is drawn from generators derived from the training seed, so a fixed
seed and dataset reproduce checkpoints bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .backbone import attention_stage_forward, backbone_from, branch_from
from .config import HyperParams
from .dataset import VideoSequence, iter_windows
from .errors import ConfigError, DataError, IoError, NumericalError
from .graph import RelationGraph
from .losses import attention_stage_loss, au_detection_loss, class_weights
from .model import (
    Entries,
    init_attention_entries,
    init_relation_entries,
    model_dims,
    sequence_features,
)
from .rng import Xoshiro256pp, derive_seed
from .stgcn import head_from, stgcn_forward, stgcn_from

# Stream tags, one per consumer of the training seed.
_ATTENTION_EPOCH_STREAM = 21
_RELATION_EPOCH_STREAM = 23

LOG_HEADER = ("stage", "epoch", "step", "lr", "loss")

#: One row per optimizer step: (stage, epoch, step, lr, loss).
LogRow = Tuple[str, int, int, float, float]


# ---------------------------------------------------------------------------
# Learning-rate schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LrSchedule:
    initial: float
    decay: float
    period: int
    max_epochs: int


def attention_schedule(hp: HyperParams) -> LrSchedule:
    return LrSchedule(hp.attention_lr, hp.attention_decay, hp.attention_period,
                      hp.attention_epochs)


def relation_schedule(hp: HyperParams) -> LrSchedule:
    return LrSchedule(hp.relation_lr, hp.relation_decay, hp.relation_period,
                      hp.relation_epochs)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Step decay: initial * decay ** floor(epoch / period)."""
    if epoch < 0 or epoch >= schedule.max_epochs:
        raise ConfigError(
            f"epoch {epoch} outside schedule range [0, {schedule.max_epochs})"
        )
    return schedule.initial * schedule.decay ** (epoch // schedule.period)


# ---------------------------------------------------------------------------
# Momentum SGD
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(
    entries: Entries,
    grads: Dict[str, np.ndarray],
    lr: float,
    state: OptimizerState,
) -> Entries:
    """One momentum step over the named gradients; returns updated entries.

    For each named parameter: g' = g + wd * theta, v <- mu * v + g',
    theta <- theta - lr * (g' + mu * v).  Parameters without a gradient
    entry are left untouched.  Velocities live in ``state``.
    """
    updated = dict(entries)
    for name, grad in grads.items():
        if name not in entries:
            raise ConfigError(f"gradient for unknown parameter {name!r}")
        theta = entries[name].data
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != theta.shape:
            raise ConfigError(
                f"gradient shape {g.shape} != parameter shape {theta.shape} "
                f"for {name!r}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        g = g + state.weight_decay * theta
        v = state.velocity.get(name)
        v = g if v is None else state.momentum * v + g
        state.velocity[name] = v
        updated[name] = T.Tensor(theta - lr * (g + state.momentum * v),
                                 requires_grad=True)
    return updated


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _collect_grads(tape: T.Tape, entries: Entries, names: Sequence[str]):
    grads: Dict[str, np.ndarray] = {}
    for name in names:
        g = tape.grad(entries[name])
        if g is not None:
            grads[name] = g
    return grads


def _training_windows(
    sequences: Sequence[VideoSequence], t: int, stage: str
) -> List[Tuple[VideoSequence, int]]:
    if not sequences:
        raise DataError(f"{stage} training needs a non-empty dataset")
    windows = list(iter_windows(sequences, t))
    if not windows:
        raise DataError(
            f"{stage} training found no length-{t} windows; "
            f"longest sequence has {max(len(s.frames) for s in sequences)} frames"
        )
    return windows


def _dataset_weights(sequences: Sequence[VideoSequence], m: int) -> np.ndarray:
    labels = np.concatenate([seq.labels for seq in sequences], axis=0)
    if labels.shape[1] != m:
        raise ConfigError(
            f"dataset has {labels.shape[1]} label columns but model expects {m}"
        )
    return class_weights(labels.mean(axis=0))


def _crop_bounds(frames: np.ndarray, l: int, stage: str) -> Tuple[int, int]:
    height, width = frames.shape[-2], frames.shape[-1]
    if height < l or width < l:
        raise ConfigError(
            f"{stage}: frames are {height}x{width}, smaller than crop size {l}"
        )
    return height - l, width - l


def _augmented_window(
    frames: np.ndarray, start: int, t: int, l: int, rng: Xoshiro256pp, stage: str
) -> np.ndarray:
    """Random crop and mirror, one draw shared by all frames of the window."""
    dy, dx = _crop_bounds(frames, l, stage)
    oy = rng.randint(dy + 1)
    ox = rng.randint(dx + 1)
    window = frames[start:start + t, :, oy:oy + l, ox:ox + l]
    if rng.random() < 0.5:
        window = window[..., ::-1]
    return np.ascontiguousarray(window)


def _center_window(frames: np.ndarray, l: int, stage: str) -> np.ndarray:
    dy, dx = _crop_bounds(frames, l, stage)
    oy, ox = dy // 2, dx // 2
    return np.ascontiguousarray(frames[:, :, oy:oy + l, ox:ox + l])


def save_training_log(path, rows: Sequence[LogRow]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(LOG_HEADER)
            for stage, epoch, step, lr, loss in rows:
                writer.writerow([stage, epoch, step, repr(lr), repr(loss)])
    except OSError as exc:
        raise IoError(f"cannot write training log {path}: {exc}") from exc


@dataclass
class TrainResult:
    entries: Entries
    log: List[LogRow]


# ---------------------------------------------------------------------------
# Stage one: backbone and attention branches
# ---------------------------------------------------------------------------


def train_attention_stage(
    sequences: Sequence[VideoSequence],
    hp: HyperParams,
    seed: int,
    init_entries: Optional[Entries] = None,
    epochs: Optional[int] = None,
) -> TrainResult:
    """Fit the frame-level model; returns final entries and the loss log."""
    hp.validate()
    windows = _training_windows(sequences, hp.t, "attention stage")
    weights = _dataset_weights(sequences, hp.m)

    entries = dict(init_entries) if init_entries is not None \
        else init_attention_entries(hp.c, hp.m, seed)
    dims = model_dims(entries)
    if dims.c != hp.c or dims.m != hp.m:
        raise ConfigError(
            f"checkpoint sizes (c={dims.c}, m={dims.m}) do not match "
            f"config (c={hp.c}, m={hp.m})"
        )
    names = [n for n in entries
             if n.startswith("backbone.") or n.startswith("branch.")]
    schedule = attention_schedule(hp)
    state = OptimizerState(hp.momentum, hp.weight_decay)
    total = hp.attention_epochs if epochs is None else epochs
    if total > schedule.max_epochs:
        raise ConfigError(
            f"{total} epochs exceeds schedule maximum {schedule.max_epochs}"
        )

    log: List[LogRow] = []
    for epoch in range(total):
        lr = lr_at(schedule, epoch)
        rng = Xoshiro256pp(derive_seed(seed, _ATTENTION_EPOCH_STREAM, epoch))
        order = list(windows)
        rng.shuffle(order)
        for step_idx, batch_start in enumerate(range(0, len(order), hp.batch_size)):
            batch = order[batch_start:batch_start + hp.batch_size]
            clips, labels = [], []
            for seq, start in batch:
                clips.append(_augmented_window(
                    seq.frames, start, hp.t, hp.l, rng, "attention stage"))
                labels.append(seq.labels[start:start + hp.t])
            frames = np.concatenate(clips, axis=0)          # (s*t, 3, l, l)
            targets = np.concatenate(labels, axis=0)        # (s*t, m)

            with T.Tape() as tape:
                backbone = backbone_from(entries)
                branches = [branch_from(entries, j) for j in range(1, hp.m + 1)]
                maps, _, probs = attention_stage_forward(
                    T.Tensor(frames), backbone, branches)
                loss = attention_stage_loss(probs, maps, targets, weights,
                                            hp.lambda_r)
            value = float(loss.data)
            if math.isnan(value):
                raise NumericalError(
                    f"NaN loss in attention stage at epoch {epoch} step {step_idx}"
                )
            tape.backward(loss)
            entries = sgd_step(entries, _collect_grads(tape, entries, names),
                               lr, state)
            log.append(("attention", epoch, step_idx, lr, value))
    return TrainResult(entries, log)


# ---------------------------------------------------------------------------
# Stage two: graph stack and per-node heads
# ---------------------------------------------------------------------------


def _stage2_features(
    entries: Entries, sequences: Sequence[VideoSequence], l: int
) -> List[np.ndarray]:
    """Per-sequence feature tensors (8c, t_i, m) from the frozen stage."""
    return [
        sequence_features(entries, _center_window(seq.frames, l, "relation stage"))
        for seq in sequences
    ]


def train_relation_stage(
    sequences: Sequence[VideoSequence],
    graph: RelationGraph,
    stage1: Entries,
    hp: HyperParams,
    seed: int,
    init_entries: Optional[Entries] = None,
    epochs: Optional[int] = None,
    freeze: Optional[bool] = None,
) -> TrainResult:
    """Fit the sequence-level model on top of a trained frame-level stage."""
    hp.validate()
    frozen = hp.freeze_backbone if freeze is None else freeze
    dims = model_dims(stage1)
    if graph.m != dims.m:
        raise ConfigError(
            f"graph has {graph.m} nodes but checkpoint has {dims.m} branches"
        )
    windows = _training_windows(sequences, hp.t, "relation stage")
    weights = _dataset_weights(sequences, dims.m)

    if init_entries is not None:
        entries = dict(init_entries)
        resumed = model_dims(entries)
        if resumed.depth == 0:
            raise ConfigError("resume checkpoint holds no graph-stack entries")
        if (resumed.c, resumed.m) != (dims.c, dims.m):
            raise ConfigError("resume checkpoint does not match stage-1 sizes")
        depth, t_k = resumed.depth, resumed.t_k
    else:
        entries = init_relation_entries(stage1, hp.t_k, hp.depth, seed)
        depth, t_k = hp.depth, hp.t_k
    del t_k  # recorded in the entries themselves

    trainable = [n for n in entries
                 if n.startswith("gst.") or n.startswith("head.")]
    if not frozen:
        # Everything except embedded graph constants.
        trainable = [n for n in entries if not n.startswith("graph.")]

    index_of = {id(seq): i for i, seq in enumerate(sequences)}
    cached = _stage2_features(entries, sequences, hp.l) if frozen else None

    schedule = relation_schedule(hp)
    state = OptimizerState(hp.momentum, hp.weight_decay)
    total = hp.relation_epochs if epochs is None else epochs
    if total > schedule.max_epochs:
        raise ConfigError(
            f"{total} epochs exceeds schedule maximum {schedule.max_epochs}"
        )

    log: List[LogRow] = []
    for epoch in range(total):
        lr = lr_at(schedule, epoch)
        rng = Xoshiro256pp(derive_seed(seed, _RELATION_EPOCH_STREAM, epoch))
        order = list(windows)
        rng.shuffle(order)
        for step_idx, batch_start in enumerate(range(0, len(order), hp.batch_size)):
            batch = order[batch_start:batch_start + hp.batch_size]
            targets = np.stack(
                [seq.labels[start:start + hp.t] for seq, start in batch])

            with T.Tape() as tape:
                if frozen:
                    feats = np.stack([
                        cached[index_of[id(seq)]][:, start:start + hp.t, :]
                        for seq, start in batch
                    ])
                    f0 = T.Tensor(feats)                     # (s, 8c, t, m)
                else:
                    clips = np.concatenate([
                        _center_window(seq.frames, hp.l, "relation stage")
                        [start:start + hp.t]
                        for seq, start in batch
                    ], axis=0)
                    backbone = backbone_from(entries)
                    branches = [branch_from(entries, j)
                                for j in range(1, dims.m + 1)]
                    _, flat, _ = attention_stage_forward(
                        T.Tensor(clips), backbone, branches)
                    per_seq = T.reshape(
                        flat, (len(batch), hp.t, dims.m, flat.shape[-1]))
                    f0 = T.transpose(per_seq, (0, 3, 1, 2))  # (s, 8c, t, m)
                layers = stgcn_from(entries, depth)
                head = head_from(entries, dims.m)
                p_hat = stgcn_forward(f0, graph, layers, head,
                                      expected_layers=depth)
                loss = au_detection_loss(p_hat, targets, weights)
            value = float(loss.data)
            if math.isnan(value):
                raise NumericalError(
                    f"NaN loss in relation stage at epoch {epoch} step {step_idx}"
                )
            tape.backward(loss)
            entries = sgd_step(entries, _collect_grads(tape, entries, trainable),
                               lr, state)
            log.append(("relation", epoch, step_idx, lr, value))
    return TrainResult(entries, log)
