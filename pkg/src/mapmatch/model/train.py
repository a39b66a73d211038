"""Training and component-masked fine-tuning loops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyMask, ValidationError
from ..trajgen import GpsTrajectory
from .optim import DEFAULT_BETAS, DEFAULT_EPS, AdamState, adam_step
from .params import COMPONENTS, ModelConfig, ModelParameters
from .transformer import loss_and_gradients, normalize

FULL_MASK = "full"


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    step: int
    loss: float


def encode_dataset(
    trajectories: list[GpsTrajectory],
    bounds: tuple[float, float, float, float],
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(normalized values, class labels) per trajectory; edge id e is class e+1."""
    dataset = []
    for traj in trajectories:
        if traj.truth is None:
            raise ValidationError(f"trajectory {traj.traj_id} has no truth labels")
        values = normalize(traj, bounds).values
        labels = np.asarray(traj.truth, dtype=np.int64) + 1
        dataset.append((values, labels))
    return dataset


def _pad_batch(items: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    longest = max(len(v) for v, _ in items)
    values = np.zeros((len(items), longest, 2))
    labels = np.zeros((len(items), longest), dtype=np.int64)
    for row, (v, l) in enumerate(items):
        values[row, : len(v)] = v
        labels[row, : len(l)] = l
    return values, labels


def train(
    params: ModelParameters,
    config: ModelConfig,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    trainable_tags: set[str] | None = None,
    betas: tuple[float, float] = DEFAULT_BETAS,
    eps: float = DEFAULT_EPS,
) -> tuple[ModelParameters, list[LossRecord]]:
    """Shuffled mini-batch training; updates params in place.

    With ``trainable_tags`` only tensors carrying one of those component
    tags receive updates; everything else stays bit-identical.
    """
    if not dataset:
        raise ValidationError("training dataset is empty")
    rng = np.random.default_rng(seed)
    state = AdamState()
    log: list[LossRecord] = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        step = 0
        for start in range(0, len(order), batch_size):
            batch = [dataset[i] for i in order[start : start + batch_size]]
            values, labels = _pad_batch(batch)
            loss, grads = loss_and_gradients(params, config, values, labels, train=True, rng=rng)
            if trainable_tags is not None:
                grads = {name: g for name, g in grads.items() if params.tags[name] in trainable_tags}
            adam_step(params, grads, state, lr=lr, betas=betas, eps=eps)
            log.append(LossRecord(epoch, step, loss))
            step += 1
    return params, log


def resolve_mask(mask) -> set[str]:
    """Component tag set for a fine-tuning mask spec.

    Accepts the string "full", a "+"-joined string like "output+norm", or an
    iterable of tag names.
    """
    if isinstance(mask, str):
        if mask.lower() == FULL_MASK:
            return set(COMPONENTS)
        parts = [m.strip() for m in mask.split("+") if m.strip()]
    else:
        parts = list(mask)
    if not parts:
        raise EmptyMask("fine-tuning mask selects no components")
    unknown = [m for m in parts if m not in COMPONENTS]
    if unknown:
        raise ValidationError(f"unknown components in mask: {unknown}")
    return set(parts)


def fine_tune(
    params: ModelParameters,
    config: ModelConfig,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    mask,
    *,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> tuple[ModelParameters, list[LossRecord]]:
    """Train only the components named by ``mask`` ("full" tunes everything)."""
    tags = resolve_mask(mask)
    return train(
        params,
        config,
        dataset,
        epochs=epochs,
        batch_size=batch_size,
        lr=lr,
        seed=seed,
        trainable_tags=tags,
    )
