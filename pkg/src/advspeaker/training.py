"""Training loops: standard classification and the adversarial-training
family (FGSM-AT, PGD-AT, FS-AT, hybrid HAT).

Every adversarial variant is the same loop with different loss weights for
the inner maximization: each minibatch first generates adversaries by
iterated sign-gradient ascent on the configured objective, then the model
minimizes w1*CE(clean) + w2*CE(adversarial) with SGD momentum. Standard
training skips the inner step and minimizes CE(clean) only.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .attacks import AttackSpec, LossWeights, generate, model_forward_fn
from .autodiff import NonFiniteError, Value
from .data import Corpus, batch_iter
from .losses import SinkhornSettings, ce_loss
from .model import ModelParams, forward_logits, save_checkpoint

DEFENSE_KINDS = ("standard", "fgsm_at", "pgd_at", "fs_at", "hat")

PAPER_LR_SCHEDULE = ((60, 0.1), (90, 0.01), (200, 0.001))


def default_train_attack() -> AttackSpec:
    return AttackSpec(LossWeights(1, 1, 1), epsilon=0.002, alpha=0.002 / 5,
                      iterations=10, random_init=True, margin=50.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    lr_schedule: tuple[tuple[int, float], ...] = PAPER_LR_SCHEDULE
    momentum: float = 0.9
    w1: float = 1.0
    w2: float = 1.0
    defense: str = "standard"
    attack: AttackSpec = field(default_factory=default_train_attack)
    sinkhorn: SinkhornSettings = field(default_factory=SinkhornSettings)
    segment_length: int = 48000
    checkpoint_every: int = 0  # 0: only at the end

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.defense not in DEFENSE_KINDS:
            raise ValueError(f"defense must be one of {DEFENSE_KINDS}, got {self.defense!r}")
        if not self.lr_schedule or any(lr <= 0 for _, lr in self.lr_schedule):
            raise ValueError("lr_schedule must be nonempty with positive rates")
        thresholds = [t for t, _ in self.lr_schedule]
        if thresholds != sorted(thresholds):
            raise ValueError("lr_schedule thresholds must be ascending")


def lr_at(schedule, epoch: int) -> float:
    """Piecewise-constant rate: the first entry whose threshold covers the epoch."""
    if epoch < 1:
        raise ValueError("epoch must be >= 1")
    for threshold, rate in schedule:
        if epoch <= threshold:
            return float(rate)
    return float(schedule[-1][1])


def attack_spec_for_defense(defense: str, base: AttackSpec) -> AttackSpec | None:
    """Resolve the per-defense inner objective from the configured template."""
    if defense == "standard":
        return None
    if defense == "fgsm_at":
        return replace(base, weights=LossWeights(1, 0, 0), iterations=1,
                       alpha=base.epsilon, random_init=False)
    if defense == "pgd_at":
        return replace(base, weights=LossWeights(1, 0, 0))
    if defense == "fs_at":
        return replace(base, weights=LossWeights(0, 1, 0))
    if defense == "hat":
        return base
    raise ValueError(f"unknown defense {defense!r}")


def sgd_momentum_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                        velocity: dict[str, np.ndarray], lr: float,
                        momentum: float) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """v' = momentum*v + g; theta' = theta - lr*v'."""
    new_params, new_velocity = {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ad.ShapeError("sgd_momentum_update", f"{name}: grad {g.shape} vs param {theta.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"sgd_momentum_update: non-finite gradient for {name}")
        v = momentum * velocity.get(name, np.zeros_like(theta)) + g
        new_velocity[name] = v
        new_params[name] = theta - lr * v
    return new_params, new_velocity


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    clean_loss: float
    adv_loss: float | None
    train_accuracy: float
    wall_time_s: float
    defense: str
    attack_weights: tuple[float, float, float] | None
    epsilon: float | None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch, "lr": self.lr, "clean_loss": self.clean_loss,
            "adv_loss": self.adv_loss, "train_accuracy": self.train_accuracy,
            "wall_time_s": self.wall_time_s, "defense": self.defense,
            "attack_weights": list(self.attack_weights) if self.attack_weights else None,
            "epsilon": self.epsilon,
        }

    def stable_dict(self) -> dict:
        d = self.to_dict()
        d.pop("wall_time_s")
        return d


def train_epoch(params: ModelParams, velocity: dict[str, np.ndarray],
                corpus: Corpus, config: TrainConfig, *, epoch: int,
                seed: int) -> EpochRecord:
    """One pass over the train split; mutates params and velocity in place.

    Aborts atomically (parameters, running stats and velocity restored) if
    any batch produces a non-finite loss or gradient.
    """
    spec = attack_spec_for_defense(config.defense, config.attack)
    lr = lr_at(config.lr_schedule, epoch)
    snapshot = params.copy_state()
    velocity_snapshot = {k: v.copy() for k, v in velocity.items()}
    started = time.perf_counter()

    clean_losses, adv_losses = [], []
    correct = total = 0
    try:
        batches = batch_iter(corpus, config.batch_size, config.segment_length,
                             seed=seed, epoch=epoch, split="train", train=True)
        for batch_index, (x, y) in enumerate(batches):
            if spec is not None:
                adv = generate(model_forward_fn(params), x, y, spec,
                               mode="attack", seed=_batch_seed(seed, epoch, batch_index),
                               sinkhorn=config.sinkhorn)
                assert adv.linf <= spec.epsilon + 1e-12
                x_adv = adv.x_adv
            else:
                x_adv = None

            param_values = params.trainable_values()
            logits_clean = forward_logits(params, Value(x), mode="train",
                                          param_values=param_values)
            loss_clean = ce_loss(logits_clean, y)
            if x_adv is not None:
                logits_adv = forward_logits(params, Value(x_adv), mode="train",
                                            param_values=param_values)
                loss_adv = ce_loss(logits_adv, y)
                loss = config.w1 * loss_clean + config.w2 * loss_adv
                adv_losses.append(float(loss_adv.data))
            else:
                loss = loss_clean
            if not np.isfinite(loss.data).all():
                raise NonFiniteError(f"non-finite loss in epoch {epoch}, batch {batch_index}")
            ad.backward(loss)

            grads = {name: pv.grad for name, pv in param_values.items()}
            params.arrays, new_velocity = sgd_momentum_update(
                params.arrays, grads, velocity, lr, config.momentum)
            velocity.clear()
            velocity.update(new_velocity)

            clean_losses.append(float(loss_clean.data))
            preds = np.argmax(logits_clean.data, axis=1)
            correct += int((preds == y).sum())
            total += len(y)
    except NonFiniteError:
        params.restore_state(snapshot)
        velocity.clear()
        velocity.update(velocity_snapshot)
        raise

    return EpochRecord(
        epoch=epoch, lr=lr, clean_loss=float(np.mean(clean_losses)),
        adv_loss=float(np.mean(adv_losses)) if adv_losses else None,
        train_accuracy=100.0 * correct / total,
        wall_time_s=time.perf_counter() - started,
        defense=config.defense,
        attack_weights=spec.weights.as_tuple() if spec else None,
        epsilon=spec.epsilon if spec else None,
    )


def _batch_seed(seed: int, epoch: int, batch_index: int) -> tuple[int, int, int, int]:
    return (seed, epoch, batch_index, 0xA77A)


def fit(params: ModelParams, corpus: Corpus, config: TrainConfig, *, seed: int,
        out_dir=None, config_fingerprint: str = "", start_epoch: int = 1,
        velocity: dict[str, np.ndarray] | None = None,
        log_hook=None) -> list[EpochRecord]:
    """Run epochs start_epoch..config.epochs; optionally persist artifacts.

    With an out_dir, appends one JSON line per epoch to trainlog.jsonl and
    writes checkpoint.npz (including optimizer state, so a reloaded
    checkpoint continues bit-identically to an uninterrupted run).
    """
    velocity = velocity if velocity is not None else {}
    records: list[EpochRecord] = []
    log_path = None
    if out_dir is not None:
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "trainlog.jsonl"

    def checkpoint(epoch: int) -> None:
        if out_dir is None:
            return
        save_checkpoint(out_dir / "checkpoint.npz", params,
                        config_fingerprint=config_fingerprint,
                        corpus_fingerprint=corpus.fingerprint,
                        epoch=epoch, velocity=velocity,
                        extra={"defense": config.defense, "seed": seed})

    for epoch in range(start_epoch, config.epochs + 1):
        record = train_epoch(params, velocity, corpus, config, epoch=epoch, seed=seed)
        records.append(record)
        if log_path is not None:
            payload = dict(record.to_dict(), config_fingerprint=config_fingerprint,
                           corpus_fingerprint=corpus.fingerprint, seed=seed)
            with open(log_path, "a") as fh:
                fh.write(json.dumps(payload, sort_keys=True) + "\n")
        if log_hook is not None:
            log_hook(record)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            checkpoint(epoch)
    checkpoint(config.epochs)
    return records
