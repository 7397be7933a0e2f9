"""MSE training loop: Adam, multiplicative LR schedules, batching, seeding.

The loop is deliberately plain: shuffle window-samples each epoch with the
run seed, walk minibatches, one Adam step per iteration.  Everything is
float64 and single-threaded-deterministic, so a rerun with the same seed
reproduces the loss curve and the parameters bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ssm import BackboneParams, SsmConfig, backbone_forward
from .tensor import NumericsError, Tensor

__all__ = [
    "Schedule",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "Adam",
    "mse_loss",
    "train_backbone",
]

logger = logging.getLogger(__name__)

_SCHEDULE_KINDS = ("constant", "linear", "step")


class TrainingDivergedError(RuntimeError):
    """Loss or an intermediate value went non-finite during training."""

    def __init__(self, message: str, iteration: int, batch_index: int):
        super().__init__(message)
        self.iteration = iteration
        self.batch_index = batch_index


@dataclass(frozen=True)
class Schedule:
    """Multiplicative learning-rate factor as a function of epoch.

    ``constant`` is factor 1.0 forever.  ``linear`` interpolates from 1.0 to
    ``final_factor`` over ``decay_epochs`` epochs and then holds.  ``step``
    multiplies by ``gamma`` every ``step_every`` epochs.
    """

    kind: str = "constant"
    decay_epochs: int = 100
    final_factor: float = 0.1
    step_every: int = 50
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in _SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind '{self.kind}'")
        if self.decay_epochs < 1 or self.step_every < 1:
            raise ValueError("schedule epoch counts must be >= 1")
        if self.final_factor <= 0.0 or self.gamma <= 0.0:
            raise ValueError("schedule factors must be positive")

    def factor(self, epoch: int) -> float:
        if self.kind == "constant":
            return 1.0
        if self.kind == "linear":
            frac = min(epoch / self.decay_epochs, 1.0)
            return 1.0 + (self.final_factor - 1.0) * frac
        return self.gamma ** (epoch // self.step_every)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "decay_epochs": self.decay_epochs,
            "final_factor": self.final_factor,
            "step_every": self.step_every,
            "gamma": self.gamma,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Schedule":
        known = {"kind", "decay_epochs", "final_factor", "step_every", "gamma"}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown schedule keys: {sorted(extra)}")
        return cls(**obj)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings.

    ``iterations`` counts optimizer steps, not epochs; an epoch is one pass
    over the shuffled window-samples and only matters to the schedule.
    """

    iterations: int
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    schedule: Schedule = field(default_factory=Schedule)
    checkpoint_every: int = 500
    log_every: int = 200

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr < 0.0:
            raise ValueError("lr must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps_adam <= 0.0:
            raise ValueError("eps_adam must be positive")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps_adam": self.eps_adam,
            "schedule": self.schedule.to_json(),
            "checkpoint_every": self.checkpoint_every,
            "log_every": self.log_every,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        sched = obj.pop("schedule", None)
        known = {
            "iterations", "lr", "batch_size", "seed", "beta1", "beta2",
            "eps_adam", "checkpoint_every", "log_every",
        }
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown training keys: {sorted(extra)}")
        kwargs = dict(obj)
        if sched is not None:
            kwargs["schedule"] = Schedule.from_json(sched)
        return cls(**kwargs)


class Adam:
    """Adam with bias correction; one moment pair per parameter tensor."""

    def __init__(self, tensors: list[Tensor], cfg: TrainConfig):
        self.tensors = list(tensors)
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.eps_adam
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]
        self.t = 0

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.tensors, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"prediction shape {pred.data.shape} != target shape {target.data.shape}"
        )
    d = pred - target
    return (d * d).mean()


@dataclass
class TrainResult:
    losses: np.ndarray
    lr_trace: np.ndarray
    epochs: int


def train_backbone(
    params: BackboneParams,
    cfg: SsmConfig,
    inputs: np.ndarray,
    targets: np.ndarray,
    tcfg: TrainConfig,
    checkpoint_fn=None,
) -> TrainResult:
    """Run the training loop in place on ``params``.

    ``inputs`` is ``[n, w, in_dim]`` (already tiled/normalized) and
    ``targets`` is ``[n, w, out_dim]``.  ``checkpoint_fn`` is called with the
    completed step count every ``checkpoint_every`` steps and at the end.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[2] != cfg.in_dim:
        raise ValueError(f"inputs shape {inputs.shape} does not match in_dim {cfg.in_dim}")
    if targets.ndim != 3 or targets.shape[2] != cfg.out_dim:
        raise ValueError(f"targets shape {targets.shape} does not match out_dim {cfg.out_dim}")
    if inputs.shape[:2] != targets.shape[:2]:
        raise ValueError("inputs and targets disagree on sample count or width")

    n = inputs.shape[0]
    bs = min(tcfg.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    rng = np.random.default_rng(tcfg.seed)
    opt = Adam(params.tensors(), tcfg)
    losses = np.empty(tcfg.iterations, dtype=np.float64)
    lr_trace = np.empty(tcfg.iterations, dtype=np.float64)

    order = np.empty(0, dtype=np.intp)
    epoch = -1
    for it in range(tcfg.iterations):
        pos = it % steps_per_epoch
        if pos == 0:
            epoch += 1
            order = rng.permutation(n)
        idx = order[pos * bs:pos * bs + bs]
        x = Tensor(inputs[idx])
        y = Tensor(targets[idx])
        lr = tcfg.lr * tcfg.schedule.factor(epoch)
        try:
            loss = mse_loss(backbone_forward(x, params, cfg), y)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericsError("loss is not finite")
            opt.zero_grad()
            loss.backward()
        except NumericsError as exc:
            raise TrainingDivergedError(
                f"training diverged at iteration {it}, batch {pos}: {exc}", it, pos
            ) from exc
        opt.step(lr)
        losses[it] = value
        lr_trace[it] = lr
        if tcfg.log_every and (it % tcfg.log_every == 0 or it == tcfg.iterations - 1):
            logger.info("iter %d epoch %d lr %.2e loss %.6e", it, epoch, lr, value)
        if checkpoint_fn is not None:
            done = it + 1
            if done % tcfg.checkpoint_every == 0 or done == tcfg.iterations:
                checkpoint_fn(done)
    return TrainResult(losses=losses, lr_trace=lr_trace, epochs=epoch + 1)
