"""Inference drivers: per-window prediction and recursive window chaining.

Time-decomposed evaluation predicts every window from its own (ground-truth)
initial condition.  Recursive rollout instead seeds each window with the
final predicted point of the previous one, converted back to physical space
and re-encoded, so errors can compound across windows; a per-window report
makes that compounding visible.  Window lengths may vary, which gives the
adaptive mode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .metrics import rel_l2
from .tensor import NumericsError

__all__ = [
    "RolloutPlan",
    "RolloutError",
    "WindowReport",
    "RolloutResult",
    "predict_windows",
    "recursive_rollout",
    "latent_recursive_rollout",
]

logger = logging.getLogger(__name__)


class RolloutError(RuntimeError):
    """A window prediction went non-finite; ``window_index`` names it."""

    def __init__(self, message: str, window_index: int):
        super().__init__(message)
        self.window_index = window_index


@dataclass(frozen=True)
class RolloutPlan:
    """Ordered window lengths; fixed-step rollout is just equal lengths."""

    windows: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        if not self.windows:
            raise ValueError("plan needs at least one window")
        if any(w < 2 for w in self.windows):
            raise ValueError("every window must cover at least 2 points")

    @property
    def total(self) -> int:
        return sum(self.windows)

    @property
    def starts(self) -> tuple[int, ...]:
        """Source-time index of each window start (windows share a boundary)."""
        out = [0]
        for w in self.windows[:-1]:
            out.append(out[-1] + w - 1)
        return tuple(out)


def predict_windows(ics: np.ndarray, model, width: int) -> np.ndarray:
    """Run the model on a batch of encoded initial conditions ``[n, d]``.

    Returns normalized predictions ``[n, width, out_dim]``; ``width`` = 1 is
    allowed and gives the model output at the IC time alone.
    """
    ics = np.asarray(ics, dtype=np.float64)
    if ics.ndim != 2:
        raise ValueError(f"expected [n, d] initial conditions, got {ics.shape}")
    if width < 1:
        raise ValueError("width must be >= 1")
    return model.predict_norm(ics, width)


@dataclass
class WindowReport:
    index: int
    length: int
    start: int
    seed_jump: float
    flagged: bool
    rel_l2: float | None = None


@dataclass
class RolloutResult:
    values_norm: np.ndarray       # [total, out_dim]
    values: np.ndarray            # [total, p] physical
    reports: list[WindowReport] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.values.shape[0]


def _window_error(pred_phys: np.ndarray, truth_win: np.ndarray) -> float:
    report = rel_l2(pred_phys[None], truth_win[None])
    return float(report.overall)


def recursive_rollout(
    ic0: np.ndarray,
    model,
    plan: RolloutPlan,
    truth: np.ndarray | None = None,
    teacher_forcing: bool = False,
    jump_threshold: float = np.inf,
) -> RolloutResult:
    """Chain window predictions from one encoded initial condition ``[d]``.

    Window ``i+1`` is seeded by the final physical point of window ``i``
    (or, with ``teacher_forcing``, by the ground-truth point at that source
    index).  ``truth`` is the physical source trajectory ``[t, p]``; it is
    required for teacher forcing and enables per-window errors otherwise.
    Outputs are the normalized and physical predictions concatenated over
    windows, ``plan.total`` points long.
    """
    ic0 = np.asarray(ic0, dtype=np.float64)
    if ic0.ndim != 1:
        raise ValueError(f"expected a single encoded IC [d], got shape {ic0.shape}")
    if teacher_forcing and truth is None:
        raise ValueError("teacher forcing needs the ground-truth trajectory")
    starts = plan.starts
    if truth is not None:
        need = starts[-1] + plan.windows[-1]
        if truth.ndim != 2 or truth.shape[0] < need:
            raise ValueError(
                f"truth must be [t >= {need}, p], got {None if truth is None else truth.shape}"
            )

    norm_parts = []
    phys_parts = []
    reports = []
    codes = ic0[None, :]
    prev_last_phys = None
    for i, w in enumerate(plan.windows):
        try:
            pred_norm = model.predict_norm(codes, w)
            if not np.all(np.isfinite(pred_norm)):
                raise NumericsError("non-finite prediction")
            pred_phys = model.decode_norm(pred_norm)
        except NumericsError as exc:
            raise RolloutError(f"rollout failed in window {i}: {exc}", i) from exc
        norm_parts.append(pred_norm[0])
        phys_parts.append(pred_phys[0])

        if prev_last_phys is None:
            jump = 0.0
        else:
            jump = float(np.max(np.abs(pred_phys[0, 0] - prev_last_phys)))
        flagged = jump > jump_threshold
        if flagged:
            logger.info("window %d seam jump %.3e exceeds %.3e", i, jump, jump_threshold)
        err = None
        if truth is not None:
            err = _window_error(pred_phys[0], truth[starts[i]:starts[i] + w])
        reports.append(WindowReport(index=i, length=w, start=starts[i],
                                    seed_jump=jump, flagged=flagged, rel_l2=err))

        if i + 1 < len(plan.windows):
            if teacher_forcing:
                seed_phys = truth[starts[i + 1]]
            else:
                seed_phys = pred_phys[0, -1]
            prev_last_phys = seed_phys
            codes = model.ic_codes(seed_phys[None, :])
    return RolloutResult(
        values_norm=np.concatenate(norm_parts, axis=0),
        values=np.concatenate(phys_parts, axis=0),
        reports=reports,
    )


def latent_recursive_rollout(ic0, model, plan: RolloutPlan, **kwargs) -> RolloutResult:
    """Recursive rollout for a latent-input model.

    The chaining in :func:`recursive_rollout` already projects each seed
    through the model's basis; this wrapper just insists the model has one.
    """
    if model.pca is None:
        raise ValueError("model has no latent basis; use recursive_rollout")
    return recursive_rollout(ic0, model, plan, **kwargs)
