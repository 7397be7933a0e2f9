"""Surrogate model bundle: backbone plus everything needed to use it.

A trained backbone is useless without the normalization statistics and the
variant-specific encoding around it, so the bundle carries all of it:

* ``standalone``      - predicts every state variable directly;
* ``mass-conserving`` - species columns are ratio-encoded so any decoded
  composition sums to one exactly;
* ``latent``          - the input initial condition is PCA-projected to ``d``
  coordinates while outputs stay in the full state space.

``prepare_windows`` performs the full training-side data preparation (clamp,
variant encoding, windowing, stats fitting, tiling) and ``SurrogateModel``
exposes the matching inference transforms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .pca import PcaBasis, fit_pca, project
from .pipeline import (
    NormStats,
    WindowPlan,
    append_time_channel,
    clamp_nonneg,
    tile_initial,
    time_decompose,
)
from .simplex import decode_species_block, encode_species_block, inverse_map
from .ssm import BackboneParams, SsmConfig, backbone_forward, init_backbone
from .tensor import Tensor, no_grad

__all__ = [
    "VARIANTS",
    "ModelSpec",
    "PreparedWindows",
    "SurrogateModel",
    "prepare_windows",
    "build_model",
]

logger = logging.getLogger(__name__)

VARIANTS = ("standalone", "mass-conserving", "latent")

_ARCH_KEYS = {
    "d_model", "n_layers", "state_dim", "expand", "conv_width", "dt_rank",
    "norm", "discretization", "scan_mode", "dt_min", "dt_max",
}


@dataclass(frozen=True)
class ModelSpec:
    """Variant choice plus architecture knobs (dimensions are data-derived)."""

    variant: str = "standalone"
    exponent: float = 0.2
    latent_dim: int | None = None
    time_feature: bool = False
    arch: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}'; expected one of {VARIANTS}")
        extra = set(self.arch) - _ARCH_KEYS
        if extra:
            raise ValueError(f"unknown arch keys: {sorted(extra)}")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.latent_dim is not None and self.variant != "latent":
            raise ValueError("latent_dim only applies to the latent variant")

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "exponent": self.exponent,
            "latent_dim": self.latent_dim,
            "time_feature": self.time_feature,
            "arch": dict(self.arch),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        known = {"variant", "exponent", "latent_dim", "time_feature", "arch"}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown model keys: {sorted(extra)}")
        return cls(
            variant=obj.get("variant", "standalone"),
            exponent=float(obj.get("exponent", 0.2)),
            latent_dim=obj.get("latent_dim"),
            time_feature=bool(obj.get("time_feature", False)),
            arch=dict(obj.get("arch", {})),
        )


def _to_model_space(values: np.ndarray, variables: list[str], species: list[str],
                    variant: str):
    """Physical dataset columns -> the columns the backbone is trained on."""
    if variant == "mass-conserving":
        if len(species) < 2:
            raise ValueError("mass-conserving variant needs at least two species columns")
        return encode_species_block(values, variables, species)
    return values, list(variables)


def _clamp_ratio_columns(values: np.ndarray, names: list[str]) -> np.ndarray:
    """Clamp predicted ratio columns into the unit box before inversion.

    For ratios in [0, 1) the decoded composition provably lies on the
    simplex, so a trained model's overshoot cannot make decoding fail.
    """
    out = values.copy()
    for j, name in enumerate(names):
        if name.startswith("z("):
            col = out[..., j]
            n_clip = int(np.count_nonzero((col < 0.0) | (col > 1.0 - 1e-12)))
            if n_clip:
                logger.info("clamped %d ratio values in column %s", n_clip, name)
            out[..., j] = np.clip(col, 0.0, 1.0 - 1e-12)
    return out


def _from_model_space(values: np.ndarray, names: list[str], species: list[str],
                      variant: str):
    if variant == "mass-conserving":
        return decode_species_block(_clamp_ratio_columns(values, names), names, species)
    return values, list(names)


@dataclass
class PreparedWindows:
    """Training arrays plus the fitted transforms that produced them."""

    inputs: np.ndarray       # [n, w, in_dim] tiled network input
    targets: np.ndarray      # [n, w, out_dim] normalized trajectories
    ic_codes: np.ndarray     # [n, in_vec] pre-tiling input vectors
    stats: NormStats
    pca: PcaBasis | None
    model_variables: list[str]


def prepare_windows(values: np.ndarray, variables: list[str], species: list[str],
                    spec: ModelSpec, plan: WindowPlan) -> PreparedWindows:
    """Full training-side preparation of raw trajectories ``[n, t, p]``.

    Statistics (and the PCA basis for the latent variant) are fitted on the
    data passed here, so call this with the training split only.
    """
    raw = clamp_nonneg(np.asarray(values, dtype=np.float64))
    mvals, mvars = _to_model_space(raw, variables, species, spec.variant)
    windows = time_decompose(mvals, plan)
    stats = NormStats.fit(windows, mvars, spec.exponent)
    targets = stats.encode(windows, "trajectory")
    ic_codes = stats.encode(windows[:, 0, :], "initial")
    pca = None
    if spec.variant == "latent":
        d = spec.latent_dim if spec.latent_dim is not None else ic_codes.shape[1]
        pca = fit_pca(ic_codes, d)
        ic_codes = pca.latent_encode(project(ic_codes, pca))
    inputs = tile_initial(ic_codes, plan.width)
    if spec.time_feature:
        inputs = append_time_channel(inputs)
    return PreparedWindows(inputs=inputs, targets=targets, ic_codes=ic_codes,
                           stats=stats, pca=pca, model_variables=mvars)


@dataclass
class SurrogateModel:
    """Backbone parameters bundled with every transform needed to apply them."""

    spec: ModelSpec
    cfg: SsmConfig
    params: BackboneParams
    stats: NormStats
    variables: list[str]     # physical dataset column names
    species: list[str]
    pca: PcaBasis | None = None
    threshold: object = None # optional regime threshold carried by pair members
    window: WindowPlan | None = None
    seed: int = 0

    @property
    def model_variables(self) -> list[str]:
        return self.stats.variables

    def ic_codes(self, ics: np.ndarray) -> np.ndarray:
        """Physical initial conditions ``[n, p]`` -> network input vectors."""
        ics = clamp_nonneg(np.asarray(ics, dtype=np.float64))
        mvals, _ = _to_model_space(ics, self.variables, self.species, self.spec.variant)
        enc = self.stats.encode(mvals, "initial")
        if self.spec.variant == "latent":
            enc = self.pca.latent_encode(project(enc, self.pca))
        return enc

    def predict_norm(self, codes: np.ndarray, width: int) -> np.ndarray:
        """Tile input vectors ``[n, in_vec]`` and run the backbone."""
        x = tile_initial(np.asarray(codes, dtype=np.float64), width)
        if self.spec.time_feature:
            x = append_time_channel(x)
        if x.shape[2] != self.cfg.in_dim:
            raise ValueError(
                f"input vector length {x.shape[2]} != model in_dim {self.cfg.in_dim}"
            )
        with no_grad():
            return backbone_forward(Tensor(x), self.params, self.cfg).numpy()

    def decode_norm(self, pred: np.ndarray) -> np.ndarray:
        """Normalized predictions ``[..., out_dim]`` -> physical columns."""
        mvals = self.stats.decode(pred, "trajectory")
        values, _ = _from_model_space(mvals, self.model_variables, self.species,
                                      self.spec.variant)
        return values

    def predict_physical(self, ics: np.ndarray, width: int) -> np.ndarray:
        """Physical ICs ``[n, p]`` -> physical predictions ``[n, width, p]``."""
        return self.decode_norm(self.predict_norm(self.ic_codes(ics), width))


def build_model(prepared: PreparedWindows, spec: ModelSpec, variables: list[str],
                species: list[str], seed: int,
                window: WindowPlan | None = None) -> SurrogateModel:
    """Initialise a backbone sized to the prepared data."""
    cfg = SsmConfig(
        in_dim=prepared.inputs.shape[2],
        out_dim=prepared.targets.shape[2],
        **spec.arch,
    )
    params = init_backbone(cfg, seed)
    return SurrogateModel(spec=spec, cfg=cfg, params=params, stats=prepared.stats,
                          variables=list(variables), species=list(species),
                          pca=prepared.pca, window=window, seed=seed)
