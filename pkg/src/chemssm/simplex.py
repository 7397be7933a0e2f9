"""Bijective encoding of mass-fraction vectors that bakes in conservation.

A composition ``y`` of ``m`` nonnegative species summing to one is encoded as
``m - 1`` ratios ``z``.  Any decoded vector sums to one exactly because the
last species is reconstructed as one minus the rest, so a model predicting in
``z`` space conserves mass by construction.

The forward map divides each of the first ``m - 2`` species by one minus the
mass of the *other* leading species; the last encoded component is the
``(m-1)``-th species itself.  Inversion solves a small linear system whose
right-hand side is ``1 - z_{m-1}`` in every row.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DegenerateFaceError",
    "InvalidEncodingError",
    "forward_map",
    "inverse_map",
    "encode_species_block",
    "decode_species_block",
    "species_encoded_names",
]

DENOM_FLOOR = 1e-12


class DegenerateFaceError(ValueError):
    """A ratio denominator vanished: one species holds almost all mass."""


class InvalidEncodingError(ValueError):
    """The encoded vector does not correspond to a point on the simplex."""


def forward_map(y: np.ndarray, sum_atol: float = 1e-8) -> np.ndarray:
    """Encode compositions ``[..., m]`` into ratio space ``[..., m-1]``."""
    y = np.asarray(y, dtype=np.float64)
    m = y.shape[-1]
    if m < 2:
        raise ValueError("need at least two species")
    total = y.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > sum_atol):
        worst = float(np.max(np.abs(total - 1.0)))
        raise ValueError(f"compositions must sum to 1 (worst deviation {worst:.3e})")
    if np.any(y < -sum_atol):
        raise ValueError("compositions must be nonnegative")
    lead = y[..., : m - 1]
    z = np.empty(y.shape[:-1] + (m - 1,), dtype=np.float64)
    if m > 2:
        s1 = lead.sum(axis=-1, keepdims=True)
        denom = 1.0 - (s1 - lead[..., : m - 2])
        if np.any(np.abs(denom) < DENOM_FLOOR):
            raise DegenerateFaceError(
                "ratio denominator below 1e-12; encoding is not invertible here"
            )
        z[..., : m - 2] = lead[..., : m - 2] / denom
    z[..., m - 2] = y[..., m - 2]
    return z


def inverse_map(z: np.ndarray) -> np.ndarray:
    """Decode ratio space ``[..., m-1]`` back to compositions ``[..., m]``.

    The output sums to one exactly; the decoded point is validated to lie on
    the simplex (up to 1e-9 slack on nonnegativity).
    """
    z = np.asarray(z, dtype=np.float64)
    q = z.shape[-1] - 1  # number of ratio components
    m = z.shape[-1] + 1
    y = np.empty(z.shape[:-1] + (m,), dtype=np.float64)
    if q > 0:
        a = np.repeat(z[..., None, :q], q, axis=-2)
        diag = np.arange(q)
        a[..., diag, diag] = 1.0
        rhs = np.broadcast_to(1.0 - z[..., q:q + 1], z.shape[:-1] + (q,)).copy()
        try:
            d = np.linalg.solve(a, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            raise InvalidEncodingError(f"singular ratio system: {e}") from e
        y[..., :q] = z[..., :q] * d
    y[..., m - 2] = z[..., m - 2]
    y[..., m - 1] = 1.0 - y[..., : m - 1].sum(axis=-1)
    if not np.all(np.isfinite(y)):
        raise InvalidEncodingError("non-finite decoded composition")
    if np.any(y < -1e-9):
        raise InvalidEncodingError("decoded composition has negative species mass")
    return y


def species_encoded_names(species: list[str]) -> list[str]:
    """Column names for the encoded block (one fewer than species)."""
    if len(species) < 2:
        raise ValueError("need at least two species")
    return [f"z({name})" for name in species[:-1]]


def _split_columns(variables: list[str], species: list[str]):
    idx = {name: i for i, name in enumerate(variables)}
    missing = [s for s in species if s not in idx]
    if missing:
        raise ValueError(f"species not in variables: {missing}")
    sp_idx = [idx[s] for s in species]
    other_idx = [i for i in range(len(variables)) if i not in set(sp_idx)]
    return sp_idx, other_idx


def encode_species_block(values: np.ndarray, variables: list[str], species: list[str]):
    """Replace the species columns of ``[..., p]`` with their ratio encoding.

    The encoded block sits where the first species column was; other columns
    keep their relative order.  Returns ``(new_values, new_variables)``.
    """
    sp_idx, _ = _split_columns(variables, species)
    z = forward_map(values[..., sp_idx])
    out_cols = []
    out_names = []
    enc_names = species_encoded_names(species)
    placed = False
    for i, name in enumerate(variables):
        if name in species:
            if not placed:
                out_cols.append(z)
                out_names.extend(enc_names)
                placed = True
            continue
        out_cols.append(values[..., i:i + 1])
        out_names.append(name)
    return np.concatenate(out_cols, axis=-1), out_names


def decode_species_block(values: np.ndarray, variables: list[str], species: list[str]):
    """Inverse of :func:`encode_species_block` on encoded columns.

    ``variables`` is the encoded naming as produced by the forward direction.
    """
    enc_names = species_encoded_names(species)
    idx = {name: i for i, name in enumerate(variables)}
    missing = [n for n in enc_names if n not in idx]
    if missing:
        raise ValueError(f"encoded columns not found: {missing}")
    z_idx = [idx[n] for n in enc_names]
    y = inverse_map(values[..., z_idx])
    out_cols = []
    out_names = []
    placed = False
    z_set = set(z_idx)
    for i, name in enumerate(variables):
        if i in z_set:
            if not placed:
                out_cols.append(y)
                out_names.extend(species)
                placed = True
            continue
        out_cols.append(values[..., i:i + 1])
        out_names.append(name)
    return np.concatenate(out_cols, axis=-1), out_names
