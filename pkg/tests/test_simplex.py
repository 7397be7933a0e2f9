"""Mass-fraction encoding checks: hand examples, bijection, error surfaces."""

import numpy as np
import pytest

from chemssm.simplex import (
    DegenerateFaceError,
    InvalidEncodingError,
    decode_species_block,
    encode_species_block,
    forward_map,
    inverse_map,
    species_encoded_names,
)


def test_hand_example_m3():
    y = np.array([0.2, 0.3, 0.5])
    z = forward_map(y)
    assert np.max(np.abs(z - [0.2 / 0.7, 0.3])) < 1e-14
    back = inverse_map(z)
    assert np.max(np.abs(back - y)) < 1e-14


def test_hand_example_m4():
    y = np.array([0.1, 0.2, 0.3, 0.4])
    z = forward_map(y)
    want = np.array([0.1 / 0.5, 0.2 / 0.6, 0.3])
    assert np.max(np.abs(z - want)) < 1e-14
    back = inverse_map(z)
    assert np.max(np.abs(back - y)) < 1e-14


def test_m2_is_identity_on_first_species():
    y = np.array([0.3, 0.7])
    z = forward_map(y)
    assert z.shape == (1,)
    assert z[0] == 0.3
    assert np.array_equal(inverse_map(z), [0.3, 0.7])


def sample_interior(rng, m, size):
    """Random compositions bounded away from the simplex faces."""
    y = rng.dirichlet(np.ones(m), size=size)
    return (y + 1e-3) / (1.0 + m * 1e-3)


def test_roundtrip_random_interior_points():
    rng = np.random.default_rng(41)
    for m in (2, 3, 11, 24):
        y = sample_interior(rng, m, 1000)
        z = forward_map(y)
        back = inverse_map(z)
        assert np.max(np.abs(back - y)) < 1e-12
        assert np.max(np.abs(back.sum(axis=-1) - 1.0)) < 1e-12


def test_ratio_identity_on_simplex():
    # z_k = y_k / (y_k + y_m) when the composition sums to one
    rng = np.random.default_rng(42)
    y = rng.dirichlet(np.ones(6), size=50)
    z = forward_map(y)
    want = y[:, :4] / (y[:, :4] + y[:, 5:6])
    assert np.max(np.abs(z[:, :4] - want)) < 1e-12


def test_forward_rejects_bad_compositions():
    with pytest.raises(ValueError):
        forward_map(np.array([0.5, 0.6]))  # sums to 1.1
    with pytest.raises(ValueError):
        forward_map(np.array([1.2, -0.2, 0.0]))
    with pytest.raises(ValueError):
        forward_map(np.array([1.0]))  # one species is not a composition


def test_degenerate_face_raises():
    y = np.array([1e-13, 1.0 - 2e-13, 1e-13])
    with pytest.raises(DegenerateFaceError):
        forward_map(y)


def test_invalid_encoding_raises():
    # a ratio above one puts negative mass on the last species
    with pytest.raises(InvalidEncodingError):
        inverse_map(np.array([1.5, 0.3]))
    # coinciding unit ratios make the linear system singular
    with pytest.raises(InvalidEncodingError):
        inverse_map(np.array([1.0, 1.0, 0.3]))


def test_batched_shapes():
    rng = np.random.default_rng(43)
    y = rng.dirichlet(np.ones(4), size=(5, 7))
    z = forward_map(y)
    assert z.shape == (5, 7, 3)
    assert np.max(np.abs(inverse_map(z) - y)) < 1e-12


def test_species_block_roundtrip():
    rng = np.random.default_rng(44)
    comp = rng.dirichlet(np.ones(3), size=(4, 6))
    temp = rng.uniform(600, 1800, size=(4, 6, 1))
    values = np.concatenate([temp, comp], axis=-1)
    variables = ["T", "f", "o", "p"]
    species = ["f", "o", "p"]

    enc, enc_names = encode_species_block(values, variables, species)
    assert enc_names == ["T", "z(f)", "z(o)"]
    assert enc.shape == (4, 6, 3)
    assert np.array_equal(enc[..., 0], values[..., 0])

    dec, dec_names = decode_species_block(enc, enc_names, species)
    assert dec_names == variables
    assert np.max(np.abs(dec - values)) < 1e-12


def test_species_block_name_validation():
    assert species_encoded_names(["a", "b"]) == ["z(a)"]
    with pytest.raises(ValueError):
        species_encoded_names(["solo"])
    with pytest.raises(ValueError):
        encode_species_block(np.zeros((2, 3)), ["T", "a"], ["a", "missing"])
    with pytest.raises(ValueError):
        decode_species_block(np.zeros((2, 2)), ["T", "q"], ["a", "b"])
