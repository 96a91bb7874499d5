import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgreen import (
    ConfigError,
    EmptyCoefficients,
    NonSymmetricMetric,
    NotElliptic,
    assemble_bloch,
    build_operator,
    catalog,
    load_operator,
    shift_and_flip,
    validate,
)
from pgreen.floquet import uniform_zone_grid
from pgreen.operator import CATALOG, FourierField, evaluate_field, field_product

COS_X1 = {"d": 3, "c": [{"G": [1, 0, 0], "re": 1.0}, {"G": [-1, 0, 0], "re": 1.0}]}

coords = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)
dyadic = st.integers(min_value=-64, max_value=64).map(lambda n: n / 32)
shifts = st.integers(min_value=-5, max_value=5)


def test_cosine_potential_at_origin():
    op = build_operator(COS_X1)
    assert evaluate_field(op.c, [0.0, 0.0, 0.0]) == pytest.approx(2.0, abs=1e-15)


@given(st.tuples(coords, coords, coords), st.tuples(shifts, shifts, shifts))
def test_field_periodic_to_rounding(x, gamma):
    op = build_operator(COS_X1)
    moved = np.add(x, gamma)
    assert evaluate_field(op.c, moved) == pytest.approx(evaluate_field(op.c, x), abs=1e-12)


@given(st.tuples(dyadic, dyadic, dyadic), st.tuples(shifts, shifts, shifts))
def test_field_periodic_bitwise_on_dyadic_points(x, gamma):
    op = catalog("weighted_laplacian")
    a = evaluate_field(op.a, x)
    b = evaluate_field(op.a, np.add(x, gamma))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_fields_real_on_grid(name):
    op = catalog(name)
    for field in (op.a, op.b, op.c):
        assert np.max(np.abs(field.sample_grid(7).imag)) < 1e-12


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_is_elliptic(name):
    report = validate(catalog(name))
    assert report.theta_estimate > 0
    assert report.is_real and report.is_symmetric


def test_validation_is_reproducible():
    op = catalog("weighted_laplacian")
    assert validate(op, 9).to_dict() == validate(op, 9).to_dict()


def test_weighted_metric_minimum():
    # 2 + cos(2 pi x1) has minimum 1, attained on the sample grid x1 = 1/2
    report = validate(catalog("weighted_laplacian"), 6)
    assert report.theta_estimate == pytest.approx(1.0, abs=1e-12)


def test_empty_field_is_rejected():
    with pytest.raises(EmptyCoefficients):
        build_operator({"d": 3, "c": []})


def test_non_symmetric_metric_strict():
    desc = {"d": 3, "a": [{"G": [0, 0, 0], "entry": [i, i], "re": 1.0} for i in range(3)]}
    desc["a"].append({"G": [0, 0, 0], "entry": [0, 1], "re": 0.2})
    with pytest.raises(NonSymmetricMetric):
        build_operator(desc, auto_symmetrize=False)
    with pytest.warns(UserWarning, match="symmetrized"):
        op = build_operator(desc)
    assert op.a.mean()[0, 1] == pytest.approx(0.1)
    assert op.a.mean()[1, 0] == pytest.approx(0.1)


def test_non_real_field_warns_and_is_symmetrized():
    desc = {"d": 3, "c": [{"G": [1, 0, 0], "re": 1.0}]}
    with pytest.warns(UserWarning, match="not real"):
        op = build_operator(desc)
    assert op.c.coefficient((1, 0, 0)) == pytest.approx(0.5)
    assert op.c.coefficient((-1, 0, 0)) == pytest.approx(0.5)


def test_negative_metric_not_elliptic():
    desc = {"d": 3, "a": [{"G": [0, 0, 0], "entry": [i, i], "re": -1.0} for i in range(3)]}
    with pytest.raises(NotElliptic):
        build_operator(desc)


@pytest.mark.parametrize(
    "desc",
    [
        {"c": []},
        {"d": 7},
        {"d": 3, "c": [{"G": [1, 0], "re": 1.0}]},
        {"d": 3, "c": [{"G": [0.5, 0, 0], "re": 1.0}]},
        {"d": 3, "a": [{"G": [0, 0, 0], "entry": [3, 0], "re": 1.0}]},
        {"d": 3, "c": "cos"},
        {"catalog": "nope"},
        {"catalog": "free_laplacian", "q": 2},
        {"d": 3, "shift": "high"},
    ],
)
def test_malformed_descriptions(desc):
    with pytest.raises(ConfigError):
        build_operator(desc)


def test_description_round_trip(tmp_path):
    op = shift_and_flip(catalog("magnetic", beta=0.3), 1.25, True)
    path = tmp_path / "op.json"
    path.write_text(json.dumps(op.to_description()))
    again = load_operator(path)
    assert again.sign == -1 and again.shift == pytest.approx(1.25)
    for mine, theirs in ((op.a, again.a), (op.b, again.b), (op.c, again.c)):
        assert np.allclose(mine.padded(2), theirs.padded(2), atol=1e-15)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_operator(tmp_path / "absent.json")


def test_vector_field_product_is_dot():
    d = 3
    a = FourierField.constant("matrix", d, 2 * np.eye(d))
    b = FourierField.constant("vector", d, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(field_product(a, b).mean(), [2.0, 4.0, 6.0])
    assert field_product(b, field_product(a, b)).mean() == pytest.approx(28.0)


@pytest.mark.parametrize("name", ["separable_schrodinger", "magnetic"])
def test_trivial_shift_is_identity(name):
    op = catalog(name)
    same = shift_and_flip(op, 0.0, False)
    for k in uniform_zone_grid(3, 3):
        a = np.linalg.eigvalsh(assemble_bloch(op, k, 1).entries)
        b = np.linalg.eigvalsh(assemble_bloch(same, k, 1).entries)
        assert np.array_equal(a, b)


def test_flip_maps_band_top_to_zero_minimum():
    # dense spectra on a 5^3 grid: the flipped fiber spectrum is -(lambda - shift)
    op = catalog("separable_schrodinger")
    ks = uniform_zone_grid(5, 3)
    spectra = np.array([np.linalg.eigvalsh(assemble_bloch(op, k, 1).entries) for k in ks])
    top = spectra[:, 0].max()
    flipped = shift_and_flip(op, top, True)
    for k, lam in zip(ks, spectra):
        mine = np.linalg.eigvalsh(assemble_bloch(flipped, k, 1).entries)
        assert np.allclose(np.sort(mine), np.sort(-(lam - top)), atol=1e-10)
    band1 = np.array([np.linalg.eigvalsh(assemble_bloch(flipped, k, 1).entries)[-1] for k in ks])
    assert band1.min() == pytest.approx(0.0, abs=1e-10)


def test_flip_keeps_theta_of_original_metric():
    op = catalog("weighted_laplacian")
    flipped = shift_and_flip(op, 0.3, True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert validate(flipped).theta_estimate == pytest.approx(validate(op).theta_estimate)
