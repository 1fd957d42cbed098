import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lkgp import (
    DuplicateObservation,
    EmptyMask,
    IndexOutOfGrid,
    ObservationMask,
    ParseError,
    ShapeMismatch,
    Truncation,
    Uniform,
    build_partial_grid,
    generate_mask,
    load_csv,
    project,
    save_csv,
    standardize,
    unproject,
)


def test_build_partial_grid_example_from_figure():
    cells = [(1, 2), (0, 0), (1, 0), (0, 1), (1, 1)]
    y = [12.0, 0.0, 10.0, 1.0, 11.0]
    g = build_partial_grid(np.zeros((2, 1)), np.zeros((3, 1)), cells, y)
    assert g.mask.observed.tolist() == [0, 1, 3, 4, 5]
    assert g.mask.missing_ratio == pytest.approx(1 / 6)
    # y permuted together with the cells
    assert g.y.tolist() == [0.0, 1.0, 10.0, 11.0, 12.0]


def test_full_grid_has_zero_missing_ratio():
    cells = [(j, k) for j in range(2) for k in range(2)]
    g = build_partial_grid(np.arange(2.0), np.arange(2.0), cells, np.ones(4))
    assert g.mask.observed.tolist() == [0, 1, 2, 3]
    assert g.mask.missing_ratio == 0.0


def test_single_corner_cell():
    g = build_partial_grid(np.arange(3.0), np.arange(3.0), [(2, 2)], [1.0])
    assert g.mask.observed.tolist() == [8]
    assert g.mask.missing_ratio == pytest.approx(8 / 9)


@pytest.mark.parametrize(
    "cells, y, exc",
    [
        ([(0, 0), (0, 0)], [1.0, 2.0], DuplicateObservation),
        ([(0, 3)], [1.0], IndexOutOfGrid),
        ([(-1, 0)], [1.0], IndexOutOfGrid),
        ([(0, 0), (1, 1)], [1.0], ShapeMismatch),
    ],
)
def test_build_partial_grid_errors(cells, y, exc):
    with pytest.raises(exc):
        build_partial_grid(np.zeros(2), np.zeros(3), cells, y)


def test_mask_rejects_empty_and_unsorted():
    with pytest.raises(EmptyMask):
        ObservationMask(2, 2, [])
    with pytest.raises(ValueError):
        ObservationMask(2, 2, [2, 1])
    with pytest.raises(DuplicateObservation):
        ObservationMask(2, 2, [1, 1])
    with pytest.raises(IndexOutOfGrid):
        ObservationMask(2, 2, [4])


def test_mask_json_round_trip():
    m = ObservationMask(3, 4, [0, 5, 11])
    d = json.loads(m.to_json())
    assert d == {"p": 3, "q": 4, "observed": [0, 5, 11]}
    assert ObservationMask.from_json(m.to_json()) == m


def test_uniform_mask_zero_ratio_is_full():
    m = generate_mask(4, 5, Uniform(0.0), seed=3)
    assert m == ObservationMask.full(4, 5)


def test_uniform_mask_count():
    m = generate_mask(5000, 7, Uniform(0.3), seed=0)
    assert m.count == 24500


def test_uniform_mask_reproducible():
    a = generate_mask(40, 9, Uniform(0.37), seed=11)
    b = generate_mask(40, 9, Uniform(0.37), seed=11)
    c = generate_mask(40, 9, Uniform(0.37), seed=12)
    assert a == b
    assert a != c


def test_uniform_mask_empty():
    with pytest.raises(EmptyMask):
        generate_mask(3, 3, Uniform(1.0), seed=0)
    with pytest.raises(EmptyMask):
        generate_mask(1, 1, Uniform(0.8), seed=0)


def test_truncation_rows():
    m = generate_mask(4, 52, Truncation(0.25), seed=5)
    obs = m.as_bool()
    lengths = obs.sum(axis=1)
    assert (lengths == 52).sum() == 1
    assert ((lengths >= 1) & (lengths < 52)).sum() == 3


@settings(max_examples=50, deadline=None)
@given(p=st.integers(1, 30), q=st.integers(1, 20), frac=st.floats(0, 1), seed=st.integers(0, 2**31))
def test_truncation_rows_are_prefixes(p, q, frac, seed):
    obs = generate_mask(p, q, Truncation(frac), seed=seed).as_bool()
    lengths = obs.sum(axis=1)
    assert np.all(lengths >= 1)
    for row, m in zip(obs, lengths):
        assert row[:m].all() and not row[m:].any()


@settings(max_examples=50, deadline=None)
@given(p=st.integers(1, 12), q=st.integers(1, 12), data=st.data())
def test_project_unproject_identity(p, q, data):
    observed = data.draw(st.sets(st.integers(0, p * q - 1), min_size=1))
    mask = ObservationMask(p, q, sorted(observed))
    v = np.arange(1.0, mask.count + 1)
    full = unproject(mask, v)
    np.testing.assert_array_equal(project(mask, full), v)
    assert np.count_nonzero(full) == mask.count


def test_standardize_constant_vector():
    y_std, st_ = standardize([1.0, 1.0, 1.0])
    assert st_.scale == 1e-12
    np.testing.assert_array_equal(y_std, 0.0)


def test_standardize_population_divisor():
    y_std, st_ = standardize([0.0, 2.0])
    assert st_.mean == 1.0
    assert st_.scale == 1.0
    np.testing.assert_array_equal(y_std, [-1.0, 1.0])


@settings(max_examples=50)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_standardize_round_trip(values):
    y = np.array(values)
    y_std, st_ = standardize(y)
    np.testing.assert_allclose(st_.invert(y_std), y, rtol=1e-12, atol=1e-9)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    S = rng.uniform(size=(4, 2))
    T = np.arange(3.0)
    cells = [(0, 0), (0, 1), (1, 0), (2, 2), (3, 0), (3, 1), (3, 2)]
    g = build_partial_grid(S, T, cells, rng.standard_normal(len(cells)))
    path = tmp_path / "d.csv"
    save_csv(path, g)
    back = load_csv(path)
    np.testing.assert_array_equal(back.s_points, g.s_points)
    np.testing.assert_array_equal(back.y, g.y)
    assert back.mask == g.mask


def test_csv_first_appearance_order(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("s:x,t:day,y\n5.0,2,1.5\n1.0,2,2.5\n5.0,1,3.5\n")
    g = load_csv(path)
    assert g.s_points[:, 0].tolist() == [5.0, 1.0]
    assert g.t_points[:, 0].tolist() == [2.0, 1.0]
    assert g.mask.observed.tolist() == [0, 1, 2]
    assert g.y.tolist() == [1.5, 3.5, 2.5]


def test_csv_duplicate_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("s:x,t:day,y\n1,2,1\n1,2,3\n")
    with pytest.raises(DuplicateObservation):
        load_csv(path)


def test_csv_parse_error_reports_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("s:x,t:day,y\n1,2,1\n1,3,abc\n")
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.row == 3
