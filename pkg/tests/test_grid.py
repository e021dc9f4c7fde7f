import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wavemap.grid import (
    FieldPair,
    GridError,
    GridSpec,
    TimeGrid,
    build_grid,
    build_mask,
    flatten_masked,
    mask_from_dict,
    mesh,
    parse_mask,
    scatter,
)


def test_closed_grid_includes_both_endpoints():
    g = GridSpec.box(-8, 8, 201)
    (x,) = build_grid(g)
    assert g.spacing[0] == pytest.approx(0.08)
    assert x[0] == -8 and x[-1] == 8


def test_periodic_grid_drops_right_endpoint():
    g = GridSpec.box(0, 2 * np.pi, 64, periodic=True)
    (x,) = build_grid(g)
    assert g.spacing[0] == pytest.approx(2 * np.pi / 64)
    assert x[-1] == pytest.approx(2 * np.pi - 2 * np.pi / 64)


def test_row_major_flattening():
    g = GridSpec.box(-4, 4, 64, dim=2)
    x1, x2 = mesh(g)
    assert g.size == 4096
    i, j = 5, 17
    assert x1.ravel()[i * 64 + j] == x1[i, j]
    assert x2.ravel()[i * 64 + j] == x2[i, j]


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(lower=(0.0,), upper=(0.0,), points=(10,)),
        dict(lower=(1.0,), upper=(0.0,), points=(10,)),
        dict(lower=(0.0,), upper=(1.0,), points=(1,)),
        dict(lower=(0.0, 0.0), upper=(1.0,), points=(10,)),
        dict(lower=(0.0,), upper=(np.inf,), points=(10,)),
    ],
)
def test_invalid_grids_are_rejected(kwargs):
    with pytest.raises(GridError):
        GridSpec(**kwargs)


def test_grid_dict_round_trip():
    g = GridSpec((-1.0, 0.0), (1.0, 3.0), (5, 7), periodic=True)
    assert GridSpec.from_dict(g.to_dict()) == g


def _point_index(g, point):
    coords = [c.ravel() for c in mesh(g)]
    dist = sum((c - p) ** 2 for c, p in zip(coords, point))
    return int(np.argmin(dist))


def test_disk_membership():
    g = GridSpec.box(-2 * np.pi, 2 * np.pi, 49, dim=2)
    m = parse_mask(f"disk:{2 * np.pi}", g)
    assert m.flags[_point_index(g, (0, 0))]
    assert not m.flags[_point_index(g, (2 * np.pi, 2 * np.pi))]


def test_disk_keeps_points_exactly_on_the_circle():
    g = GridSpec.box(-2, 2, 5, dim=2)
    m = build_mask(g, "disk", radius=2.0)
    assert m.flags[_point_index(g, (2, 0))]
    assert m.flags[_point_index(g, (0, -2))]


def test_disk_outside_box_is_rejected():
    with pytest.raises(GridError):
        build_mask(GridSpec.box(-1, 1, 11, dim=2), "disk", radius=2.0)


def test_lshape_membership():
    g = GridSpec.box(-4, 4, 33, dim=2)
    m = parse_mask("lshape", g)
    assert m.flags[_point_index(g, (-1, -1))]
    assert not m.flags[_point_index(g, (2, 2))]
    assert m.flags[_point_index(g, (2, -2))]


def test_full_mask_is_all_true():
    g = GridSpec.box(-1, 1, 9, dim=2)
    assert parse_mask("full", g).flags.all()


@pytest.mark.parametrize("text", ["square", "disk:x", "full:3", "lshape:1"])
def test_unparseable_masks(text):
    with pytest.raises((GridError, ValueError)):
        parse_mask(text, GridSpec.box(-1, 1, 9, dim=2))


def test_mask_dict_round_trip():
    g = GridSpec.box(-3, 3, 31, dim=2)
    for text in ("full", "disk:2.5", "lshape"):
        m = parse_mask(text, g)
        again = mask_from_dict(g, m.to_dict())
        assert np.array_equal(again.flags, m.flags)


def test_flatten_full_is_identity_and_counts():
    g = GridSpec.box(-1, 1, 7, dim=2)
    f = np.arange(49.0).reshape(7, 7)
    assert np.array_equal(flatten_masked(f, parse_mask("full", g)), f.ravel())
    m = parse_mask("lshape", g)
    assert flatten_masked(f, m).shape == (m.count,)
    assert np.array_equal(scatter(flatten_masked(f, parse_mask("full", g)), parse_mask("full", g), f.shape), f)


def test_flatten_rejects_wrong_size():
    g = GridSpec.box(-1, 1, 7)
    with pytest.raises(GridError):
        flatten_masked(np.zeros(8), parse_mask("full", g))
    with pytest.raises(GridError):
        scatter(np.zeros(3), parse_mask("full", g))


@given(
    n=st.integers(5, 25),
    kind=st.sampled_from(["full", "disk", "lshape"]),
    seed=st.integers(0, 2**32 - 1),
)
def test_scatter_flatten_round_trips(n, kind, seed):
    g = GridSpec.box(-1, 1, n, dim=2)
    m = build_mask(g, kind, radius=0.9) if kind == "disk" else build_mask(g, kind)
    rng = np.random.default_rng(seed)
    dense = rng.normal(size=m.count)
    assert np.array_equal(flatten_masked(scatter(dense, m), m), dense)
    field = scatter(dense, m, g.shape)
    assert np.array_equal(scatter(flatten_masked(field, m), m, g.shape), field)
    assert np.all(field.ravel()[~m.flags] == 0)


@given(n=st.sampled_from([5, 9, 21, 33]))
def test_centered_disk_is_reflection_symmetric(n):
    g = GridSpec.box(-1, 1, n, dim=2)
    f = build_mask(g, "disk", radius=0.77).flags.reshape(n, n)
    assert np.array_equal(f, f[::-1, :])
    assert np.array_equal(f, f[:, ::-1])
    assert np.array_equal(f, f.T)


def test_time_grid():
    tg = TimeGrid(0.0, 1.0, 100)
    assert tg.dt == pytest.approx(0.01)
    assert tg.step_index(0.37) == 37
    with pytest.raises(GridError):
        tg.step_index(0.375)
    with pytest.raises(GridError):
        TimeGrid(1.0, 1.0, 3)


def test_field_pair_complex_round_trip():
    u = np.array([1 + 2j, -3j, 0.5])
    pair = FieldPair.from_complex(u)
    assert np.array_equal(pair.to_complex(), u)
    m = parse_mask("full", GridSpec.box(0, 1, 3))
    assert np.array_equal(pair.masked_row(m), [1, 0, 0.5, 2, -3, 0])
