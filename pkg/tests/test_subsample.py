import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepbf.beamform import TimeAlignedCube
from deepbf.subsample import STANDARD_RATES, apply_mask, make_mask, read_mask, write_mask


def test_full_rate_keeps_everything():
    m = make_mask("variable", 64, 64, 10, 0)
    assert m.keep.all()


@pytest.mark.parametrize("scheme", ["variable", "fixed"])
@pytest.mark.parametrize("n_keep", STANDARD_RATES)
def test_cardinality_and_centre(scheme, n_keep):
    m = make_mask(scheme, n_keep, 64, 50, seed=n_keep)
    planes = m.planes(50)
    assert np.all(planes.sum(axis=1) == n_keep)
    assert np.all(planes[:, 31]) and np.all(planes[:, 32])


def test_fixed_scheme_same_every_plane():
    planes = make_mask("fixed", 8, 64, 40, 3).planes(40)
    assert np.all(planes == planes[0])


def test_variable_scheme_changes_between_planes():
    planes = make_mask("variable", 8, 64, 40, 3).planes(40)
    assert len({row.tobytes() for row in planes}) > 1


def test_mask_deterministic():
    a = make_mask("variable", 16, 64, 30, 11)
    b = make_mask("variable", 16, 64, 30, 11)
    assert np.array_equal(a.keep, b.keep)


@pytest.mark.parametrize("n_keep", [1, 65])
def test_rate_bounds(n_keep):
    with pytest.raises(ValueError):
        make_mask("variable", n_keep, 64, 10, 0)


def test_unknown_scheme():
    with pytest.raises(ValueError):
        make_mask("random", 8, 64, 10, 0)


def test_uniform_draw_of_remaining_channels():
    # every non-centre channel should be picked about (n_keep-2)/(J-2) of the time
    planes = make_mask("variable", 10, 64, 20000, 5).planes(20000)
    freq = np.delete(planes.mean(axis=0), [31, 32])
    assert np.abs(freq - 8 / 62).max() < 0.01


def test_apply_mask_examples():
    cube = TimeAlignedCube(np.ones((3, 64, 7)))
    assert np.array_equal(apply_mask(cube, make_mask("fixed", 64, 64, 7, 0)).data, cube.data)
    centre = apply_mask(cube, make_mask("variable", 2, 64, 7, 0)).data
    np.testing.assert_array_equal(centre.sum(axis=1), 2.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 16), st.sampled_from(["variable", "fixed"]), st.integers(0, 2**31))
def test_apply_mask_zeroes_and_idempotent(n_keep, scheme, seed):
    rng = np.random.default_rng(seed)
    cube = TimeAlignedCube(rng.standard_normal((2, 16, 9)) + 5.0)
    mask = make_mask(scheme, n_keep, 16, 9, seed)
    once = apply_mask(cube, mask)
    keep = mask.planes(9).T[None]
    assert np.all(once.data[~np.broadcast_to(keep, once.shape)] == 0)
    assert np.array_equal(apply_mask(once, mask).data, once.data)


def test_apply_mask_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_mask(TimeAlignedCube(np.ones((1, 32, 5))), make_mask("fixed", 4, 64, 5, 0))


@pytest.mark.parametrize("scheme", ["variable", "fixed"])
def test_mask_text_round_trip(tmp_path, scheme):
    m = make_mask(scheme, 8, 64, 12, 4)
    path = tmp_path / "mask.txt"
    write_mask(m, path)
    lines = path.read_text().splitlines()
    assert all(len(l) == 64 and set(l) <= {"0", "1"} for l in lines)
    back = read_mask(path, scheme)
    assert np.array_equal(back.keep, m.keep) and back.n_keep == 8
