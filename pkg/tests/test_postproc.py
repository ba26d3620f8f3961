import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepbf.postproc import (
    BModeImage,
    IQImage,
    envelope,
    hilbert_analytic,
    log_compress,
    read_pgm,
    write_pgm,
)


def dft_analytic_oracle(x):
    # O(N^2) DFT with the one-sided spectral weighting.
    N = len(x)
    n = np.arange(N)
    F = np.exp(-2j * np.pi * np.outer(n, n) / N)
    X = F @ x
    h = np.zeros(N)
    h[0] = 1
    h[1:(N + 1) // 2] = 2
    if N % 2 == 0:
        h[N // 2] = 1
    return (F.conj() @ (X * h)) / N


@pytest.mark.parametrize("N", [16, 17, 64, 101])
def test_hilbert_matches_dft_oracle(rng, N):
    x = rng.standard_normal(N)
    iq = hilbert_analytic(x[None])
    ref = dft_analytic_oracle(x)
    np.testing.assert_allclose(iq.q[0], ref.imag, atol=1e-10)
    np.testing.assert_array_equal(iq.i[0], x)


@pytest.mark.parametrize("k", [1, 5, 20, 31])
def test_pure_tone_has_unit_envelope(k):
    N = 64
    z = np.cos(2 * np.pi * k * np.arange(N) / N)[None]
    np.testing.assert_allclose(envelope(hilbert_analytic(z)), 1.0, atol=1e-5)


def test_zero_input():
    iq = hilbert_analytic(np.zeros((3, 10)))
    assert not iq.i.any() and not iq.q.any()


def test_short_input_rejected():
    with pytest.raises(ValueError):
        hilbert_analytic(np.zeros((2, 1)))


def test_envelope_examples():
    assert envelope(IQImage(np.array([[3.0]]), np.array([[4.0]])))[0, 0] == 5.0
    x = np.array([[-2.0, 1.5, 0.0]])
    np.testing.assert_array_equal(envelope(IQImage(x, np.zeros_like(x))), np.abs(x))


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_envelope_independent_of_carrier_phase(phi):
    n = np.arange(512)
    z = np.cos(2 * np.pi * 109 * n / 512 + phi)[None]
    env = envelope(hilbert_analytic(z))[0]
    np.testing.assert_allclose(env, 1.0, atol=1e-6)


def test_hilbert_is_projection(rng):
    z = rng.standard_normal((4, 128))
    first = hilbert_analytic(z)
    second = hilbert_analytic(first.i)
    np.testing.assert_allclose(second.q, first.q, atol=1e-4)


def test_log_compress_examples():
    env = np.array([[1.0, 10 ** (-60 / 20), 10 ** (-30 / 20), 0.0]])
    px = log_compress(env, 60.0).pixels
    assert px.tolist() == [[255, 0, 128, 0]]


def test_log_compress_rejects_zero_envelope():
    with pytest.raises(ValueError):
        log_compress(np.zeros((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=2, max_size=50))
def test_log_compress_monotone(values):
    env = np.array(values)[None]
    if env.max() == 0:
        return
    px = log_compress(env, 60.0).pixels[0].astype(int)
    order = np.argsort(env[0], kind="stable")
    assert np.all(np.diff(px[order]) >= 0)


def test_pgm_round_trip(tmp_path, rng):
    px = rng.integers(0, 256, (12, 30)).astype(np.uint8)
    path = tmp_path / "img.pgm"
    write_pgm(BModeImage(px), path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n12 30\n255\n")
    assert np.array_equal(read_pgm(path), px)


def test_bmode_validates():
    with pytest.raises(ValueError):
        BModeImage(np.array([[300]]))
    with pytest.raises(ValueError):
        BModeImage(np.zeros((2, 2)), dynamic_range_db=0)
