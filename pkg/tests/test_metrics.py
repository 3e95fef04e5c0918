import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dclab.errors import InputError, NumericalError
from dclab.lattice import Lattice
from dclab.metrics import (
    PSNR_CAP, FrameWeightPattern, LossTerms, RdCurve, Yuv420Frame, bd_rate, bd_report_csv,
    chroma_down, chroma_up, curve_from_csv, curve_to_csv, frame_weight, macs_conv,
    macs_depthwise_separable, psnr, rd_loss, rgb_to_yuv, to_yuv420, to_yuv444,
    weighted_yuv_psnr, yuv420_weighted_psnr, yuv_to_rgb,
)

from oracles import bd_rate_trapezoid, conv_mults_bruteforce, separable_mults_bruteforce

ANCHOR = RdCurve([0.1, 0.2, 0.4, 0.8], [30.0, 33.0, 36.0, 39.0])


def test_frame_weight():
    p = FrameWeightPattern()
    assert frame_weight(p, 1) == 1.2 and frame_weight(p, 4) == 0.5
    assert all(frame_weight(FrameWeightPattern((1, 1, 1, 1)), t) == 1 for t in range(9))
    with pytest.raises(InputError):
        FrameWeightPattern((1.0, 0.0))


def test_rd_loss_substitution():
    assert rd_loss([LossTerms(100, 2, 85)], FrameWeightPattern((1.0,))) == 270
    assert rd_loss([LossTerms(10, 0, 85), LossTerms(30, 0, 85)]) == 20
    a = rd_loss([LossTerms(0, 3, 10), LossTerms(0, 5, 10)])
    b = rd_loss([LossTerms(0, 3, 20), LossTerms(0, 5, 20)])
    assert b == 2 * a
    assert rd_loss([LossTerms(1, 1, 1)] * 2, mode="sum") == 2 * rd_loss([LossTerms(1, 1, 1)] * 2)


@pytest.mark.parametrize("d0,d1", [(1.0, 2.0), (3.0, 3.0)])
def test_rd_loss_swap(d0, d1):
    terms = [LossTerms(5, d0, 85), LossTerms(5, d1, 85), LossTerms(5, 1, 85), LossTerms(5, 1, 85)]
    swapped = [terms[1], terms[0]] + terms[2:]
    changed = rd_loss(terms) != rd_loss(swapped)
    assert changed == (d0 != d1)
    flat = FrameWeightPattern((1.0, 1.0, 1.0, 1.0))
    assert rd_loss(terms, flat) == rd_loss(swapped, flat)


def test_psnr_values():
    a = np.zeros((1, 4, 4))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 1.0) == pytest.approx(0.0, abs=1e-12)
    assert psnr(a, a + 0.5) == pytest.approx(20 * math.log10(2), abs=1e-12)
    with pytest.raises(InputError):
        psnr(a, np.zeros((1, 4, 3)))


def test_weighted_psnr():
    assert weighted_yuv_psnr(40, 30, 30) == 37.5
    assert weighted_yuv_psnr(33.3, 33.3, 33.3) == pytest.approx(33.3, abs=1e-12)
    f = Yuv420Frame(np.ones((4, 4)), np.zeros((2, 2)), np.zeros((2, 2)))
    assert yuv420_weighted_psnr(f, f) == PSNR_CAP


@pytest.mark.parametrize("std", ["bt709", "bt601"])
def test_colour_round_trip(std):
    x = np.random.default_rng(0).random((3, 9, 11))
    assert np.abs(yuv_to_rgb(rgb_to_yuv(x, std), std).data - x).max() < 1e-12
    white = rgb_to_yuv(np.ones((3, 1, 1)), std).data[:, 0, 0]
    assert white[0] == pytest.approx(1.0, abs=1e-15) and np.abs(white[1:]).max() < 1e-15


def test_bt709_red_luma():
    red = np.zeros((3, 1, 1))
    red[0] = 1.0
    assert rgb_to_yuv(red, "bt709").data[0, 0, 0] == pytest.approx(0.2126, abs=1e-15)
    with pytest.raises(InputError):
        rgb_to_yuv(red, "bt2020")


def reference_down_up(x):
    """Centre-sited bilinear up then 2x2 average, written as a matrix per axis."""
    def op(n):
        m = 0.75 * np.eye(n)
        for j in range(n):
            m[j, max(j - 1, 0)] += 0.125
            m[j, min(j + 1, n - 1)] += 0.125
        return m
    h, w = x.shape
    return op(h) @ x @ op(w).T


def test_chroma_resampling():
    rng = np.random.default_rng(1)
    x = rng.random((6, 7))
    const = np.full((6, 7), 0.3)
    assert np.allclose(chroma_down(chroma_up(const, (12, 14))), const, atol=1e-15)
    # bilinear up then average is a mild low-pass, not the identity
    assert np.allclose(chroma_down(chroma_up(x, (12, 14))), reference_down_up(x), atol=1e-14)
    assert not np.allclose(chroma_down(chroma_up(x, (12, 14))), x)
    assert np.array_equal(chroma_down(chroma_up(x, (12, 14), "nearest")), x)
    frame = np.random.default_rng(2).random((3, 12, 14))
    f420 = to_yuv420(Lattice(frame))
    assert np.array_equal(f420.y, frame[0])
    assert np.array_equal(to_yuv444(f420).data[0], frame[0])


def test_bd_rate_basics():
    assert bd_rate(ANCHOR, ANCHOR) == 0.0
    half = RdCurve(ANCHOR.bpp / 2, ANCHOR.quality)
    assert abs(bd_rate(ANCHOR, half) + 50.0) < 1e-9
    with pytest.raises(NumericalError):
        bd_rate(ANCHOR, RdCurve([1, 2, 3, 4], [50, 51, 52, 53]))
    with pytest.raises(InputError):
        RdCurve([0.1, 0.2, 0.3], [1, 2, 3])


def test_bd_rate_matches_trapezoid_oracle():
    test = RdCurve([0.09, 0.15, 0.37, 0.9], [30.4, 32.1, 36.6, 40.2])
    got = bd_rate(ANCHOR, test)
    ref = bd_rate_trapezoid(ANCHOR.bpp, ANCHOR.quality, test.bpp, test.quality)
    assert abs(got - ref) <= 1e-4 * abs(ref)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(0.5, 1.5), st.floats(-1.0, 1.0))
def test_bd_rate_near_antisymmetric(scale, slope, shift):
    q = np.array([30.0, 33.0, 36.0, 39.0])
    a = RdCurve(0.1 * 2 ** ((q - 30) / 3 * slope), q)
    b = RdCurve(a.bpp * scale, q + shift)
    ab, ba = bd_rate(a, b), bd_rate(b, a)
    # log-domain antisymmetry: (1 + ab)(1 + ba) = 1
    assert abs(math.log1p(ab / 100) + math.log1p(ba / 100)) < 5e-3


def test_curve_csv_round_trip():
    back = curve_from_csv(curve_to_csv(ANCHOR))
    assert np.array_equal(back.bpp, ANCHOR.bpp) and np.array_equal(back.quality, ANCHOR.quality)
    assert bd_report_csv([("a-b", -1.5)]).splitlines()[0] == "pair,bdrate_percent,method"


@pytest.mark.parametrize("k,cin,cout", [(5, 2, 3), (3, 4, 4), (1, 3, 2)])
def test_macs_brute_force(k, cin, cout):
    h = w = 5
    reg = macs_conv(k, cin, cout, h, w)
    sep = macs_depthwise_separable(k, cin, cout, h, w)
    assert reg == conv_mults_bruteforce(k, cin, cout, h, w)
    assert sep == separable_mults_bruteforce(k, cin, cout, h, w)
    assert sep / reg == pytest.approx(1 / cout + 1 / k ** 2, rel=1e-12)


def test_macs_ratio_examples():
    r = macs_depthwise_separable(3, 64, 64, 8, 8) / macs_conv(3, 64, 64, 8, 8)
    assert r == pytest.approx(0.1267, abs=1e-4)
    assert macs_depthwise_separable(1, 8, 8, 4, 4) >= macs_conv(1, 8, 8, 4, 4) * (1 / 8 + 1)
