import math

import numpy as np
import pytest

from scripts.pvlab.augment import (
    BLUR_PRESETS,
    BlurSchedule,
    HeatSchedule,
    MarkovOrder,
    NoiseSchedule,
    blur_frame,
    first_order_markov_noise,
    forward_chain,
    gaussian_kernel,
    heat_operator_apply,
    high_order_markov_noise,
    linear_beta_schedule,
    log_heat_schedule,
    make_blur_video,
    make_heat_video,
)
from scripts.pvlab.core import Frame, RngSpec
from scripts.pvlab.errors import ArgumentError


# noise sd is sqrt(beta) per step; the extra 1e-6 covers float32 rounding
COPY_BETA = 1e-14
COPY_ATOL = 6 * math.sqrt(3 * COPY_BETA) + 1e-6


def _image(h=8, w=8, c=1, seed=0):
    return Frame(np.random.default_rng(seed).random((h, w, c)))


def _direct_periodic_blur(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """O(H²W²) wrap-around convolution."""
    h, w, c = x.shape
    r = kernel.shape[0] // 2
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    out[i, j] += kernel[di + r, dj + r] * x[(i - di) % h, (j - dj) % w]
    return out


# ── Schedules ──────────────────────────────────────────────────────────────

def test_linear_betas_endpoints_exact():
    s = linear_beta_schedule(4, 0.0001, 0.05)
    assert s.betas[0] == 0.0001 and s.betas[-1] == 0.05
    assert s.betas[1] == pytest.approx(0.02505)


def test_linear_betas_single_step():
    assert linear_beta_schedule(2).betas == (0.0001,)


def test_linear_betas_equally_spaced():
    betas = np.array(linear_beta_schedule(8).betas)
    assert len(betas) == 7
    np.testing.assert_allclose(np.diff(betas), (0.05 - 0.0001) / 6, rtol=1e-12)


@pytest.mark.parametrize("args", [(1, 0.0001, 0.05), (4, 0.0, 0.05), (4, 0.05, 0.01), (4, 0.1, 1.0)])
def test_linear_betas_rejects(args):
    with pytest.raises(ArgumentError):
        linear_beta_schedule(*args)


def test_noise_schedule_bounds():
    assert NoiseSchedule((0.0, 0.5)).n_frames == 3
    with pytest.raises(ArgumentError):
        NoiseSchedule((1.0,))
    with pytest.raises(ArgumentError):
        NoiseSchedule(())


def test_blur_presets_reproduce_ladders():
    eight, eighteen = BLUR_PRESETS["blur_8"], BLUR_PRESETS["blur_18"]
    assert eight.kernel_size == eighteen.kernel_size == 11
    np.testing.assert_allclose(eight.sigmas, [math.exp(0.05 * t) for t in range(1, 8)])
    np.testing.assert_allclose(eighteen.sigmas, [math.exp(0.01 * t) for t in range(1, 18)])


def test_log_heat_schedule_is_log_spaced():
    s = log_heat_schedule(5, 0.5, 4.0, 0.0)
    np.testing.assert_allclose(s.times, [0.5, 1.0, 2.0, 4.0])
    assert s.n_frames == 5


def test_heat_schedule_rejects_non_increasing():
    with pytest.raises(ArgumentError):
        HeatSchedule((1.0, 1.0))


# ── Blur ───────────────────────────────────────────────────────────────────

def test_kernel_uniform_limit():
    np.testing.assert_allclose(gaussian_kernel(3, 1e6), np.full((3, 3), 1 / 9), atol=1e-9)


def test_kernel_normalized_and_symmetric():
    kernel = gaussian_kernel(11, 1.7)
    assert abs(float(kernel.sum()) - 1.0) <= 1e-12
    np.testing.assert_array_equal(kernel, kernel[::-1, :])
    np.testing.assert_array_equal(kernel, kernel[:, ::-1])
    np.testing.assert_array_equal(kernel, kernel.T)


def test_kernel_center_matches_direct_sum():
    row = math.fsum(math.exp(-i * i / 2.0) for i in range(-5, 6))
    assert gaussian_kernel(11, 1.0)[5, 5] == pytest.approx(1.0 / row ** 2, abs=1e-12)


@pytest.mark.parametrize("size", [3, 5, 11])
def test_kernel_center_shrinks_with_sigma(size):
    r = size // 2
    assert gaussian_kernel(size, 2.0)[r, r] < gaussian_kernel(size, 1.0)[r, r]


def test_kernel_rejects_even_size():
    with pytest.raises(ArgumentError):
        gaussian_kernel(4, 1.0)


def test_blur_constant_frame_fixed_point():
    out = blur_frame(Frame(np.full((6, 6, 3), 0.3)), gaussian_kernel(11, 2.0))
    np.testing.assert_allclose(out.data, 0.3, atol=1e-6)


def test_blur_matches_direct_convolution():
    img = _image()
    kernel = gaussian_kernel(5, 1.3)
    out = blur_frame(img, kernel)
    np.testing.assert_allclose(out.data, _direct_periodic_blur(img.data.astype(np.float64), kernel), atol=1e-5)


def test_blur_kernel_larger_than_image():
    img = _image(4, 4)
    kernel = gaussian_kernel(11, 1.0)
    np.testing.assert_allclose(blur_frame(img, kernel).data,
                               _direct_periodic_blur(img.data.astype(np.float64), kernel), atol=1e-5)


def test_blur_rejects_unnormalized_kernel():
    with pytest.raises(ArgumentError):
        blur_frame(_image(), gaussian_kernel(3, 1.0) * 1.01)


def test_blur_video_invariants():
    img = _image(8, 8, 3)
    video = make_blur_video(img, BlurSchedule(n_frames=8))
    assert len(video) == 8
    assert video.target == img
    means = [f.data.mean(axis=(0, 1)) for f in video.frames]
    for m in means:
        np.testing.assert_allclose(m, means[-1], atol=1e-5)
    variances = [f.data.astype(np.float64).var(axis=(0, 1)) for f in video.frames]
    for earlier, later in zip(variances, variances[1:]):
        assert np.all(earlier <= later + 1e-5)


def test_blur_video_two_frames():
    img = _image()
    schedule = BlurSchedule(n_frames=2)
    video = make_blur_video(img, schedule)
    assert video.frames[0] == blur_frame(img, gaussian_kernel(11, schedule.sigma(1)))


# ── Heat ───────────────────────────────────────────────────────────────────

def test_heat_identity_at_zero():
    img = _image()
    np.testing.assert_allclose(heat_operator_apply(img, 0.0).data, img.data, atol=1e-5)


def test_heat_semigroup():
    img = _image(8, 6)
    once = heat_operator_apply(img, 0.7)
    twice = heat_operator_apply(heat_operator_apply(img, 0.3), 0.4)
    np.testing.assert_allclose(once.data, twice.data, atol=1e-4)


def test_heat_preserves_mean_and_reaches_equilibrium():
    img = _image(8, 8, 3)
    far = heat_operator_apply(img, 1e4)
    np.testing.assert_allclose(far.data.mean(axis=(0, 1)), img.data.mean(axis=(0, 1)), atol=1e-6)
    np.testing.assert_allclose(far.data, np.broadcast_to(img.data.mean(axis=(0, 1)), img.shape), atol=1e-5)


def _cosine_attenuation(k, t, H=4, W=16):
    x = np.arange(W) + 0.5
    img = Frame(np.broadcast_to(np.cos(math.pi * k * x / W), (H, W)).copy())
    out = heat_operator_apply(img, t)
    return float(np.sum(out.data * img.data) / np.sum(img.data * img.data))


@pytest.mark.parametrize("k", [1, 3])
def test_heat_cosine_attenuation(k):
    t, W = 0.8, 16
    scale = _cosine_attenuation(k, t, W=W)
    assert scale == pytest.approx(math.exp(-t * math.pi ** 2 * k ** 2 / W ** 2), rel=1e-3)


def test_heat_attenuation_monotone_in_frequency_and_time():
    times = (0.2, 0.8, 3.2)
    table = [[_cosine_attenuation(k, t) for t in times] for k in (1, 2, 3, 4)]
    for row in table:
        assert all(a > b for a, b in zip(row, row[1:]))
    for col in zip(*table):
        assert all(a > b for a, b in zip(col, col[1:]))


def test_heat_rejects_negative_time():
    with pytest.raises(ArgumentError):
        heat_operator_apply(_image(), -1.0)


def test_heat_video_noiseless():
    img = _image()
    schedule = HeatSchedule((0.0, 0.5, 2.0), sigma_h=0.0)
    video = make_heat_video(img, schedule, RngSpec(0))
    assert video.target == img
    for t, frame in zip(schedule.times, reversed(video.frames[:-1])):
        np.testing.assert_allclose(frame.data, heat_operator_apply(img, t).data, atol=1e-6)


def test_heat_video_noise_std():
    img = Frame(np.zeros((100, 100)))
    video = make_heat_video(img, HeatSchedule((1.0,), sigma_h=0.1), RngSpec(3))
    assert float(video.frames[0].data.std()) == pytest.approx(0.1, rel=0.03)


# ── Markov noise ───────────────────────────────────────────────────────────

def test_first_order_copy_limit():
    img = _image()
    video = first_order_markov_noise(img, NoiseSchedule((COPY_BETA,) * 3), RngSpec(1))
    assert video.target == img
    for f in video.frames:
        np.testing.assert_allclose(f.data, img.data, atol=COPY_ATOL)


def test_first_order_variance_propagation():
    gen = RngSpec(5).generator()
    chain = forward_chain(np.ones(10_000), (0.5, 0.5), MarkovOrder.FIRST, gen)
    assert float(np.var(chain[-1])) == pytest.approx(0.75, rel=0.05)
    assert abs(float(np.mean(forward_chain(np.zeros(10_000), (0.5, 0.5), MarkovOrder.FIRST, gen)[-1]))) < 0.04


def test_high_order_mean_propagation():
    chain = forward_chain(np.ones(10_000), (0.5, 0.5), MarkovOrder.HIGH, RngSpec(6).generator())
    expected = math.sqrt(0.5) * (math.sqrt(0.5) + 1) / 2
    assert float(np.mean(chain[-1])) == pytest.approx(expected, rel=0.05)


def test_high_order_copy_limit_is_running_mean():
    img = _image()
    video = high_order_markov_noise(img, NoiseSchedule((COPY_BETA,) * 3), RngSpec(2))
    for f in video.frames:
        np.testing.assert_allclose(f.data, img.data, atol=COPY_ATOL)


def test_first_step_agrees_between_orders():
    img = _image()
    schedule = NoiseSchedule((0.3,))
    a = first_order_markov_noise(img, schedule, RngSpec(9))
    b = high_order_markov_noise(img, schedule, RngSpec(9))
    assert a == b


@pytest.mark.parametrize("build", [first_order_markov_noise, high_order_markov_noise])
def test_markov_stream_change_redraws_every_pixel(build):
    img = _image(4, 4, 3)
    schedule = NoiseSchedule((0.1, 0.2, 0.3))
    a = build(img, schedule, RngSpec(4, 1))
    b = build(img, schedule, RngSpec(4, 2))
    for fa, fb in zip(a.frames[:-1], b.frames[:-1]):
        assert np.all(fa.data != fb.data)


def test_heat_stream_change_redraws_every_pixel():
    img = _image()
    schedule = HeatSchedule((0.5, 2.0), sigma_h=0.1)
    a = make_heat_video(img, schedule, RngSpec(4, 1))
    b = make_heat_video(img, schedule, RngSpec(4, 2))
    for fa, fb in zip(a.frames[:-1], b.frames[:-1]):
        assert np.all(fa.data != fb.data)


def test_markov_videos_are_deterministic():
    img = _image(4, 4, 3)
    schedule = linear_beta_schedule(5)
    assert high_order_markov_noise(img, schedule, RngSpec(4, 1)) == high_order_markov_noise(img, schedule, RngSpec(4, 1))
