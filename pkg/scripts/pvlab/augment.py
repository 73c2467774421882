"""
augment.py - pvlab
Pseudo-video constructors. Three corruption families:
  blur   - recursive Gaussian blur with an exponentially growing sigma
  heat   - heat-equation evolution of the original image plus observation noise
  noise  - first-order and high-order Markov Gaussian noising

Every constructor returns a PseudoVideo whose last frame is the input image
itself and whose first frame is the most corrupted one.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import fft

from .core import Frame, PseudoVideo, RngSpec
from .errors import ArgumentError

logger = logging.getLogger("pvlab.augment")

# ── Defaults ────────────────────────────────────────────────────────────────
KERNEL_SIZE      = 11       # 11x11 Gaussian kernel
BLUR_SIGMA0      = 1.0      # base std in pixels
KERNEL_SUM_TOL   = 1e-9     # a kernel further than this from sum 1 is rejected
BETA_START       = 0.0001
BETA_END         = 0.05


class MarkovOrder(str, Enum):
    FIRST = "first-order"
    HIGH  = "high-order"


# ══════════════════════════════════════════════════════════════════════════════
# Schedules
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class BlurSchedule:
    n_frames: int = 8
    kernel_size: int = KERNEL_SIZE
    sigma0: float = BLUR_SIGMA0
    rate: float = 0.05

    def __post_init__(self):
        if self.n_frames < 2:
            raise ArgumentError(f"n_frames must be >= 2, got {self.n_frames}")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ArgumentError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if not self.sigma0 > 0:
            raise ArgumentError(f"sigma0 must be > 0, got {self.sigma0}")
        if not self.rate > 0:
            raise ArgumentError(f"rate must be > 0 for a strictly increasing sigma, got {self.rate}")

    def sigma(self, t: int) -> float:
        """Blur std used for corruption step t (t = 1 is the first blur)."""
        return self.sigma0 * math.exp(self.rate * t)

    @property
    def sigmas(self) -> list[float]:
        return [self.sigma(t) for t in range(1, self.n_frames)]


# 8- and 18-frame ladders
BLUR_PRESETS = {
    "blur_8":  BlurSchedule(n_frames=8,  kernel_size=KERNEL_SIZE, sigma0=BLUR_SIGMA0, rate=0.05),
    "blur_18": BlurSchedule(n_frames=18, kernel_size=KERNEL_SIZE, sigma0=BLUR_SIGMA0, rate=0.01),
}


@dataclass(frozen=True)
class NoiseSchedule:
    """betas[t-1] is β_t, the weight of corruption step t counted from the clean end."""
    betas: tuple

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if not betas:
            raise ArgumentError("a noise schedule needs at least one beta")
        for t, b in enumerate(betas, start=1):
            # β = 0 is the exact-copy limit; kept legal for oracle checks.
            if not 0.0 <= b < 1.0:
                raise ArgumentError(f"beta_{t} = {b} outside [0, 1)")
        object.__setattr__(self, "betas", betas)

    @property
    def n_frames(self) -> int:
        return len(self.betas) + 1


def linear_beta_schedule(T: int, beta_start: float = BETA_START, beta_end: float = BETA_END) -> NoiseSchedule:
    """Equally spaced β_1..β_{T-1} from beta_start to beta_end (both hit exactly)."""
    if T < 2:
        raise ArgumentError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ArgumentError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule(tuple(np.linspace(beta_start, beta_end, T - 1).tolist()))


@dataclass(frozen=True)
class HeatSchedule:
    """times[t-1] is the heat time of corruption step t; sigma_h the observation noise std."""
    times: tuple
    sigma_h: float = 0.0

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if not times:
            raise ArgumentError("a heat schedule needs at least one time")
        if times[0] < 0:
            raise ArgumentError(f"heat times must be non-negative, got {times[0]}")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ArgumentError(f"heat times must be strictly increasing, got {times}")
        if not self.sigma_h >= 0:
            raise ArgumentError(f"sigma_h must be >= 0, got {self.sigma_h}")
        object.__setattr__(self, "times", times)

    @property
    def n_frames(self) -> int:
        return len(self.times) + 1


def log_heat_schedule(T: int = 18, t_min: float = 0.125, t_max: float = 128.0,
                      sigma_h: float = 0.01) -> HeatSchedule:
    """Log-spaced heat times, the usual spacing for heat-dissipation corruption."""
    if T < 2:
        raise ArgumentError(f"T must be >= 2, got {T}")
    if not 0 < t_min < t_max:
        raise ArgumentError(f"need 0 < t_min < t_max, got {t_min}, {t_max}")
    times = np.geomspace(t_min, t_max, T - 1) if T > 2 else np.array([t_min])
    return HeatSchedule(tuple(times.tolist()), sigma_h)


# ══════════════════════════════════════════════════════════════════════════════
# Gaussian blur
# ══════════════════════════════════════════════════════════════════════════════

def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 3 or size % 2 == 0:
        raise ArgumentError(f"kernel size must be odd and >= 3, got {size}")
    if not sigma > 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")
    r = size // 2
    i = np.arange(-r, r + 1, dtype=np.float64)
    kernel = np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _periodic_transfer(kernel: np.ndarray, h: int, w: int) -> np.ndarray:
    """Fold the kernel onto the HxW torus and return its real 2-D spectrum."""
    r = kernel.shape[0] // 2
    offsets = np.arange(-r, r + 1)
    psf = np.zeros((h, w), dtype=np.float64)
    np.add.at(psf, ((offsets % h)[:, None], (offsets % w)[None, :]), kernel)
    return fft.rfft2(psf)


def blur_frame(frame: Frame, kernel: np.ndarray) -> Frame:
    """Per-channel 2-D convolution with wrap-around boundary."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ArgumentError(f"kernel must be square with odd size, got {kernel.shape}")
    total = kernel.sum()
    if abs(total - 1.0) > KERNEL_SUM_TOL:
        raise ArgumentError(f"kernel must be normalized, sums to {total!r}")

    h, w, _ = frame.shape
    transfer = _periodic_transfer(kernel, h, w)
    spectrum = fft.rfft2(frame.data.astype(np.float64), axes=(0, 1))
    out = fft.irfft2(spectrum * transfer[:, :, None], s=(h, w), axes=(0, 1))
    return Frame(out)


def make_blur_video(image: Frame, schedule: BlurSchedule) -> PseudoVideo:
    frames = [image]
    current = image
    for t, sigma in enumerate(schedule.sigmas, start=1):
        current = blur_frame(current, gaussian_kernel(schedule.kernel_size, sigma))
        frames.append(current)
        logger.debug("blur step %d sigma=%.4f", t, sigma)
    return PseudoVideo(tuple(reversed(frames)))


# ══════════════════════════════════════════════════════════════════════════════
# Heat equation
# ══════════════════════════════════════════════════════════════════════════════

def heat_eigenvalues(h: int, w: int) -> np.ndarray:
    """Continuous Neumann Laplacian eigenvalues π²(ky²/H² + kx²/W²) on the DCT-II grid."""
    ky = np.arange(h, dtype=np.float64)[:, None]
    kx = np.arange(w, dtype=np.float64)[None, :]
    return math.pi ** 2 * (ky ** 2 / h ** 2 + kx ** 2 / w ** 2)


def heat_operator_apply(frame: Frame, t: float) -> Frame:
    if t < 0:
        raise ArgumentError(f"heat time must be >= 0, got {t}")
    h, w, _ = frame.shape
    coef = fft.dctn(frame.data.astype(np.float64), type=2, norm="ortho", axes=(0, 1))
    coef *= np.exp(-t * heat_eigenvalues(h, w))[:, :, None]
    return Frame(fft.idctn(coef, type=2, norm="ortho", axes=(0, 1)))


def make_heat_video(image: Frame, schedule: HeatSchedule, rng: RngSpec) -> PseudoVideo:
    """Each corrupted frame is F(t)·image + σ_h·ε, conditioned on the original image."""
    gen = rng.generator()
    frames = [image]
    for t in schedule.times:
        evolved = heat_operator_apply(image, t).data.astype(np.float64)
        noise = gen.standard_normal(image.shape)
        frames.append(Frame(evolved + schedule.sigma_h * noise))
    return PseudoVideo(tuple(reversed(frames)))


# ══════════════════════════════════════════════════════════════════════════════
# Markov Gaussian noising
# ══════════════════════════════════════════════════════════════════════════════

def forward_chain(clean: np.ndarray, betas, order: MarkovOrder, gen: np.random.Generator,
                  dtype=np.float64) -> list[np.ndarray]:
    """
    Run the noising recursion starting from `clean` (any shape). Returns
    [x_T, x_{T-1}, ..., x_1], each rounded to `dtype` as soon as it is made.
    One fresh standard-normal array of clean.shape is drawn per step.
    """
    order = MarkovOrder(order)
    frames = [np.asarray(clean).astype(dtype, copy=False)]
    for t, beta in enumerate(betas, start=1):
        if order is MarkovOrder.FIRST:
            base = frames[-1].astype(np.float64)
        else:
            base = np.stack(frames).astype(np.float64).sum(axis=0) / t
        eps = gen.standard_normal(frames[0].shape)
        frames.append((math.sqrt(1.0 - beta) * base + math.sqrt(beta) * eps).astype(dtype))
    return frames


def _markov_video(image: Frame, schedule: NoiseSchedule, rng: RngSpec, order: MarkovOrder) -> PseudoVideo:
    chain = forward_chain(image.data, schedule.betas, order, rng.generator(), dtype=np.float32)
    return PseudoVideo((image, *(Frame(x) for x in chain[1:]))[::-1])


def first_order_markov_noise(image: Frame, schedule: NoiseSchedule, rng: RngSpec) -> PseudoVideo:
    return _markov_video(image, schedule, rng, MarkovOrder.FIRST)


def high_order_markov_noise(image: Frame, schedule: NoiseSchedule, rng: RngSpec) -> PseudoVideo:
    """Each new frame noises the mean of all cleaner frames made so far."""
    return _markov_video(image, schedule, rng, MarkovOrder.HIGH)
