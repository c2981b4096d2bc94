"""Synthetic corruption models: stain, Gaussian noise, scratches, drops, mixes.

Every function here is pure given its Generator argument: the same (image,
stream) pair always produces byte-identical output, and pixels outside the
returned mask are exact copies of the original. Draw order inside each sampler
is fixed and documented, since it is part of the reproducibility contract.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .image import MIN_SIDE, GrayImage

# ---- public constants ----

KINDS = ("stain", "gaussian", "scratch", "drops", "mix1", "mix2", "none")
GAUSSIAN_SIGMAS = (0.1, 0.2, 0.4, 0.8)

STAIN_POINTS = 20          # control points on the perturbed ellipse border
STAIN_AXIS_LO = 0.01       # semi-axis bounds, fraction of min(h, w)
STAIN_AXIS_HI = 0.12
STAIN_PERTURB = 0.25       # radial perturbation bound, fraction of local radius
STAIN_JITTER = 0.15        # control-angle jitter, fraction of a station
STAIN_OVERSHOOT = 1.3 / (1.0 + STAIN_PERTURB)  # spline headroom over the peak control radius
STAIN_SAMPLES = 720        # closed-polyline samples before scanline fill

SCRATCH_FAMILIES = ("line", "sinusoid", "sqrt")
SCRATCH_MIN_SEP = 8.0      # minimum endpoint separation, px
SCRATCH_WIDTH_FRAC = 2.0 / 256.0  # stroke width: 2 px at 256, scales with min side
SCRATCH_AMP_LO = 4.0       # transverse amplitude bounds, px
SCRATCH_AMP_HI = 24.0

DROP_COUNT = 10
DROP_DIAM_LO = 0.01        # diameter bounds, fraction of min(h, w)
DROP_DIAM_HI = 0.02
DROP_SPREAD = 1.5          # placement radius around running centroid, in diameters

MIX1_CUTS = (0.6, 0.8)     # stain | scratch | drops
MIX2_CUT = 0.6             # stain | gaussian


# ---- specs and results ----


@dataclass(frozen=True)
class CorruptionSpec:
    """Which corruption to apply when building training pairs or previews.

    gaussian_sigma pins the noise level for kind="gaussian"/"mix2"; left as
    None, a level is drawn per image from GAUSSIAN_SIGMAS.
    """

    kind: str = "stain"
    gaussian_sigma: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}, expected one of {KINDS}")
        if self.gaussian_sigma is not None:
            if self.kind not in ("gaussian", "mix2"):
                raise ValueError("gaussian_sigma only applies to kind 'gaussian' or 'mix2'")
            if not any(abs(self.gaussian_sigma - s) < 1e-12 for s in GAUSSIAN_SIGMAS):
                raise ValueError(
                    f"gaussian_sigma must be one of {GAUSSIAN_SIGMAS}, got {self.gaussian_sigma}"
                )


@dataclass(frozen=True)
class CorruptedSample:
    """A training/preview pair: corrupted input, clean target, alteration mask.

    input == target exactly at every mask-False pixel. `applied` records the
    concrete model that ran (mixes resolve to their routed member).
    """

    input: np.ndarray   # (h, w) float32 in [0, 1]
    target: np.ndarray  # (h, w) float32, the untouched original
    mask: np.ndarray    # (h, w) bool
    applied: str


@dataclass(frozen=True)
class StainShape:
    """A sampled stain: perturbed-ellipse geometry plus its pixel raster."""

    center: tuple          # (row, col), px
    semi_axes: tuple       # (a, b), px
    rotation: float        # radians in [0, pi)
    control_points: np.ndarray  # (STAIN_POINTS, 2) of (angle, radius), angles ascending
    color: float
    raster_mask: np.ndarray     # (h, w) bool


@dataclass(frozen=True)
class ScratchShape:
    """A sampled scratch: endpoints, curve family and its pixel raster."""

    endpoints: tuple       # ((row, col), (row, col))
    family: str            # "line" | "sinusoid" | "sqrt"
    amplitude: float       # transverse swing, px (0 for lines)
    periods: int           # sinusoid periods (0 otherwise)
    color: float
    raster_mask: np.ndarray


@dataclass(frozen=True)
class DropsShape:
    """A sampled drop cluster: per-disc geometry plus the union raster."""

    discs: tuple           # DROP_COUNT entries of (row, col, diameter, color)
    raster_mask: np.ndarray


# ---- polygon rasterization ----


def _fill_polygon(rows, cols, height, width):
    """Scanline even-odd fill of a closed polyline over pixel centers.

    Pixel (i, j) is filled when its center lies inside the polygon; crossings
    use the half-open rule so shared vertices are not double counted.
    """
    mask = np.zeros((height, width), dtype=bool)
    y0, x0 = rows, cols
    y1, x1 = np.roll(rows, -1), np.roll(cols, -1)
    lo = max(0, int(math.ceil(rows.min())))
    hi = min(height - 1, int(math.floor(rows.max())))
    for i in range(lo, hi + 1):
        crosses = ((y0 <= i) & (y1 > i)) | ((y1 <= i) & (y0 > i))
        if not crosses.any():
            continue
        t = (i - y0[crosses]) / (y1[crosses] - y0[crosses])
        xs = np.sort(x0[crosses] + t * (x1[crosses] - x0[crosses]))
        for a, b in xs.reshape(-1, 2):
            ja = max(0, int(math.ceil(a)))
            jb = min(width - 1, int(math.floor(b)))
            if ja <= jb:
                mask[i, ja : jb + 1] = True
    return mask


def _stamp_path(points, radius, height, width):
    """Mask of all pixels whose center is within `radius` of any path sample."""
    mask = np.zeros((height, width), dtype=bool)
    k = int(math.ceil(radius)) + 1
    off = np.arange(-k, k + 1)
    oi, oj = np.meshgrid(off, off, indexing="ij")
    offsets = np.stack([oi.ravel(), oj.ravel()], axis=1)  # (m, 2)
    cand = np.round(points)[:, None, :] + offsets[None, :, :]  # (n, m, 2)
    d2 = ((cand - points[:, None, :]) ** 2).sum(axis=2)
    ii = cand[..., 0].astype(int)
    jj = cand[..., 1].astype(int)
    keep = (d2 <= radius**2) & (ii >= 0) & (ii < height) & (jj >= 0) & (jj < width)
    mask[ii[keep], jj[keep]] = True
    return mask


# ---- stain ----


def sample_stain(rng, height, width) -> StainShape:
    """Draw a stain shape for an image of the given size.

    Geometry: an ellipse with independently drawn semi-axes in
    [0.01, 0.12]*min(h, w) and uniform rotation; its border is sampled at 20
    jittered regular angles with +/-25% radial perturbation, and a closed
    periodic cubic spline through those control points is rasterized by
    scanline fill. Sampled radii are clamped a hair above the peak control
    radius so spline overshoot can never push a pixel farther than
    1.3 * 0.12 * min(h, w) from the center.

    Draw order (fixed): center row, center col, semi-axes, rotation, color,
    control-angle jitters, radial perturbations.
    """
    d = min(height, width)
    if d < MIN_SIDE:
        raise ValueError(f"canvas {height}x{width} is below the {MIN_SIDE} px minimum")
    cy = rng.uniform(0.0, height - 1.0)
    cx = rng.uniform(0.0, width - 1.0)
    a, b = rng.uniform(STAIN_AXIS_LO * d, STAIN_AXIS_HI * d, size=2)
    rot = rng.uniform(0.0, math.pi)
    color = float(rng.uniform())
    stations = np.arange(STAIN_POINTS) + rng.uniform(
        -STAIN_JITTER, STAIN_JITTER, size=STAIN_POINTS
    )
    angles = 2.0 * math.pi * (stations - stations[0]) / STAIN_POINTS
    eta = rng.uniform(-STAIN_PERTURB, STAIN_PERTURB, size=STAIN_POINTS)

    # polar border radius of the (a, b) ellipse at each control angle
    base = a * b / np.sqrt((b * np.cos(angles)) ** 2 + (a * np.sin(angles)) ** 2)
    radii = base * (1.0 + eta)

    # closed periodic spline through (angle, radius), sampled densely
    theta = np.concatenate([angles, [angles[0] + 2.0 * math.pi]])
    rad = np.concatenate([radii, [radii[0]]])
    spline = CubicSpline(theta, rad, bc_type="periodic")
    ts = angles[0] + np.linspace(0.0, 2.0 * math.pi, STAIN_SAMPLES, endpoint=False)
    rs = np.clip(spline(ts), 0.25 * radii.min(), STAIN_OVERSHOOT * radii.max())

    cos_r, sin_r = math.cos(rot), math.sin(rot)
    lx = rs * np.cos(ts)
    ly = rs * np.sin(ts)
    poly_cols = cx + lx * cos_r - ly * sin_r
    poly_rows = cy + lx * sin_r + ly * cos_r
    raster = _fill_polygon(poly_rows, poly_cols, height, width)
    if not raster.any():
        # a stain smaller than one pixel grid cell still stains one pixel
        raster[min(height - 1, max(0, round(cy))), min(width - 1, max(0, round(cx)))] = True

    return StainShape(
        center=(float(cy), float(cx)),
        semi_axes=(float(a), float(b)),
        rotation=float(rot),
        control_points=np.stack([angles, radii], axis=1),
        color=color,
        raster_mask=raster,
    )


def apply_stain(image: GrayImage, rng) -> CorruptedSample:
    """Paint one sampled stain, constant color, onto a copy of the image."""
    shape = sample_stain(rng, image.height, image.width)
    out = image.pixels.copy()
    out[shape.raster_mask] = np.float32(shape.color)
    return CorruptedSample(out, image.pixels.copy(), shape.raster_mask, "stain")


# ---- gaussian ----


def apply_gaussian(image: GrayImage, rng, sigma) -> CorruptedSample:
    """Add i.i.d. N(0, sigma^2) to every pixel, clamped back to [0, 1]."""
    if not any(abs(sigma - s) < 1e-12 for s in GAUSSIAN_SIGMAS):
        raise ValueError(f"sigma must be one of {GAUSSIAN_SIGMAS}, got {sigma}")
    noise = rng.normal(0.0, sigma, size=image.shape)
    out = np.clip(image.pixels.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32)
    mask = np.ones(image.shape, dtype=bool)
    return CorruptedSample(out, image.pixels.copy(), mask, "gaussian")


# ---- scratch ----


def sample_scratch(rng, height, width) -> ScratchShape:
    """Draw one thin curve between two random endpoints >= 8 px apart.

    The curve family is uniform over {line, sinusoid, sqrt}. Sinusoids swing
    amp*sin(2*pi*k*t) transverse to the chord (k in {1,2,3}); the sqrt arc
    follows the path of a square-root function between the endpoints, i.e.
    transverse offset amp*(sqrt(t) - t) once the chord is aligned. Stroke
    width is 2 px at 256 px and scales with the smaller image side.

    Draw order (fixed): endpoint pairs until far enough apart, family,
    amplitude and period count (family-dependent), color.
    """
    h, w = height, width
    while True:
        p0 = np.array([rng.uniform(0.0, h - 1.0), rng.uniform(0.0, w - 1.0)])
        p1 = np.array([rng.uniform(0.0, h - 1.0), rng.uniform(0.0, w - 1.0)])
        chord = float(np.linalg.norm(p1 - p0))
        if chord >= SCRATCH_MIN_SEP:
            break
    family = SCRATCH_FAMILIES[int(rng.integers(len(SCRATCH_FAMILIES)))]
    if family == "line":
        amp, periods = 0.0, 0
    elif family == "sinusoid":
        amp = float(rng.uniform(SCRATCH_AMP_LO, SCRATCH_AMP_HI))
        periods = int(rng.integers(1, 4))
    else:
        amp = float(rng.uniform(SCRATCH_AMP_LO, SCRATCH_AMP_HI))
        periods = 0
    color = float(rng.uniform())

    t = np.linspace(0.0, 1.0, 2048)
    if family == "line":
        offset = np.zeros_like(t)
    elif family == "sinusoid":
        offset = amp * np.sin(2.0 * math.pi * periods * t)
    else:
        offset = amp * (np.sqrt(t) - t)
    direction = (p1 - p0) / chord
    normal = np.array([-direction[1], direction[0]])
    points = p0[None, :] + t[:, None] * (p1 - p0)[None, :] + offset[:, None] * normal[None, :]

    stroke = max(1.0, SCRATCH_WIDTH_FRAC * min(h, w))
    mask = _stamp_path(points, stroke / 2.0, h, w)
    return ScratchShape(
        endpoints=(tuple(p0), tuple(p1)),
        family=family,
        amplitude=amp,
        periods=periods,
        color=color,
        raster_mask=mask,
    )


def apply_scratch(image: GrayImage, rng) -> CorruptedSample:
    """Paint one sampled scratch, constant color, onto a copy of the image."""
    shape = sample_scratch(rng, image.height, image.width)
    out = image.pixels.copy()
    out[shape.raster_mask] = np.float32(shape.color)
    return CorruptedSample(out, image.pixels.copy(), shape.raster_mask, "scratch")


# ---- drops ----


def sample_drops(rng, height, width) -> DropsShape:
    """Draw a cluster of 10 small discs with independent colors.

    The first center is uniform over the image; each later disc lands
    uniformly within 1.5 of its own diameter of the running centroid of
    previous centers, so the cluster stays compact and discs frequently
    overlap.

    Draw order per disc (fixed): diameter, center (first: row, col; later:
    polar radius fraction, polar angle), color.
    """
    h, w = height, width
    d = min(h, w)
    mask = np.zeros((h, w), dtype=bool)
    discs = []
    centers = []
    for k in range(DROP_COUNT):
        diam = rng.uniform(DROP_DIAM_LO * d, DROP_DIAM_HI * d)
        if k == 0:
            cy = rng.uniform(0.0, h - 1.0)
            cx = rng.uniform(0.0, w - 1.0)
        else:
            centroid = np.mean(centers, axis=0)
            rad = DROP_SPREAD * diam * math.sqrt(rng.uniform())
            ang = rng.uniform(0.0, 2.0 * math.pi)
            cy = centroid[0] + rad * math.sin(ang)
            cx = centroid[1] + rad * math.cos(ang)
        color = float(rng.uniform())
        centers.append((cy, cx))
        discs.append((float(cy), float(cx), float(diam), color))
        hit = _disc_pixels(cy, cx, diam / 2.0, h, w)
        if hit is not None:
            window, disc = hit
            mask[window] |= disc
    return DropsShape(discs=tuple(discs), raster_mask=mask)


def _disc_pixels(cy, cx, r, h, w):
    i0, i1 = max(0, int(math.floor(cy - r))), min(h - 1, int(math.ceil(cy + r)))
    j0, j1 = max(0, int(math.floor(cx - r))), min(w - 1, int(math.ceil(cx + r)))
    if i0 > i1 or j0 > j1:
        return None  # disc fully outside the frame
    ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    return (slice(i0, i1 + 1), slice(j0, j1 + 1)), (ii - cy) ** 2 + (jj - cx) ** 2 <= r * r


def apply_drops(image: GrayImage, rng) -> CorruptedSample:
    """Paint one sampled drop cluster onto a copy of the image."""
    h, w = image.shape
    shape = sample_drops(rng, h, w)
    out = image.pixels.copy()
    for cy, cx, diam, color in shape.discs:
        hit = _disc_pixels(cy, cx, diam / 2.0, h, w)
        if hit is None:
            continue
        window, disc = hit
        out[window][disc] = np.float32(color)
    return CorruptedSample(out, image.pixels.copy(), shape.raster_mask, "drops")


# ---- dispatch ----


def corrupt(image: GrayImage, spec: CorruptionSpec, rng) -> CorruptedSample:
    """Apply the corruption named by `spec` using draws from `rng` only.

    Mixes first draw a routing uniform (mix1: stain 0.6 / scratch 0.2 /
    drops 0.2; mix2: stain 0.6 / gaussian 0.4), then run the routed model on
    the same stream. kind="none" returns the image unchanged with an all-False
    mask.
    """
    kind = spec.kind
    if kind == "none":
        return CorruptedSample(
            image.pixels.copy(), image.pixels.copy(), np.zeros(image.shape, dtype=bool), "none"
        )
    if kind == "mix1":
        u = rng.uniform()
        kind = "stain" if u < MIX1_CUTS[0] else ("scratch" if u < MIX1_CUTS[1] else "drops")
    elif kind == "mix2":
        u = rng.uniform()
        kind = "stain" if u < MIX2_CUT else "gaussian"
    if kind == "stain":
        return apply_stain(image, rng)
    if kind == "scratch":
        return apply_scratch(image, rng)
    if kind == "drops":
        return apply_drops(image, rng)
    # gaussian: fixed level if gaussian_sigma pins one, else drawn per image
    sigma = spec.gaussian_sigma
    if sigma is None:
        sigma = GAUSSIAN_SIGMAS[int(rng.integers(len(GAUSSIAN_SIGMAS)))]
    return apply_gaussian(image, rng, sigma)
