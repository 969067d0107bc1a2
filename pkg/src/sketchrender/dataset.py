"""Procedural shapes dataset and the deterministic semantic oracle.

Each image holds one anti-aliased shape (circle, square or triangle) centred
in one of four quadrants, plus a faint sinusoidal texture. Shape and quadrant
are the "semantic" content; texture, size jitter and brightness are detail.
Images live in [0, 1]; the diffusion models see them rescaled to [-1, 1].
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GENERATOR_VERSION = "shapes-v1"
IMAGE_SHAPE = (1, 32, 32)
SHAPES = ("circle", "square", "triangle")
NUM_CONDITIONS = 12
NULL_CONDITION = NUM_CONDITIONS  # reserved id for the unconditional branch

# Sizes are expressed as the radius of the equal-area circle.
SIZE_RANGE = (3.0, 4.5)
CENTER_JITTER = 0.75
BRIGHTNESS_RANGE = (0.6, 1.0)
TEXTURE_AMPLITUDE = (0.03, 0.12)

# Oracle settings.
ORACLE_THRESHOLD = 0.35
ORACLE_MIN_MASS = 2.0
ORACLE_MARGIN_SCALE = 0.015
_ORACLE_RADII = np.linspace(2.5, 5.0, 11)

_SQUARE_HALF = math.sqrt(math.pi) / 2.0  # half side of the equal-area square, per unit radius
_TRIANGLE_R = math.sqrt(4.0 * math.pi / (3.0 * math.sqrt(3.0)))  # circumradius of the equal-area triangle


@dataclass(frozen=True)
class Condition:
    shape_class: str
    quadrant: int

    def __post_init__(self):
        if self.shape_class not in SHAPES:
            raise ValueError(f"unknown shape class {self.shape_class!r}")
        if self.quadrant not in (0, 1, 2, 3):
            raise ValueError(f"quadrant must be 0..3, got {self.quadrant}")

    @property
    def id(self) -> int:
        return 4 * SHAPES.index(self.shape_class) + self.quadrant

    @classmethod
    def from_id(cls, cid: int) -> "Condition":
        if not 0 <= cid < NUM_CONDITIONS:
            raise ValueError(f"condition id must be in 0..{NUM_CONDITIONS - 1}, got {cid}")
        return cls(SHAPES[cid // 4], cid % 4)

    @classmethod
    def parse(cls, text: str) -> "Condition":
        """Parse ``"circle:2"`` or a bare id such as ``"9"``."""
        text = text.strip()
        if text.isdigit():
            return cls.from_id(int(text))
        name, _, quad = text.partition(":")
        return cls(name.strip(), int(quad))

    def __str__(self) -> str:
        return f"{self.shape_class}:{self.quadrant}"


def all_conditions() -> list[Condition]:
    return [Condition.from_id(i) for i in range(NUM_CONDITIONS)]


@dataclass(frozen=True)
class SemanticLabel:
    shape_class: str | None
    quadrant: int | None
    confidence: float

    @property
    def defined(self) -> bool:
        return self.shape_class is not None

    def matches(self, cond: Condition) -> bool:
        return self.defined and self.shape_class == cond.shape_class and self.quadrant == cond.quadrant

    def key(self) -> tuple[str | None, int | None]:
        return (self.shape_class, self.quadrant)


def quadrant_center(quadrant: int, shape=IMAGE_SHAPE) -> tuple[float, float]:
    """Pixel-centre coordinates (row, col) of a quadrant's middle."""
    h, w = shape[-2:]
    row = (quadrant // 2) * (h / 2) + h / 4 - 0.5
    col = (quadrant % 2) * (w / 2) + w / 4 - 0.5
    return row, col


def _sdf(shape_class: str, dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    if shape_class == "circle":
        return np.hypot(dx, dy) - r
    if shape_class == "square":
        half = r * _SQUARE_HALF
        qx = np.abs(dx) - half
        qy = np.abs(dy) - half
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        return outside + np.minimum(np.maximum(qx, qy), 0.0)
    if shape_class == "triangle":
        # Upward-pointing equilateral triangle centred on its centroid (y axis up).
        k = math.sqrt(3.0)
        half_side = r * _TRIANGLE_R * k / 2.0
        px = np.abs(dx) - half_side
        py = -dy + half_side / k
        flip = px + k * py > 0.0
        px, py = np.where(flip, (px - k * py) / 2.0, px), np.where(flip, (-k * px - py) / 2.0, py)
        px = px - np.clip(px, -2.0 * half_side, 0.0)
        return -np.hypot(px, py) * np.sign(py)
    raise ValueError(f"unknown shape class {shape_class!r}")


def render_shape(
    shape_class: str,
    center: tuple[float, float],
    radius: float,
    shape=IMAGE_SHAPE,
    brightness: float = 1.0,
) -> np.ndarray:
    """Anti-aliased coverage map of one shape, scaled by ``brightness``."""
    h, w = shape[-2:]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    d = _sdf(shape_class, yy - center[0], xx - center[1], radius)
    cover = np.clip(0.5 - d, 0.0, 1.0)
    return (brightness * cover).reshape(shape)


def _texture(rng: np.random.Generator, shape=IMAGE_SHAPE) -> np.ndarray:
    h, w = shape[-2:]
    amp = rng.uniform(*TEXTURE_AMPLITUDE)
    fy, fx = rng.integers(1, 6, size=2)
    phase = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    wave = 0.5 + 0.5 * np.sin(2 * math.pi * (fy * yy / h + fx * xx / w) + phase)
    return (amp * wave).reshape(shape)


def gen_sample(cond: Condition, rng: np.random.Generator, shape=IMAGE_SHAPE) -> np.ndarray:
    cy, cx = quadrant_center(cond.quadrant, shape)
    cy += rng.uniform(-CENTER_JITTER, CENTER_JITTER)
    cx += rng.uniform(-CENTER_JITTER, CENTER_JITTER)
    radius = rng.uniform(*SIZE_RANGE)
    brightness = rng.uniform(*BRIGHTNESS_RANGE)
    img = render_shape(cond.shape_class, (cy, cx), radius, shape, brightness) + _texture(rng, shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def gen_dataset(n: int, seed: int, stratified: bool = True) -> list[tuple[np.ndarray, Condition]]:
    """Generate ``n`` images with their conditions.

    Stratified mode cycles through the 12 conditions in a seeded random
    order, so counts never differ by more than one. Otherwise conditions are
    drawn uniformly at random.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if stratified:
        reps = -(-n // NUM_CONDITIONS)
        ids = np.concatenate([rng.permutation(NUM_CONDITIONS) for _ in range(reps)])[:n]
    else:
        ids = rng.integers(0, NUM_CONDITIONS, size=n)
    out = []
    for cid in ids:
        cond = Condition.from_id(int(cid))
        out.append((gen_sample(cond, rng), cond))
    return out


def to_arrays(data: list[tuple[np.ndarray, Condition]]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a dataset into ``(images[n, C, H, W], condition_ids[n])``."""
    x = np.stack([img for img, _ in data]).astype(np.float32)
    c = np.array([cond.id for _, cond in data], dtype=np.int64)
    return x, c


def to_model_space(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float32) * 2.0 - 1.0


def from_model_space(z: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(z, dtype=np.float32) + 1.0) / 2.0, 0.0, 1.0)


def data_fingerprint(shape=IMAGE_SHAPE, value_range=(-1.0, 1.0)) -> str:
    doc = {"generator": GENERATOR_VERSION, "shape": list(shape), "range": list(value_range)}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    return float((a * b).sum()) / den if den > 0 else 0.0


def semantic_oracle(image: np.ndarray) -> SemanticLabel:
    """Detect shape class and quadrant of a [0, 1] image.

    The quadrant is the one holding most above-threshold mass. The class is
    the template with best normalised cross-correlation inside that quadrant,
    searched over a range of sizes at the mass centroid. Confidence maps the
    margin between the best and runner-up class onto [0, 1].
    """
    img = np.asarray(image, dtype=np.float64)
    if img.shape != IMAGE_SHAPE:
        raise ValueError(f"oracle expects shape {IMAGE_SHAPE}, got {img.shape}")
    plane = img[0]
    h, w = plane.shape
    mass = np.clip(plane - ORACLE_THRESHOLD, 0.0, None)
    hh, hw = h // 2, w // 2
    quads = [mass[:hh, :hw], mass[:hh, hw:], mass[hh:, :hw], mass[hh:, hw:]]
    totals = [float(q.sum()) for q in quads]
    quadrant = int(np.argmax(totals))
    if totals[quadrant] < ORACLE_MIN_MASS:
        return SemanticLabel(None, None, 0.0)

    r0, c0 = (quadrant // 2) * hh, (quadrant % 2) * hw
    q = quads[quadrant]
    yy, xx = np.mgrid[0:hh, 0:hw]
    cy = float((q * yy).sum() / totals[quadrant]) + r0
    cx = float((q * xx).sum() / totals[quadrant]) + c0
    window = plane[r0 : r0 + hh, c0 : c0 + hw]

    scores = []
    for name in SHAPES:
        best = -1.0
        for r in _ORACLE_RADII:
            tmpl = render_shape(name, (cy, cx), float(r), (1, h, w))[0]
            best = max(best, _ncc(window, tmpl[r0 : r0 + hh, c0 : c0 + hw]))
        scores.append(best)
    order = np.argsort(scores)[::-1]
    margin = scores[order[0]] - scores[order[1]]
    confidence = float(np.clip(margin / ORACLE_MARGIN_SCALE, 0.0, 1.0))
    return SemanticLabel(SHAPES[order[0]], quadrant, confidence)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a [1, H, W] or [H, W] image in [0, 1] as binary PGM (P5)."""
    plane = np.asarray(image, dtype=np.float64)
    if plane.ndim == 3:
        plane = plane[0]
    data = np.rint(np.clip(plane, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return (data.astype(np.float32) / maxval)[None]


def image_grid(images: list[np.ndarray], ncols: int, pad: int = 1) -> np.ndarray:
    """Tile [1, H, W] images into one [1, H', W'] grid with a white gutter."""
    h, w = images[0].shape[-2:]
    nrows = -(-len(images) // ncols)
    grid = np.ones((nrows * (h + pad) - pad, ncols * (w + pad) - pad), dtype=np.float32)
    for i, img in enumerate(images):
        r, c = divmod(i, ncols)
        grid[r * (h + pad) : r * (h + pad) + h, c * (w + pad) : c * (w + pad) + w] = np.asarray(img).reshape(h, w)
    return grid[None]
