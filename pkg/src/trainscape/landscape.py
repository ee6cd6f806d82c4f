"""Classification landscape rasters and per-epoch bundles.

A raster assigns each pixel of the embedding plane the class territory of
g(psi(pixel center)) with softmax-confidence shading; pixels whose rescaled
top-two logit margin falls within delta are flagged as boundary and drawn
white. Bundles persist the raster, the per-sample embedding records and a
metrics slice, and are the unit served to the explorer UI.
"""

from __future__ import annotations

import colorsys
import json
import struct
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BundleError, ContractError, RenderError
from .numerics import rescale_rows_margin, softmax
from .subject import SubjectCheckpoint
from .visualizer import VisualizationModel, inverse_project
from .numerics import forward

RASTER_MAGIC = b"DVIR"
RASTER_VERSION = 1
DEFAULT_RESOLUTION = 300
PIXEL_BLOCK = 4096
EXTENT_PAD_FRACTION = 0.05
NEAR_WHITE = 245  # shading floor; pure white stays reserved for boundary pixels


def default_palette(class_count: int) -> list[tuple[int, int, int]]:
    """Up to 10 maximally separated hues at fixed saturation; never white."""
    if class_count > 10:
        raise ContractError("default palette supports at most 10 classes")
    colors = []
    for i in range(class_count):
        r, g, b = colorsys.hsv_to_rgb(i / 10.0, 0.75, 0.90)
        colors.append((int(round(r * 255)), int(round(g * 255)), int(round(b * 255))))
    if len(set(colors)) != class_count:
        raise ContractError("palette collision")
    return colors


@dataclass
class LandscapeRaster:
    width: int
    height: int
    extent: tuple[float, float, float, float]   # x_min, x_max, y_min, y_max
    class_id: np.ndarray                        # (height, width) uint8
    confidence: np.ndarray                      # (height, width) float32
    boundary: np.ndarray                        # (height, width) bool
    delta: float

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Center coordinates; row 0 sits at the top (largest y)."""
        x_min, x_max, y_min, y_max = self.extent
        xs = x_min + (np.arange(self.width) + 0.5) * (x_max - x_min) / self.width
        ys = y_max - (np.arange(self.height) + 0.5) * (y_max - y_min) / self.height
        return xs, ys

    def pixel_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the pixel covering an embedding-space point."""
        x_min, x_max, y_min, y_max = self.extent
        col = int((x - x_min) / (x_max - x_min) * self.width)
        row = int((y_max - y) / (y_max - y_min) * self.height)
        return (min(max(row, 0), self.height - 1), min(max(col, 0), self.width - 1))


def expanded_extent(points2d: np.ndarray,
                    pad: float = EXTENT_PAD_FRACTION) -> tuple[float, float, float, float]:
    pts = np.asarray(points2d, dtype=np.float64)
    x_min, y_min = pts.min(axis=0)
    x_max, y_max = pts.max(axis=0)
    dx = (x_max - x_min) or 1.0
    dy = (y_max - y_min) or 1.0
    return (float(x_min - pad * dx), float(x_max + pad * dx),
            float(y_min - pad * dy), float(y_max + pad * dy))


def evaluate_grid_points(model: VisualizationModel, ckpt: SubjectCheckpoint,
                         pts2d: np.ndarray, delta: float):
    """Class, confidence and boundary flag of g(psi(p)) per 2-D point.

    Degenerate constant-logit points count as boundary (margin 0). Non-finite
    decoder output raises RenderError naming the first offending point.
    """
    reps = inverse_project(model, pts2d.astype(np.float32))
    if not np.all(np.isfinite(reps)):
        bad = int(np.flatnonzero(~np.isfinite(reps).all(axis=1))[0])
        raise RenderError(f"decoder produced non-finite output at point {bad}")
    logits = forward(ckpt.head, reps)
    margin = rescale_rows_margin(logits)
    boundary = margin <= delta
    classes = np.argmax(logits, axis=1).astype(np.uint8)
    confidence = softmax(logits).max(axis=1).astype(np.float32)
    return classes, confidence, boundary


def render_landscape(model: VisualizationModel, ckpt: SubjectCheckpoint,
                     train_embeddings: np.ndarray, resolution: int = DEFAULT_RESOLUTION,
                     delta: float = 0.1,
                     palette: list[tuple[int, int, int]] | None = None) -> LandscapeRaster:
    """Rasterize the class territories over the training embeddings' bbox
    (expanded 5% per side), evaluating pixel centers in blocks."""
    if resolution < 50:
        raise ContractError("resolution must be at least 50x50")
    palette = palette or default_palette(ckpt.class_count)
    if len(palette) < ckpt.class_count:
        raise ContractError("palette must cover every class")
    extent = expanded_extent(train_embeddings)
    raster = LandscapeRaster(resolution, resolution, extent,
                             np.zeros((resolution, resolution), dtype=np.uint8),
                             np.zeros((resolution, resolution), dtype=np.float32),
                             np.zeros((resolution, resolution), dtype=bool),
                             delta)
    xs, ys = raster.pixel_centers()
    grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)  # row-major pixels
    for start in range(0, grid.shape[0], PIXEL_BLOCK):
        stop = min(start + PIXEL_BLOCK, grid.shape[0])
        classes, confidence, boundary = evaluate_grid_points(
            model, ckpt, grid[start:stop], delta)
        rows, cols = np.divmod(np.arange(start, stop), resolution)
        raster.class_id[rows, cols] = classes
        raster.confidence[rows, cols] = confidence
        raster.boundary[rows, cols] = boundary
    return raster


def colorize(raster: LandscapeRaster, palette: list[tuple[int, int, int]],
             class_count: int) -> np.ndarray:
    """RGB image: white boundary band, class hues shaded by confidence
    (lighter = less confident, floor at the chance level 1/C)."""
    h, w = raster.class_id.shape
    rgb = np.empty((h, w, 3), dtype=np.uint8)
    chance = 1.0 / class_count
    t = (raster.confidence.astype(np.float64) - chance) / (1.0 - chance)
    np.clip(t, 0.0, 1.0, out=t)
    base = np.array(palette, dtype=np.float64)[raster.class_id]
    shaded = (1.0 - t[..., None]) * NEAR_WHITE + t[..., None] * base
    rgb[:] = np.round(shaded).astype(np.uint8)
    rgb[raster.boundary] = (255, 255, 255)
    return rgb


# -- bundles -------------------------------------------------------------------

@dataclass
class SampleRecord:
    id: str
    x: float
    y: float
    label: int
    predicted: int
    confidence: float

    def to_json(self) -> dict:
        return {"id": self.id, "x": self.x, "y": self.y, "label": self.label,
                "predicted": self.predicted, "confidence": self.confidence}


@dataclass
class EpochBundle:
    epoch: int
    embeddings: list[SampleRecord]
    raster: LandscapeRaster
    metrics: dict
    palette: list[tuple[int, int, int]]
    class_count: int = 0

    def __post_init__(self):
        if len({tuple(c) for c in self.palette}) != len(self.palette):
            raise ContractError("palette must be injective")
        if (255, 255, 255) in {tuple(c) for c in self.palette}:
            raise ContractError("white is reserved for the boundary band")

    def record_by_id(self) -> dict[str, SampleRecord]:
        return {r.id: r for r in self.embeddings}


def make_sample_records(ids, embeddings2d, labels, predicted, confidence) -> list[SampleRecord]:
    return [SampleRecord(str(i), float(p[0]), float(p[1]), int(l), int(c), float(conf))
            for i, p, l, c, conf in zip(ids, embeddings2d, labels, predicted, confidence)]


def raster_payload(raster: LandscapeRaster) -> bytes:
    """16-byte header (magic, version, width, height) + class plane +
    boundary-flag plane + confidence plane (little-endian f32)."""
    header = struct.pack("<4sIII", RASTER_MAGIC, RASTER_VERSION,
                         raster.width, raster.height)
    return (header
            + raster.class_id.astype(np.uint8).tobytes()
            + raster.boundary.astype(np.uint8).tobytes()
            + raster.confidence.astype("<f4").tobytes())


def parse_raster_payload(blob: bytes, extent, delta: float) -> LandscapeRaster:
    if len(blob) < 16:
        raise BundleError("raster payload shorter than its header")
    magic, version, width, height = struct.unpack("<4sIII", blob[:16])
    if magic != RASTER_MAGIC:
        raise BundleError(f"bad raster magic {magic!r}")
    if version != RASTER_VERSION:
        raise BundleError(f"unsupported raster version {version}")
    n = width * height
    expected = 16 + n * 2 + n * 4
    if len(blob) != expected:
        raise BundleError(f"corrupt raster payload: {len(blob)} bytes, expected {expected}")
    class_id = np.frombuffer(blob, dtype=np.uint8, count=n, offset=16).reshape(height, width)
    flags = np.frombuffer(blob, dtype=np.uint8, count=n, offset=16 + n).reshape(height, width)
    conf = np.frombuffer(blob, dtype="<f4", count=n, offset=16 + 2 * n).reshape(height, width)
    return LandscapeRaster(width, height, tuple(extent), class_id.copy(),
                           conf.copy(), flags.astype(bool), delta)


def render_png_bytes(raster: LandscapeRaster, palette, class_count: int) -> bytes:
    image = Image.fromarray(colorize(raster, palette, class_count), mode="RGB")
    buf = BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


BUNDLE_VERSION = 1


def export_bundle(bundle: EpochBundle, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "landscape.png").write_bytes(
        render_png_bytes(bundle.raster, bundle.palette, bundle.class_count))
    (directory / "raster.bin").write_bytes(raster_payload(bundle.raster))
    meta = {
        "bundle_version": BUNDLE_VERSION,
        "epoch": bundle.epoch,
        "class_count": bundle.class_count,
        "palette": [list(c) for c in bundle.palette],
        "extent": list(bundle.raster.extent),
        "delta": bundle.raster.delta,
        "metrics": bundle.metrics,
        "embeddings": [r.to_json() for r in bundle.embeddings],
    }
    (directory / "bundle.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_bundle(directory) -> EpochBundle:
    directory = Path(directory)
    meta_path = directory / "bundle.json"
    if not meta_path.exists():
        raise BundleError(f"missing bundle metadata at {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("bundle_version") != BUNDLE_VERSION:
        raise BundleError(f"unsupported bundle version {meta.get('bundle_version')}")
    raster_path = directory / "raster.bin"
    if not raster_path.exists():
        raise BundleError(f"missing raster payload at {raster_path}")
    raster = parse_raster_payload(raster_path.read_bytes(), meta["extent"], meta["delta"])
    embeddings = [SampleRecord(r["id"], r["x"], r["y"], r["label"],
                               r["predicted"], r["confidence"])
                  for r in meta["embeddings"]]
    return EpochBundle(meta["epoch"], embeddings, raster, meta["metrics"],
                       [tuple(c) for c in meta["palette"]], meta["class_count"])


def sample_trajectory(bundles: list[EpochBundle], sample_id: str):
    """Chronological (epoch, x, y, predicted, confidence) tuples for one sample."""
    trajectory = []
    for bundle in sorted(bundles, key=lambda b: b.epoch):
        record = bundle.record_by_id().get(str(sample_id))
        if record is None:
            raise ContractError(f"sample id {sample_id!r} missing from epoch {bundle.epoch}")
        trajectory.append((bundle.epoch, record.x, record.y,
                           record.predicted, record.confidence))
    return trajectory
