"""Per-image skin-tone readings and observed distributions for a generation run."""

from __future__ import annotations

import datetime as _dt
import json
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .colorimetry import (
    DegenerateRegionError,
    ita_to_fitzpatrick,
    lab_to_monk,
    region_ita,
    srgb_to_lab,
)
from .generation import MANIFEST_NAME, load_manifest, sidecar_path
from .targets import BINS3, FITZPATRICK, MONK, AttributeScheme, Distribution

AUDIT_NAME = "audit.json"

# skin mask bounds inside the face box
MASK_L_MIN = 10.0
MASK_L_MAX = 95.0
MASK_CHROMA_MAX = 60.0

CENTER_CROP = (0.6, 0.7)

FITZPATRICK_TO_BIN = {"I": "Light", "II": "Light", "III": "Medium", "IV": "Medium", "V": "Dark", "VI": "Dark"}

# detector: RGB array -> list of (x, y, w, h); an empty list means no face
Detector = Callable[[np.ndarray], Sequence[tuple[int, int, int, int]]]


class ImageDecodeError(ValueError):
    pass


class NoValidReadingsError(ValueError):
    pass


@dataclass(frozen=True)
class FaceRegion:
    source: str
    x: int
    y: int
    w: int
    h: int
    origin: str  # external_detector | sidecar_bbox | center_crop

    def clip(self, width: int, height: int) -> "FaceRegion":
        x0, y0 = max(0, self.x), max(0, self.y)
        x1, y1 = min(width, self.x + self.w), min(height, self.y + self.h)
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"face box {self.box} lies outside a {width}x{height} image")
        return FaceRegion(self.source, x0, y0, x1 - x0, y1 - y0, self.origin)

    @property
    def box(self) -> tuple[int, int, int, int]:
        return self.x, self.y, self.w, self.h


@dataclass(frozen=True)
class SkinToneReading:
    image: str
    status: str  # ok | no_face | degenerate
    lab: tuple[float, float, float] | None = None
    ita: float | None = None
    fitzpatrick: str | None = None
    monk: int | None = None
    pixel_count: int = 0
    region: tuple[int, int, int, int] | None = None
    region_origin: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("lab", "region"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


def load_rgb(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc


def center_crop(width: int, height: int, source: str = "") -> FaceRegion:
    fw, fh = CENTER_CROP
    w, h = max(1, round(width * fw)), max(1, round(height * fh))
    return FaceRegion(source, (width - w) // 2, (height - h) // 2, w, h, "center_crop")


def face_region(
    image: np.ndarray,
    detector: Detector | None = None,
    sidecar_bbox: Sequence[int] | None = None,
    source: str = "",
) -> FaceRegion | None:
    """Face box for ``image``: detector first, then sidecar bbox, then a centred crop.

    Returns ``None`` when a configured detector finds no face.
    """
    height, width = image.shape[:2]
    if detector is not None:
        boxes = list(detector(image))
        if not boxes:
            return None
        # largest detection wins
        x, y, w, h = max(boxes, key=lambda b: b[2] * b[3])
        return FaceRegion(source, int(x), int(y), int(w), int(h), "external_detector").clip(width, height)
    if sidecar_bbox is not None:
        x, y, w, h = (int(v) for v in sidecar_bbox)
        return FaceRegion(source, x, y, w, h, "sidecar_bbox").clip(width, height)
    return center_crop(width, height, source)


def skin_pixels(lab: np.ndarray) -> np.ndarray:
    """Lab pixels that pass the skin mask, shape ``(n, 3)``."""
    flat = lab.reshape(-1, 3)
    L, a, b = flat[:, 0], flat[:, 1], flat[:, 2]
    keep = (L >= MASK_L_MIN) & (L <= MASK_L_MAX) & (np.hypot(a, b) <= MASK_CHROMA_MAX)
    return flat[keep]


def read_region(image: np.ndarray, region: FaceRegion) -> SkinToneReading:
    crop = image[region.y : region.y + region.h, region.x : region.x + region.w, :3]
    pixels = skin_pixels(srgb_to_lab(crop))
    base = dict(image=region.source, pixel_count=len(pixels), region=region.box, region_origin=region.origin)
    try:
        mean, angle = region_ita(pixels)
    except DegenerateRegionError:
        return SkinToneReading(status="degenerate", **base)
    return SkinToneReading(
        status="ok",
        lab=tuple(float(v) for v in mean),
        ita=angle,
        fitzpatrick=ita_to_fitzpatrick(angle),
        monk=lab_to_monk(mean),
        **base,
    )


def classify_image(
    path: str | os.PathLike,
    detector: Detector | None = None,
    use_sidecar: bool = True,
    name: str | None = None,
) -> SkinToneReading:
    path = Path(path)
    image = load_rgb(path)
    bbox = None
    side = sidecar_path(path)
    if use_sidecar and side.exists():
        bbox = json.loads(side.read_text()).get("bbox")
    region = face_region(image, detector, bbox, source=name or str(path))
    if region is None:
        return SkinToneReading(image=name or str(path), status="no_face")
    return read_region(image, region)


def _label(reading: SkinToneReading, scheme: AttributeScheme) -> str:
    if scheme.categories == FITZPATRICK.categories:
        return reading.fitzpatrick
    if scheme.categories == BINS3.categories:
        return FITZPATRICK_TO_BIN[reading.fitzpatrick]
    if scheme.categories == MONK.categories:
        return f"MST-{reading.monk}"
    raise ValueError(f"cannot estimate skin tone over scheme {scheme.name!r}")


def estimate_distribution(
    readings: Iterable[SkinToneReading], scheme: AttributeScheme = FITZPATRICK
) -> tuple[Distribution, int]:
    """Observed frequencies over ok readings and the number of discarded readings."""
    readings = list(readings)
    ok = [r for r in readings if r.ok]
    discards = len(readings) - len(ok)
    if not ok:
        raise NoValidReadingsError(f"no usable readings ({discards} discarded)")
    counts = Counter(_label(r, scheme) for r in ok)
    n = len(ok)
    return Distribution(scheme, tuple(counts.get(c, 0) / n for c in scheme.categories)), discards


def discard_tally(readings: Iterable[SkinToneReading]) -> dict[str, int]:
    tally = Counter(r.status for r in readings if not r.ok)
    return {"no_face": tally.get("no_face", 0), "degenerate": tally.get("degenerate", 0),
            "failed_generation": tally.get("failed_generation", 0)}


def audit_run(
    run_dir: str | os.PathLike,
    detector: Detector | None = None,
    workers: int | None = None,
) -> dict[str, Any]:
    """Classify every ok image of a run, write ``<image>.audit.json`` files and ``audit.json``."""
    run = Path(run_dir)
    if not (run / MANIFEST_NAME).exists():
        raise FileNotFoundError(f"{run / MANIFEST_NAME} not found; run generate first")
    manifest = load_manifest(run)
    records = manifest["records"]
    if not records:
        raise NoValidReadingsError("manifest lists no images")

    def one(rec: Mapping[str, Any]) -> SkinToneReading:
        if rec["status"] != "ok":
            return SkinToneReading(image=rec["image"], status="failed_generation")
        path = run / rec["image"]
        reading = classify_image(path, detector, name=rec["image"])
        path.with_suffix(".audit.json").write_text(json.dumps(reading.to_dict(), indent=2, sort_keys=True))
        return reading

    with ThreadPoolExecutor(max_workers=workers or min(8, os.cpu_count() or 1)) as pool:
        readings = list(pool.map(one, records))

    observed = {}
    for scheme in (FITZPATRICK, BINS3, MONK):
        observed[scheme.name], _ = estimate_distribution(readings, scheme)
    ok_readings = [r for r in readings if r.ok]
    audit = {
        "n_images": len(readings),
        "n_ok": len(ok_readings),
        "discards": discard_tally(readings),
        "target": records[0].get("target"),
        "observed": {name: d.to_dict() for name, d in observed.items()},
        "by_category": _by_category(records, readings),
        "readings": [r.to_dict() for r in readings],
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (run / AUDIT_NAME).write_text(json.dumps(audit, indent=2, sort_keys=True))
    return audit


def _by_category(records, readings) -> dict[str, dict[str, int]]:
    """Planned category -> counts of Fitzpatrick outcomes, for per-subgroup inspection."""
    out: dict[str, Counter] = {}
    for rec, r in zip(records, readings):
        if r.ok:
            out.setdefault(rec["category"], Counter())[r.fitzpatrick] += 1
    return {k: dict(sorted(v.items())) for k, v in sorted(out.items())}
