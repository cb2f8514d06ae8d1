"""Run a generation plan against a text-to-image backend and record sidecar metadata."""

from __future__ import annotations

import base64
import datetime as _dt
import hashlib
import io
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import httpx
import numpy as np
from PIL import Image, ImageDraw

from .colorimetry import ita_angle, ita_to_fitzpatrick, srgb_to_lab
from .prompts import SKIN_TONE_DESCRIPTORS, GenerationPlan
from .targets import FITZPATRICK, Distribution

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
BACKGROUND_RGB = (250, 250, 250)

# one colour per Fitzpatrick type, each at least 5 degrees of ITA inside its band
DEFAULT_PALETTE: tuple[tuple[int, int, int], ...] = (
    (218, 194, 178),
    (199, 164, 139),
    (180, 142, 119),
    (165, 126, 104),
    (140, 100, 76),
    (92, 64, 49),
)


class BackendError(Exception):
    """Transport or API failure; retried once."""


class ContentPolicyError(Exception):
    """The backend refused the prompt; recorded, never retried."""


@dataclass(frozen=True)
class BackendParams:
    width: int = 512
    height: int = 768
    steps: int = 40
    guidance: float = 7.5
    precision: str = "float16"
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.steps <= 0:
            raise ValueError("width, height and steps must be positive")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["extra"] = dict(self.extra)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BackendParams":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


class Backend(Protocol):
    backend_id: str

    def generate(self, prompt: str, seed: int, params: BackendParams) -> bytes: ...


@dataclass(frozen=True)
class GenerationRecord:
    image: str
    category: str
    prompt: str
    seed: int
    backend: str
    params: dict[str, Any]
    target: dict[str, Any] | None
    status: str
    timestamp: str
    error: str | None = None
    bbox: tuple[int, int, int, int] | None = None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["bbox"] = list(self.bbox) if self.bbox is not None else None
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenerationRecord":
        d = dict(data)
        if d.get("bbox") is not None:
            d["bbox"] = tuple(d["bbox"])
        return cls(**d)


# -- synthetic backend -------------------------------------------------------


def face_box(width: int, height: int) -> tuple[int, int, int, int]:
    """Bounding box ``(x, y, w, h)`` of the oval drawn by :func:`render_face`."""
    w = max(1, round(width * 0.7))
    h = max(1, round(height * 0.8))
    return (width - w) // 2, (height - h) // 2, w, h


def render_face(rgb: Sequence[int], width: int, height: int) -> bytes:
    """Flat oval of ``rgb`` on a near-white background, PNG encoded."""
    img = Image.new("RGB", (width, height), BACKGROUND_RGB)
    x, y, w, h = face_box(width, height)
    ImageDraw.Draw(img).ellipse([x, y, x + w - 1, y + h - 1], fill=tuple(int(c) for c in rgb))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


@dataclass(frozen=True)
class SyntheticBackendConfig:
    """Biased stand-in for a diffusion model.

    ``conditionals`` maps a lower-case prompt keyword to the Fitzpatrick distribution
    drawn when the prompt carries no skin-tone descriptor (first match wins, then
    ``default``). With probability ``descriptor_fidelity`` a recognised descriptor
    forces its own type instead.
    """

    default: Distribution
    conditionals: tuple[tuple[str, Distribution], ...] = ()
    descriptor_fidelity: float = 0.9
    palette: tuple[tuple[int, int, int], ...] = DEFAULT_PALETTE
    descriptors: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "conditionals", tuple((k.lower(), d) for k, d in self.conditionals))
        object.__setattr__(self, "palette", tuple(tuple(int(c) for c in rgb) for rgb in self.palette))
        for _, d in ((None, self.default), *self.conditionals):
            if d.scheme.categories != FITZPATRICK.categories:
                raise ValueError("synthetic conditionals must be over Fitzpatrick I-VI")
        if not 0.0 <= self.descriptor_fidelity <= 1.0:
            raise ValueError("descriptor_fidelity must lie in [0, 1]")
        if len(self.palette) != 6:
            raise ValueError("palette needs one colour per Fitzpatrick type")
        for label, rgb in zip(FITZPATRICK.categories, self.palette):
            L, _, b = srgb_to_lab(rgb)
            got = ita_to_fitzpatrick(ita_angle(float(L), float(b)))
            if got != label:
                raise ValueError(f"palette colour {rgb} for type {label} audits as type {got}")

    def baseline_for(self, prompt: str) -> Distribution:
        low = prompt.lower()
        for keyword, dist in self.conditionals:
            if keyword in low:
                return dist
        return self.default

    def descriptor_type(self, prompt: str) -> str | None:
        """Fitzpatrick type named by a ``with <descriptor> skin`` phrase, if any."""
        table = {**SKIN_TONE_DESCRIPTORS, **self.descriptors}
        # 3-bin and Monk labels reuse the same words, so only Fitzpatrick entries decide
        words = {table[t].lower(): t for t in FITZPATRICK.categories}
        m = re.search(r"\bwith (.+?) skin\b", prompt.lower())
        if m is None:
            return None
        return words.get(m.group(1).strip())

    def to_dict(self) -> dict[str, Any]:
        return {
            "default": list(self.default.probs),
            "conditionals": {k: list(d.probs) for k, d in self.conditionals},
            "descriptor_fidelity": self.descriptor_fidelity,
            "palette": [list(c) for c in self.palette],
            "descriptors": dict(self.descriptors),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SyntheticBackendConfig":
        def dist(p):
            return Distribution(FITZPATRICK, tuple(p))

        return cls(
            default=dist(data["default"]),
            conditionals=tuple((k, dist(v)) for k, v in data.get("conditionals", {}).items()),
            descriptor_fidelity=float(data.get("descriptor_fidelity", 0.9)),
            palette=tuple(tuple(c) for c in data.get("palette", DEFAULT_PALETTE)),
            descriptors=data.get("descriptors", {}),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SyntheticBackendConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class SyntheticBackend:
    backend_id = "synthetic"

    def __init__(self, config: SyntheticBackendConfig):
        self.config = config

    def _rng(self, prompt: str, seed: int) -> np.random.Generator:
        digest = hashlib.sha256(prompt.encode()).digest()
        words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
        return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *words]))

    def sample_type(self, prompt: str, seed: int) -> int:
        """Index (0-5) of the Fitzpatrick type rendered for ``(prompt, seed)``."""
        rng = self._rng(prompt, seed)
        forced = self.config.descriptor_type(prompt)
        u = rng.random()
        if forced is not None and u < self.config.descriptor_fidelity:
            return FITZPATRICK.index(forced)
        return int(rng.choice(6, p=self.config.baseline_for(prompt).as_array()))

    def generate(self, prompt: str, seed: int, params: BackendParams) -> bytes:
        k = self.sample_type(prompt, seed)
        return render_face(self.config.palette[k], params.width, params.height)

    def face_box(self, params: BackendParams) -> tuple[int, int, int, int]:
        return face_box(params.width, params.height)


# -- HTTP backends -----------------------------------------------------------


class HTTPDiffusionBackend:
    """Stable-Diffusion web API (``/sdapi/v1/txt2img``) returning base64 images."""

    def __init__(self, url: str, timeout: float = 300.0, client: httpx.Client | None = None, api_key: str | None = None):
        self.url = url.rstrip("/")
        self.backend_id = f"sdapi:{self.url}"
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}

    def generate(self, prompt: str, seed: int, params: BackendParams) -> bytes:
        payload = {
            "prompt": prompt,
            "seed": seed,
            "width": params.width,
            "height": params.height,
            "steps": params.steps,
            "cfg_scale": params.guidance,
            "batch_size": 1,
            **dict(params.extra),
        }
        try:
            resp = self._client.post(f"{self.url}/sdapi/v1/txt2img", json=payload, headers=self._headers)
        except httpx.HTTPError as exc:
            raise BackendError(f"transport: {exc}") from exc
        if resp.status_code in (400, 451) and "policy" in resp.text.lower():
            raise ContentPolicyError(resp.text[:200])
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return base64.b64decode(resp.json()["images"][0])
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed response: {exc}") from exc


class HostedImageBackend:
    """OpenAI-style ``/images/generations``; the seed is recorded but not honoured."""

    def __init__(self, url: str, model: str, api_key: str, timeout: float = 300.0, client: httpx.Client | None = None):
        self.url = url.rstrip("/")
        self.model = model
        self.backend_id = f"hosted:{model}"
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"}

    def generate(self, prompt: str, seed: int, params: BackendParams) -> bytes:
        payload = {
            "model": self.model,
            "prompt": prompt,
            "n": 1,
            "size": f"{params.width}x{params.height}",
            "response_format": "b64_json",
        }
        try:
            resp = self._client.post(f"{self.url}/images/generations", json=payload, headers=self._headers)
        except httpx.HTTPError as exc:
            raise BackendError(f"transport: {exc}") from exc
        if resp.status_code == 400 and "content_policy" in resp.text:
            raise ContentPolicyError(resp.text[:200])
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return base64.b64decode(resp.json()["data"][0]["b64_json"])
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed response: {exc}") from exc


# -- execution ---------------------------------------------------------------


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def generate_one(prompt: str, seed: int, params: BackendParams, backend: Backend, retries: int = 1) -> bytes:
    """One image from ``backend``, retrying transport failures ``retries`` times."""
    for attempt in range(retries + 1):
        try:
            return backend.generate(prompt, seed, params)
        except BackendError:
            if attempt == retries:
                raise
            log.warning("backend error for seed %d, retrying", seed)
    raise AssertionError("unreachable")


def _image_name(k: int) -> str:
    return f"img_{k:05d}.png"


def sidecar_path(image_path: Path) -> Path:
    return image_path.with_suffix(".json")


def execute(
    plan: GenerationPlan,
    backend: Backend,
    params: BackendParams,
    out_dir: str | os.PathLike,
    concurrency: int = 4,
    plan_ref: str = "plan.json",
) -> list[GenerationRecord]:
    """Produce every planned image under ``out_dir`` with a sidecar per image and a manifest.

    Failures become ``failed`` records; nothing planned is dropped.
    """
    out = Path(out_dir)
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    target = plan.to_dict()["target"]
    jobs = [(k, item, seed) for k, (item, _, seed) in enumerate(plan.iter_images())]
    box_of = getattr(backend, "face_box", None)

    def run(job) -> GenerationRecord:
        k, item, seed = job
        path = images_dir / _image_name(k)
        status, error, bbox = "ok", None, None
        try:
            data = generate_one(item.prompt.text, seed, params, backend)
            path.write_bytes(data)
            bbox = tuple(box_of(params)) if box_of is not None else None
        except ContentPolicyError as exc:
            status, error = "failed", f"content_policy: {exc}"
        except BackendError as exc:
            status, error = "failed", f"backend_error: {exc}"
        record = GenerationRecord(
            image=str(path.relative_to(out)),
            category=item.prompt.category,
            prompt=item.prompt.text,
            seed=seed,
            backend=backend.backend_id,
            params=params.to_dict(),
            target=target,
            status=status,
            timestamp=_now(),
            error=error,
            bbox=bbox,
        )
        sidecar_path(path).write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True))
        return record

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        records = list(pool.map(run, jobs))

    failed = sum(r.status != "ok" for r in records)
    if failed:
        log.warning("%d of %d planned images failed", failed, len(records))
    write_manifest(out, records, plan_ref, backend.backend_id, params)
    return records


def write_manifest(
    out: Path, records: Sequence[GenerationRecord], plan_ref: str, backend_id: str, params: BackendParams
) -> Path:
    manifest = {
        "plan": plan_ref,
        "backend": backend_id,
        "params": params.to_dict(),
        "summary": {
            "planned": len(records),
            "ok": sum(r.status == "ok" for r in records),
            "failed": sum(r.status != "ok" for r in records),
        },
        "records": [r.to_dict() for r in records],
        "created_at": _now(),
    }
    path = Path(out) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_manifest(run_dir: str | os.PathLike) -> dict[str, Any]:
    return json.loads((Path(run_dir) / MANIFEST_NAME).read_text())
