"""JSON Schemas for the run artifacts, plus helpers for comparing reruns."""

from __future__ import annotations

import json
from typing import Any

import jsonschema

VOLATILE_KEYS = frozenset({"created_at", "timestamp"})

_DIST = {
    "type": "object",
    "required": ["scheme", "labels", "probs"],
    "properties": {
        "scheme": {"type": "string"},
        "kind": {"type": "string"},
        "labels": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}

_TARGET = {
    "type": ["object", "null"],
    "required": ["variant", "q"],
    "properties": {
        "variant": {"enum": ["uniform", "intermediate", "extreme", "explicit", "fallback"]},
        "alpha": {"type": "number"},
        "focal": {"type": "string"},
        "q": _DIST,
    },
}

_DEMOGRAPHICS = {
    "type": ["object", "null"],
    "properties": {
        "result": {
            "type": ["object", "null"],
            "required": ["concept", "scope", "groups", "confidence", "sources", "raw_response"],
            "properties": {
                "concept": {"type": "string"},
                "scope": {"type": "string"},
                "groups": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["label", "proportion"],
                        "properties": {"label": {"type": "string"}, "proportion": {"type": "number"}},
                    },
                },
                "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                "sources": {"type": "array", "items": {"type": "string"}},
                "raw_response": {"type": "string"},
            },
        },
        "routing": {
            "type": "object",
            "required": ["outcome", "threshold"],
            "properties": {
                "outcome": {"enum": ["use_demographics", "use_fallback"]},
                "reason": {"enum": [None, "no_data", "low_confidence", "user_forced"]},
                "threshold": {"type": "number"},
            },
        },
    },
}

PLAN_SCHEMA = {
    "type": "object",
    "required": ["base_prompt", "target", "scheme", "alloc", "items", "seed_root"],
    "properties": {
        "base_prompt": {"type": "string", "minLength": 1},
        "target": _TARGET,
        "scheme": {"type": "object", "required": ["name", "labels"]},
        "alloc": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["label", "count"],
                "properties": {"label": {"type": "string"}, "count": {"type": "integer", "minimum": 0}},
            },
        },
        "items": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["prompt", "category", "seeds"],
                "properties": {
                    "prompt": {"type": "string", "minLength": 1},
                    "category": {"type": "string"},
                    "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                },
            },
        },
        "seed_root": {"type": "integer"},
        "demographics": _DEMOGRAPHICS,
        "created_at": {"type": "string"},
    },
}

RECORD_SCHEMA = {
    "type": "object",
    "required": ["image", "category", "prompt", "seed", "backend", "params", "status", "timestamp"],
    "properties": {
        "image": {"type": "string"},
        "category": {"type": "string"},
        "prompt": {"type": "string"},
        "seed": {"type": "integer"},
        "backend": {"type": "string"},
        "params": {
            "type": "object",
            "required": ["width", "height", "steps", "guidance", "precision"],
        },
        "target": _TARGET,
        "status": {"enum": ["ok", "failed"]},
        "error": {"type": ["string", "null"]},
        "bbox": {"type": ["array", "null"], "items": {"type": "integer"}, "minItems": 4, "maxItems": 4},
        "timestamp": {"type": "string"},
    },
}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["plan", "backend", "summary", "records"],
    "properties": {
        "plan": {"type": "string"},
        "summary": {
            "type": "object",
            "required": ["planned", "ok", "failed"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("planned", "ok", "failed")},
        },
        "records": {"type": "array", "items": RECORD_SCHEMA},
    },
}

READING_SCHEMA = {
    "type": "object",
    "required": ["image", "status", "pixel_count"],
    "properties": {
        "status": {"enum": ["ok", "no_face", "degenerate", "failed_generation"]},
        "lab": {"type": ["array", "null"], "items": {"type": "number"}},
        "ita": {"type": ["number", "null"]},
        "fitzpatrick": {"enum": [None, "I", "II", "III", "IV", "V", "VI"]},
        "monk": {"type": ["integer", "null"], "minimum": 1, "maximum": 10},
        "pixel_count": {"type": "integer", "minimum": 0},
    },
}

AUDIT_SCHEMA = {
    "type": "object",
    "required": ["n_images", "n_ok", "discards", "observed", "readings"],
    "properties": {
        "n_images": {"type": "integer"},
        "n_ok": {"type": "integer"},
        "discards": {"type": "object", "additionalProperties": {"type": "integer"}},
        "target": _TARGET,
        "observed": {
            "type": "object",
            "required": ["fitzpatrick", "bins3", "monk"],
            "additionalProperties": _DIST,
        },
        "readings": {"type": "array", "items": READING_SCHEMA},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["scheme", "declared_target", "observed", "alignment_error", "discards", "rows"],
    "properties": {
        "scheme": {"type": "string"},
        "declared_target": _TARGET,
        "observed": {"type": "object", "additionalProperties": _DIST},
        "alignment_error": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
        "improvement_pct": {"type": ["number", "null"]},
        "discards": {"type": "object"},
        "rows": {"type": "array"},
    },
}

SCHEMAS = {
    "plan": PLAN_SCHEMA,
    "manifest": MANIFEST_SCHEMA,
    "record": RECORD_SCHEMA,
    "reading": READING_SCHEMA,
    "audit": AUDIT_SCHEMA,
    "report": REPORT_SCHEMA,
}


def validate(kind: str, data: Any) -> None:
    """Raise :class:`jsonschema.ValidationError` if ``data`` is not a valid ``kind`` artifact."""
    jsonschema.validate(data, SCHEMAS[kind])


def strip_volatile(data: Any) -> Any:
    """Drop timestamp fields recursively so reruns can be compared."""
    if isinstance(data, dict):
        return {k: strip_volatile(v) for k, v in data.items() if k not in VOLATILE_KEYS}
    if isinstance(data, list):
        return [strip_volatile(v) for v in data]
    return data


def canonical_json(data: Any) -> str:
    return json.dumps(strip_volatile(data), indent=2, sort_keys=True)
