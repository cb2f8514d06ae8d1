"""Context-scoped demographic retrieval from an LLM, with validation, caching and routing."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx
import jsonschema

from .targets import Distribution, demographic_scheme

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
PROPORTION_TOLERANCE = 1e-6

RESPONSE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["concept", "scope", "groups", "confidence", "sources"],
    "properties": {
        "concept": {"type": "string"},
        "scope": {"type": "string"},
        "groups": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["label", "proportion"],
                "properties": {
                    "label": {"type": "string", "minLength": 1},
                    "proportion": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        "sources": {"type": "array", "items": {"type": "string"}},
    },
}

INSTRUCTION_TEMPLATE = """\
You provide population statistics for image-generation audits.
Concept: {concept}
Scope: {scope}

Report the race/ethnicity composition of people described by the concept within the scope,
using the categories of the statistical source you cite. Keep any residual "Other" group as
its own entry. Proportions are fractions that sum to 1.

If the concept is ill-defined, describes a trait or emotion rather than a population, or no
population-level statistics are known for it, return confidence 0.0 and an empty "groups" list.

Answer with a single JSON object and nothing else, matching this JSON Schema:
{schema}
"""


class DemographicsError(Exception):
    pass


class ProviderTransportError(DemographicsError):
    """The provider could not be reached or returned a transport-level failure."""


class SchemaViolationError(DemographicsError):
    """The provider answer is not valid JSON for the response schema."""


class ContractViolationError(DemographicsError):
    """The answer parses but breaks the confidence/groups contract."""


class ConfigError(DemographicsError):
    pass


class LLMProvider(Protocol):
    provider_id: str

    def complete(self, instruction: str) -> str: ...


@dataclass(frozen=True)
class DemographicQuery:
    concept: str
    scope: str = "global"
    base_prompt: str = ""

    def __post_init__(self) -> None:
        if not self.concept.strip():
            raise ValueError("concept must be non-empty")


@dataclass(frozen=True)
class DemographicResult:
    concept: str
    scope: str
    groups: tuple[str, ...]
    proportions: Distribution | None
    confidence: float
    sources: tuple[str, ...]
    raw_response: str
    provider_id: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractViolationError(f"confidence {self.confidence} outside [0, 1]")
        if self.confidence == 0.0 and self.groups:
            raise ContractViolationError("confidence 0.0 must come with an empty group list")
        if self.groups and self.proportions is None:
            raise ContractViolationError("groups without proportions")

    def to_dict(self) -> dict[str, Any]:
        return {
            "concept": self.concept,
            "scope": self.scope,
            "groups": [
                {"label": g, "proportion": self.proportions[g]} for g in self.groups
            ] if self.proportions is not None else [],
            "confidence": self.confidence,
            "sources": list(self.sources),
            "provider": self.provider_id,
            "raw_response": self.raw_response,
        }


@dataclass(frozen=True)
class RoutingDecision:
    use_fallback: bool
    threshold: float
    result: DemographicResult | None = None
    reason: str | None = None  # no_data | low_confidence | user_forced

    @property
    def outcome(self) -> str:
        return "use_fallback" if self.use_fallback else "use_demographics"

    def to_dict(self) -> dict[str, Any]:
        return {"outcome": self.outcome, "reason": self.reason, "threshold": self.threshold}


_TEMPLATE = re.compile(r"^\s*a\s+full-colou?r\s+headshot\s+of\s+(?:(?:a|an)\s+)?(?P<rest>.+?)\s*\.?\s*$", re.I)


def extract_concept(base_prompt: str) -> str:
    """Strip the standard headshot template, leaving the occupation/description."""
    if not base_prompt.strip():
        raise ValueError("prompt must be non-empty")
    m = _TEMPLATE.match(base_prompt)
    if m:
        return m.group("rest").strip().lower()
    return base_prompt.strip().lower()


def build_instruction(query: DemographicQuery) -> str:
    return INSTRUCTION_TEMPLATE.format(
        concept=query.concept, scope=query.scope, schema=json.dumps(RESPONSE_SCHEMA, indent=2)
    )


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\s*", "", text)
        text = re.sub(r"\s*```$", "", text)
    return text


def parse_response(raw: str, query: DemographicQuery, provider_id: str = "") -> DemographicResult:
    """Validate a raw provider answer and turn it into a :class:`DemographicResult`."""
    try:
        data = json.loads(_strip_fences(raw))
    except json.JSONDecodeError as exc:
        raise SchemaViolationError(f"response is not JSON: {exc}") from exc
    try:
        jsonschema.validate(data, RESPONSE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaViolationError(f"response violates schema: {exc.message}") from exc

    labels = [g["label"] for g in data["groups"]]
    if len(set(labels)) != len(labels):
        raise SchemaViolationError(f"duplicate group labels: {labels}")
    confidence = float(data["confidence"])
    if confidence == 0.0 and labels:
        raise ContractViolationError("confidence 0.0 returned together with demographic groups")

    proportions = None
    if labels:
        values = [float(g["proportion"]) for g in data["groups"]]
        total = math.fsum(values)
        if abs(total - 1.0) > PROPORTION_TOLERANCE:
            raise SchemaViolationError(f"proportions sum to {total:.6g}, expected 1")
        # within tolerance: absorb decimal rounding of the provider's figures
        proportions = Distribution.normalized(demographic_scheme(labels, f"demographics:{query.concept}"), values)

    return DemographicResult(
        concept=query.concept,
        scope=query.scope,
        groups=tuple(labels),
        proportions=proportions,
        confidence=confidence,
        sources=tuple(data["sources"]),
        raw_response=raw,
        provider_id=provider_id,
    )


class DemographicCache:
    """On-disk JSON cache keyed by (concept, scope, provider id)."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    @staticmethod
    def key(concept: str, scope: str, provider_id: str) -> str:
        blob = json.dumps([concept, scope, provider_id]).encode()
        return hashlib.sha256(blob).hexdigest()[:32]

    def lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict[str, Any] | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def put(self, key: str, entry: Mapping[str, Any]) -> None:
        path = self._path(key)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(entry, indent=2, sort_keys=True))
        os.replace(tmp, path)


def retrieve_demographics(
    query: DemographicQuery,
    provider: LLMProvider,
    cache: DemographicCache | None = None,
) -> DemographicResult:
    """Ask ``provider`` for the group breakdown of ``query``; cached answers skip the call."""
    if cache is None:
        return parse_response(_call(provider, query), query, provider.provider_id)
    key = cache.key(query.concept, query.scope, provider.provider_id)
    with cache.lock(key):
        hit = cache.get(key)
        if hit is not None:
            log.debug("demographics cache hit for %s/%s", query.concept, query.scope)
            return parse_response(hit["raw_response"], query, provider.provider_id)
        raw = _call(provider, query)
        result = parse_response(raw, query, provider.provider_id)
        cache.put(
            key,
            {"concept": query.concept, "scope": query.scope, "provider": provider.provider_id, "raw_response": raw},
        )
        return result


def _call(provider: LLMProvider, query: DemographicQuery) -> str:
    try:
        return provider.complete(build_instruction(query))
    except ProviderTransportError:
        raise
    except (httpx.HTTPError, OSError) as exc:
        raise ProviderTransportError(f"{provider.provider_id}: {exc}") from exc


def route(
    result: DemographicResult,
    threshold: float = DEFAULT_THRESHOLD,
    user_forced_fallback: bool = False,
) -> RoutingDecision:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    if user_forced_fallback:
        return RoutingDecision(True, threshold, result, "user_forced")
    if not result.groups:
        return RoutingDecision(True, threshold, result, "no_data")
    if result.confidence < threshold:
        return RoutingDecision(True, threshold, result, "low_confidence")
    return RoutingDecision(False, threshold, result)


# -- providers ---------------------------------------------------------------


@dataclass
class StubProvider:
    """Canned answers keyed by concept, for tests and offline runs.

    Values may be a dict (serialized as the answer), a raw string, or an exception
    instance to raise. Unknown concepts get a confidence-0.0 answer.
    """

    responses: Mapping[str, Any] = field(default_factory=dict)
    provider_id: str = "stub"
    calls: list[str] = field(default_factory=list)

    _CONCEPT = re.compile(r"^Concept: (.*)$", re.M)
    _SCOPE = re.compile(r"^Scope: (.*)$", re.M)

    def complete(self, instruction: str) -> str:
        concept = self._CONCEPT.search(instruction).group(1)
        scope = self._SCOPE.search(instruction).group(1)
        self.calls.append(concept)
        answer = self.responses.get(concept)
        if isinstance(answer, BaseException):
            raise answer
        if answer is None:
            answer = {"concept": concept, "scope": scope, "groups": [], "confidence": 0.0, "sources": []}
        if isinstance(answer, str):
            return answer
        return json.dumps(answer)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "StubProvider":
        return cls(json.loads(Path(path).read_text()))


class OpenAICompatibleProvider:
    """Chat-completions endpoint returning a JSON object."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.provider_id = f"openai-compatible:{model}"
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"}

    @classmethod
    def from_env(cls, endpoint: str, model: str, api_key_env: str, **kw) -> "OpenAICompatibleProvider":
        key = os.environ.get(api_key_env)
        if not key:
            raise ConfigError(f"environment variable {api_key_env} is not set")
        return cls(endpoint, model, key, **kw)

    def complete(self, instruction: str) -> str:
        payload = {
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [{"role": "user", "content": instruction}],
        }
        try:
            resp = self._client.post(f"{self.endpoint}/chat/completions", json=payload, headers=self._headers)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderTransportError(str(exc)) from exc
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise SchemaViolationError(f"unexpected chat-completions envelope: {exc}") from exc


@dataclass
class LLMPromptRewriter:
    """Free-form subgroup rewrites through the same provider interface."""

    provider: LLMProvider
    template: str = (
        "Rewrite the image prompt so that it depicts a person in the group '{category}'. "
        "Keep everything else unchanged. Reply with JSON {{\"prompt\": \"...\"}}.\nPrompt: {base}"
    )

    def rewrite(self, base: str, category: str, scheme) -> str:
        raw = self.provider.complete(self.template.format(base=base, category=category))
        try:
            return str(json.loads(_strip_fences(raw))["prompt"]).strip()
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaViolationError(f"rewrite answer is not {{'prompt': ...}}: {raw!r}") from exc
