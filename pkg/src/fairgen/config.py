"""Run configuration loaded from TOML, with environment-variable secrets."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .demographics import DEFAULT_THRESHOLD, ConfigError, OpenAICompatibleProvider, StubProvider
from .generation import (
    BackendParams,
    HostedImageBackend,
    HTTPDiffusionBackend,
    SyntheticBackend,
    SyntheticBackendConfig,
)
from .simulate import PRESET_BASELINES


@dataclass
class RunConfig:
    """Settings shared by the CLI stages; every field has a working offline default."""

    cache_dir: Path = Path(".fairgen-cache")
    occupation_table: Path | None = None

    provider: str = "stub"  # stub | openai
    llm_endpoint: str = "https://api.openai.com/v1"
    llm_model: str = "gpt-4o"
    llm_api_key_env: str = "FAIRGEN_LLM_API_KEY"
    stub_responses: Path | None = None
    threshold: float = DEFAULT_THRESHOLD

    backend: str = "synthetic"  # synthetic | sdapi | hosted
    backend_url: str = "http://127.0.0.1:7860"
    backend_model: str = "dall-e-2"
    backend_api_key_env: str = "FAIRGEN_BACKEND_API_KEY"
    synthetic_config: Path | None = None
    params: BackendParams = field(default_factory=BackendParams)
    concurrency: int = 4

    descriptors: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_dict(tomllib.loads(path.read_text()), base_dir=path.parent)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path = Path(".")) -> "RunConfig":
        cfg = cls()
        paths = data.get("paths", {})
        llm = data.get("llm", {})
        backend = data.get("backend", {})

        def p(v):
            return None if v is None else (base_dir / v)

        if "cache_dir" in paths:
            cfg.cache_dir = p(paths["cache_dir"])
        cfg.occupation_table = p(paths.get("occupation_table"))
        cfg.provider = llm.get("provider", cfg.provider)
        cfg.llm_endpoint = llm.get("endpoint", cfg.llm_endpoint)
        cfg.llm_model = llm.get("model", cfg.llm_model)
        cfg.llm_api_key_env = llm.get("api_key_env", cfg.llm_api_key_env)
        cfg.stub_responses = p(llm.get("stub_responses"))
        cfg.threshold = float(llm.get("threshold", cfg.threshold))
        cfg.backend = backend.get("kind", cfg.backend)
        cfg.backend_url = backend.get("url", cfg.backend_url)
        cfg.backend_model = backend.get("model", cfg.backend_model)
        cfg.backend_api_key_env = backend.get("api_key_env", cfg.backend_api_key_env)
        cfg.synthetic_config = p(backend.get("synthetic_config"))
        cfg.concurrency = int(backend.get("concurrency", cfg.concurrency))
        if "params" in backend:
            cfg.params = BackendParams.from_dict(backend["params"])
        cfg.descriptors = dict(data.get("descriptors", {}))
        for f in (cfg.occupation_table, cfg.stub_responses, cfg.synthetic_config):
            if f is not None and not f.exists():
                raise ConfigError(f"referenced file {f} does not exist")
        return cfg

    def make_provider(self):
        if self.provider == "stub":
            return StubProvider.from_file(self.stub_responses) if self.stub_responses else StubProvider()
        if self.provider == "openai":
            return OpenAICompatibleProvider.from_env(self.llm_endpoint, self.llm_model, self.llm_api_key_env)
        raise ConfigError(f"unknown provider {self.provider!r}")

    def make_backend(self):
        if self.backend == "synthetic":
            if self.synthetic_config is not None:
                return SyntheticBackend(SyntheticBackendConfig.load(self.synthetic_config))
            return SyntheticBackend(SyntheticBackendConfig(PRESET_BASELINES["high-status"]))
        key = os.environ.get(self.backend_api_key_env)
        if self.backend == "sdapi":
            return HTTPDiffusionBackend(self.backend_url, api_key=key)
        if self.backend == "hosted":
            if not key:
                raise ConfigError(f"environment variable {self.backend_api_key_env} is not set")
            return HostedImageBackend(self.backend_url, self.backend_model, key)
        raise ConfigError(f"unknown backend {self.backend!r}")
