"""Audit configuration: one flat JSON object plus nested ``bias`` and ``world`` blocks."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .biaslab import BiasSpec, SynthWorldSpec, to_config
from .discovery import FitOptions


@dataclass(frozen=True)
class AuditConfig:
    # fusion
    modalities: tuple = ("img", "txt", "meta")
    pca_components: int = 128
    standardize: bool = True
    # discovery
    k_slices: int = 5
    gamma: float = 10.0
    beta: float = 0.5
    max_iters: int = 200
    tol: float = 1e-5
    n_init: int = 3
    mode: str = "domino"
    # explanation
    top_n: int = 5
    doc_source: str = "both"
    stopwords: tuple = ()
    image_modality: str = "img"
    token_table: str | None = None
    # evaluation
    precision_k: int = 10
    iterations: int = 100
    base_seed: int = 0
    workers: int = 1
    bias: BiasSpec = field(default_factory=BiasSpec)
    world: SynthWorldSpec = field(default_factory=SynthWorldSpec)

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        object.__setattr__(self, "stopwords", tuple(self.stopwords))
        if self.mode not in ("domino", "error_only"):
            raise ValueError(f"mode must be domino or error_only, got {self.mode!r}")
        if self.doc_source not in ("report", "metadata", "both"):
            raise ValueError(f"doc_source must be report, metadata or both, got {self.doc_source!r}")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.k_slices < 1 or self.pca_components < 1 or self.top_n < 1 or self.precision_k < 1:
            raise ValueError("k_slices, pca_components, top_n and precision_k must be positive")

    @property
    def fit_options(self) -> FitOptions:
        return FitOptions(max_iters=self.max_iters, tol=self.tol, n_init=self.n_init)

    @classmethod
    def from_dict(cls, d: dict) -> "AuditConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "bias" in d:
            d["bias"] = _build(BiasSpec, d["bias"])
        if "world" in d:
            d["world"] = _build(SynthWorldSpec, d["world"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["modalities"] = list(self.modalities)
        d["stopwords"] = list(self.stopwords)
        d["bias"] = asdict(self.bias)
        d["world"] = to_config(self.world)
        return d

    def with_overrides(self, **changes) -> "AuditConfig":
        return replace(self, **changes)


def _build(cls, block):
    if isinstance(block, cls):
        return block
    known = {f.name for f in fields(cls)}
    unknown = set(block) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**block)


def load_config(path: str | Path | None) -> AuditConfig:
    if path is None:
        return AuditConfig()
    return AuditConfig.from_dict(json.loads(Path(path).read_text()))


def fixture_config(kind: str, **overrides) -> AuditConfig:
    """Default benchmark configuration for one failure mode.

    The noisy-label world raises the background error rate, mimicking label
    noise that hurts both classes.
    """
    if kind == "spurious_correlation":
        cfg = AuditConfig(bias=BiasSpec(kind=kind, attr="device", strength=0.7))
    elif kind == "rare_slice":
        cfg = AuditConfig(bias=BiasSpec(kind=kind, attr="lateral", strength=0.02))
    elif kind == "noisy_label":
        cfg = AuditConfig(
            bias=BiasSpec(kind=kind, attr="portable", strength=0.3),
            world=SynthWorldSpec(base_error=0.12, group_error=0.5, cluster_separation=2.5),
        )
    else:
        raise ValueError(f"unknown failure mode {kind!r}")
    bias_over = {k: overrides.pop(k) for k in list(overrides) if k in {f.name for f in fields(BiasSpec)}}
    if bias_over:
        cfg = replace(cfg, bias=replace(cfg.bias, **bias_over))
    return replace(cfg, **overrides)
