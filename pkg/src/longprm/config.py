"""TOML configuration for the command-line tools.

Sections: ``[segmentation]``, ``[backend]``, ``[review]``, ``[world]``,
``[mc]``, ``[train]``.  Every key is optional; fields not present fall back
to the dataclass defaults, and CLI flags override the file.  API keys are
read from the environment only, never from config files.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import HttpBackendConfig
from .mc import McConfig
from .prm import TrainConfig
from .segment import SegmentationConfig, Strategy, load_reflection_words
from .simworld import SimWorld


@dataclass
class ReviewSettings:
    host: str = "127.0.0.1"
    port: int = 8321
    dataset: str = ""
    journal: str = "review_journal.jsonl"
    ui_dir: str | None = None


@dataclass
class ToolkitConfig:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    backend: HttpBackendConfig | None = None
    review: ReviewSettings = field(default_factory=ReviewSettings)
    world: SimWorld = field(default_factory=lambda: SimWorld(seed=0))
    mc: McConfig = field(default_factory=McConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _build_segmentation(raw: dict) -> SegmentationConfig:
    kwargs = dict(raw)
    if "strategy" in kwargs:
        kwargs["strategy"] = Strategy(kwargs["strategy"])
    if "reflection_words_file" in kwargs:
        kwargs["reflection_words"] = load_reflection_words(kwargs.pop("reflection_words_file"))
    elif "reflection_words" in kwargs:
        kwargs["reflection_words"] = tuple(w.lower() for w in kwargs["reflection_words"])
    return SegmentationConfig(**kwargs)


def load_config(path: str | Path | None) -> ToolkitConfig:
    if path is None:
        return ToolkitConfig()
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    cfg = ToolkitConfig()
    if "segmentation" in raw:
        cfg.segmentation = _build_segmentation(raw["segmentation"])
    if "backend" in raw:
        cfg.backend = HttpBackendConfig(**raw["backend"])
    if "review" in raw:
        cfg.review = ReviewSettings(**raw["review"])
    if "world" in raw:
        cfg.world = replace(cfg.world, **raw["world"])
    if "mc" in raw:
        cfg.mc = replace(cfg.mc, **raw["mc"])
    if "train" in raw:
        cfg.train = replace(cfg.train, **raw["train"])
    return cfg
