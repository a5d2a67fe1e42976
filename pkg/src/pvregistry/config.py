"""Pipeline configuration: a TOML file plus command-line overrides."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ParseError
from .geometry import FLAT_TILT_DEG
from .reconcile import INFLATION_RATIO, RELINK_TOLERANCE
from .registry import Constants

PATH_KEYS = ("buildings", "grids", "official", "instances", "registry",
             "validation_grids", "validation_truth", "out")


@dataclass(frozen=True)
class PipelineConfig:
    buildings: Path | None = None
    grids: Path | None = None
    official: Path | None = None
    instances: Path | None = None
    registry: Path | None = None
    validation_grids: Path | None = None
    validation_truth: Path | None = None
    out: Path = Path("out")
    threshold: float | str = 0.5
    ratio_threshold: float = INFLATION_RATIO
    relink_tolerance: float = RELINK_TOLERANCE
    flat_tilt_deg: float = FLAT_TILT_DEG
    jobs: int = 1
    constants: Constants = field(default_factory=Constants)

    def __post_init__(self):
        t = self.threshold
        if isinstance(t, str):
            if t != "search":
                try:
                    t = float(t)
                except ValueError:
                    raise ParseError(f"threshold must be a number or 'search', got {t!r}") from None
        if not isinstance(t, str) and not 0.0 <= t <= 1.0:
            raise ParseError(f"threshold must lie in [0, 1], got {t}")
        object.__setattr__(self, "threshold", t)
        for name in ("ratio_threshold", "relink_tolerance", "flat_tilt_deg"):
            if not getattr(self, name) > 0:
                raise ParseError(f"{name} must be positive")
        if self.ratio_threshold <= 1:
            raise ParseError("ratio_threshold must exceed 1")
        if self.jobs < 1:
            raise ParseError("jobs must be at least 1")

    def override(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        for k in PATH_KEYS:
            if k in kw:
                kw[k] = Path(kw[k])
        return replace(self, **kw)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    base = path.parent
    kw = {}
    consts = doc.pop("constants", {})
    allowed = set(PATH_KEYS) | {"threshold", "ratio_threshold", "relink_tolerance", "flat_tilt_deg", "jobs"}
    unknown = set(doc) - allowed
    if unknown:
        raise ParseError(f"{path}: unknown keys {', '.join(sorted(unknown))}")
    for k, v in doc.items():
        kw[k] = base / v if k in PATH_KEYS else v
    try:
        kw["constants"] = Constants().with_overrides(**consts)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad [constants] table: {exc}") from None
    return PipelineConfig(**kw)
