"""Pipeline configuration: one flat record covering every stage, loadable
from ``key = value`` text files with command-line overrides on top."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .cfog import CfogParams
from .geomodels import all_model_specs, model_spec_from_name
from .keypoints import BlockGridParams
from .matcher import MatchParams
from .robustfit import RansacParams


@dataclass(frozen=True)
class PipelineConfig:
    """Defaults mirror the reference experiment protocol: a 20x20 detection
    grid with one point per block, 100 px templates inside 200 px search
    windows, 143 selected correspondences, 48 checkpoints, and control point
    counts from 25 to 95."""

    n_blocks: int = 20
    k_per_block: int = 1
    fast_threshold: float | None = None
    template_size: int = 100
    search_size: int = 200
    m_orientations: int = 9
    sigma_spatial: float = 0.8
    normalize_descriptor: bool = True
    subpixel: bool = False
    descriptor: str = "cfog"
    ransac_model: str = "affine"
    inlier_tol: float = 3.0
    ransac_max_iters: int = 5000
    ransac_confidence: float = 0.999
    top_k: int = 143
    n_checkpoints: int = 48
    cp_counts: tuple = (25, 35, 45, 55, 65, 75, 85, 95)
    models: str = "all"
    margin: int = 100
    seed: int = 0
    threads: int = 1

    def block_params(self) -> BlockGridParams:
        return BlockGridParams(n_blocks=self.n_blocks,
                               k_per_block=self.k_per_block,
                               fast_threshold=self.fast_threshold,
                               border=self.template_size // 2)

    def match_params(self) -> MatchParams:
        return MatchParams(template_size=self.template_size,
                           search_size=self.search_size,
                           cfog=CfogParams(m=self.m_orientations,
                                           sigma_spatial=self.sigma_spatial),
                           normalize=self.normalize_descriptor,
                           subpixel=self.subpixel,
                           descriptor=self.descriptor)

    def ransac_params(self) -> RansacParams:
        return RansacParams(model=self.ransac_model,
                            inlier_tol=self.inlier_tol,
                            max_iters=self.ransac_max_iters,
                            confidence=self.ransac_confidence,
                            seed=self.seed)

    def model_specs(self) -> list:
        if self.models.strip() == "all":
            return all_model_specs()
        return [model_spec_from_name(name.strip())
                for name in self.models.split(",") if name.strip()]

    def validate(self) -> "PipelineConfig":
        """Re-run the cross-field checks of the underlying stage parameters."""
        self.block_params()
        self.match_params()
        self.ransac_params()
        self.model_specs()
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.n_checkpoints < 1:
            raise ValueError(f"n_checkpoints must be >= 1, got {self.n_checkpoints}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if not self.cp_counts:
            raise ValueError("cp_counts must not be empty")
        return self


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_optional_float(value: str):
    return None if value.lower() in ("none", "auto", "") else float(value)


def parse_cp_counts(value: str) -> tuple:
    counts = tuple(int(t) for t in value.split(",") if t.strip())
    if not counts:
        raise ValueError(f"no control point counts in {value!r}")
    return counts


_FIELD_PARSERS = {
    "n_blocks": int,
    "k_per_block": int,
    "fast_threshold": _parse_optional_float,
    "template_size": int,
    "search_size": int,
    "m_orientations": int,
    "sigma_spatial": float,
    "normalize_descriptor": _parse_bool,
    "subpixel": _parse_bool,
    "descriptor": str,
    "ransac_model": str,
    "inlier_tol": float,
    "ransac_max_iters": int,
    "ransac_confidence": float,
    "top_k": int,
    "n_checkpoints": int,
    "cp_counts": parse_cp_counts,
    "models": str,
    "margin": int,
    "seed": int,
    "threads": int,
}

assert set(_FIELD_PARSERS) == {f.name for f in fields(PipelineConfig)}


def load_config(path) -> PipelineConfig:
    """Read a flat ``key = value`` configuration file; unknown keys are
    errors so typos do not silently fall back to defaults."""
    text = Path(path).read_text(encoding="utf-8")
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown configuration key {key!r}")
        overrides[key] = _FIELD_PARSERS[key](value)
    return replace(PipelineConfig(), **overrides).validate()
