"""Run configuration: one human-editable YAML tree per run.

The same file drives both the evaluation pipeline and the simulation study;
see the repository README for the full schema.  Relative paths inside a
config resolve against the config file's own directory.  The configuration
hash embedded in reports covers every effective setting except the output
directory, so runs that differ only in where they write are recognizably
the same computation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .evidence import ScenarioSpec
from .gibbs import AlternativePrior, McmcSettings, SpecificPrior
from .simulate import (
    DesignSpec,
    TrueParams,
    default_study_design,
    default_study_params,
)
from .stats import SpdMatrix

__all__ = ["RunConfig", "StudyConfig", "config_hash", "load_run_config"]


def _require(mapping, key, where, kind=None):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ConfigError(f"missing required key {where}.{key}")
    value = mapping[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{where}.{key} has the wrong type ({type(value).__name__})")
    return value


def _parse_matrix(node, dim: int, where: str) -> SpdMatrix:
    """Accept {diagonal: scalar|list} or {matrix: [[...], ...]}."""
    if isinstance(node, (int, float)):
        return SpdMatrix.diagonal(float(node), dim=dim)
    if not isinstance(node, dict):
        raise ConfigError(f"{where} must be a scalar, diagonal, or matrix mapping")
    if "diagonal" in node:
        diag = node["diagonal"]
        if isinstance(diag, (int, float)):
            return SpdMatrix.diagonal(float(diag), dim=dim)
        diag = [float(v) for v in diag]
        if len(diag) != dim:
            raise ConfigError(f"{where}.diagonal must have length {dim}")
        return SpdMatrix.diagonal(diag)
    if "matrix" in node:
        arr = np.asarray(node["matrix"], dtype=float)
        if arr.shape != (dim, dim):
            raise ConfigError(f"{where}.matrix must be {dim}x{dim}")
        return SpdMatrix(arr)
    raise ConfigError(f"{where} needs a 'diagonal' or 'matrix' entry")


def _parse_vector(node, dim: int, where: str) -> np.ndarray:
    arr = np.asarray(node, dtype=float)
    if arr.shape != (dim,):
        raise ConfigError(f"{where} must be a vector of length {dim}")
    return arr


def _parse_scenario(node) -> ScenarioSpec:
    specific = str(_require(node, "specific_source", "scenario"))
    fragments = tuple(
        int(i) for i in _require(node, "specific_fragments", "scenario", list)
    )
    trace_source = None
    trace_fragments = None
    trace = node.get("trace")
    if trace is not None:
        if not isinstance(trace, dict):
            raise ConfigError("scenario.trace must be a mapping")
        if "source" in trace and trace["source"] is not None:
            trace_source = str(trace["source"])
        if trace.get("fragments") is not None:
            trace_fragments = tuple(int(i) for i in trace["fragments"])
    excluded = tuple(str(s) for s in node.get("exclude_sources", []) or [])
    try:
        return ScenarioSpec(
            specific_source_id=specific,
            specific_fragments=fragments,
            trace_source_id=trace_source,
            trace_fragments=trace_fragments,
            excluded_sources=excluded,
            label=str(node.get("label", "")),
        )
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def _parse_mcmc(node, seed: int) -> McmcSettings:
    node = node or {}
    if not isinstance(node, dict):
        raise ConfigError("mcmc must be a mapping")
    if "seed" in node:
        raise ConfigError("set the top-level 'seed' key, not mcmc.seed")
    return McmcSettings(
        iterations=int(node.get("iterations", 30000)),
        burn_in=int(node.get("burn_in", 1000)),
        thin=int(node.get("thin", 1)),
        seed=seed,
        chains=int(node.get("chains", 1)),
    )


def _parse_specific_prior(node) -> SpecificPrior | None:
    if node is None:
        return None
    mean_node = _require(node, "mean", "specific_prior", list)
    mean = _parse_vector(mean_node, len(mean_node), "specific_prior.mean")
    k = mean.size
    return SpecificPrior(
        mean=mean,
        mean_cov=_parse_matrix(
            _require(node, "mean_covariance", "specific_prior"), k, "specific_prior.mean_covariance"
        ),
        cov_scale=_parse_matrix(
            _require(node, "scale", "specific_prior"), k, "specific_prior.scale"
        ),
        cov_df=float(_require(node, "df", "specific_prior")),
    )


def _parse_alternative_prior(node) -> AlternativePrior | None:
    if node is None:
        return None
    mean_node = _require(node, "mean", "alternative_prior", list)
    mean = _parse_vector(mean_node, len(mean_node), "alternative_prior.mean")
    k = mean.size
    return AlternativePrior(
        mean=mean,
        mean_cov=_parse_matrix(
            _require(node, "mean_covariance", "alternative_prior"),
            k,
            "alternative_prior.mean_covariance",
        ),
        between_scale=_parse_matrix(
            _require(node, "between_scale", "alternative_prior"),
            k,
            "alternative_prior.between_scale",
        ),
        between_df=float(_require(node, "between_df", "alternative_prior")),
        within_scale=_parse_matrix(
            _require(node, "within_scale", "alternative_prior"),
            k,
            "alternative_prior.within_scale",
        ),
        within_df=float(_require(node, "within_df", "alternative_prior")),
    )


@dataclass(frozen=True)
class StudyConfig:
    grid: tuple[int, ...]
    replicates: int
    design: DesignSpec
    params: TrueParams


def _parse_study(node) -> StudyConfig:
    grid = tuple(int(n) for n in _require(node, "grid", "study", list))
    replicates = int(node.get("replicates", 20))
    design_node = node.get("design") or {}
    base = default_study_design()
    design = DesignSpec(
        n_sources=int(design_node.get("n_sources", base.n_sources)),
        fragments_per_source=int(
            design_node.get("fragments_per_source", base.fragments_per_source)
        ),
        n_specific=int(design_node.get("n_specific", base.n_specific)),
        n_trace=int(design_node.get("n_trace", base.n_trace)),
    )
    params_node = node.get("params")
    if params_node is None:
        params = default_study_params()
    else:
        k = int(_require(params_node, "dimension", "study.params"))
        params = TrueParams(
            mu_s=_parse_vector(params_node.get("mu_s", [0.0] * k), k, "study.params.mu_s"),
            sigma_s=_parse_matrix(
                params_node.get("sigma_s", 1.0), k, "study.params.sigma_s"
            ),
            mu_a=_parse_vector(params_node.get("mu_a", [0.0] * k), k, "study.params.mu_a"),
            sigma_b=_parse_matrix(
                params_node.get("sigma_b", 1.0), k, "study.params.sigma_b"
            ),
            sigma_w=_parse_matrix(
                params_node.get("sigma_w", 1.0), k, "study.params.sigma_w"
            ),
        )
    return StudyConfig(grid=grid, replicates=replicates, design=design, params=params)


@dataclass(frozen=True)
class RunConfig:
    data_path: Path | None
    scenario: ScenarioSpec | None
    specific_prior: SpecificPrior | None
    alternative_prior: AlternativePrior | None
    mcmc: McmcSettings
    output: Path
    report_format: str
    study: StudyConfig | None
    raw: dict

    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """Stable digest of the effective configuration, output path excluded."""
    trimmed = {k: v for k, v in raw.items() if k != "output"}
    canon = json.dumps(trimmed, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_run_config(
    path, *, seed_override: int | None = None, output_override=None
) -> RunConfig:
    """Load and validate a config file, applying CLI overrides.

    Overrides are folded into the effective configuration before hashing,
    except the output directory, which never affects the hash.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    base_dir = path.parent
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    seed = int(raw.get("seed", 0))
    if output_override is not None:
        raw["output"] = str(output_override)

    data_path = None
    if raw.get("data") is not None:
        data_path = Path(raw["data"])
        if not data_path.is_absolute():
            data_path = base_dir / data_path

    scenario = _parse_scenario(raw["scenario"]) if raw.get("scenario") else None
    report_format = str(raw.get("report_format", "structured"))
    if report_format not in ("structured", "text"):
        raise ConfigError("report_format must be 'structured' or 'text'")

    output = Path(raw.get("output", "out"))
    if not output.is_absolute():
        output = base_dir / output

    return RunConfig(
        data_path=data_path,
        scenario=scenario,
        specific_prior=_parse_specific_prior(raw.get("specific_prior")),
        alternative_prior=_parse_alternative_prior(raw.get("alternative_prior")),
        mcmc=_parse_mcmc(raw.get("mcmc"), seed),
        output=output,
        report_format=report_format,
        study=_parse_study(raw["study"]) if raw.get("study") else None,
        raw=raw,
    )
