"""Flat key=value configuration with namespaced keys and strict validation.

Unknown keys are rejected.  `#` starts a comment; blank lines are ignored.
The resolved configuration (all defaults filled in) serializes back to the
same format for the report's provenance block.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .brain_graph import GraphParams
from .classify import RfParams
from .errors import ConfigError
from .featsel import ElasticNetParams
from .grading.types import GradingParams
from .synth import SynthSpec, uniform_perturbation


def _parse_int_list(s: str) -> list[int]:
    return [int(v) for v in s.split(";") if v.strip() != ""]


# key -> (parser, default); None default means "unset"
_SCHEMA = {
    "paths.manifest": (str, None),
    "paths.templates": (str, None),
    "paths.workdir": (str, None),
    "paths.report": (str, None),
    "grading.radius": (int, 2),
    "grading.k": (int, 50),
    "grading.search": (int, 3),
    "grading.epsilon": (float, None),
    "grading.method": (str, "exact"),
    "grading.pm_iterations": (int, 4),
    "graph.sigma_mode": (str, "median"),
    "graph.sigma": (float, None),
    "graph.min_voxels": (int, 10),
    "featsel.lambda1": (float, None),
    "featsel.lambda2": (float, 1.0),
    "featsel.target_nonzeros": (int, 50),
    "featsel.max_iterations": (int, 1000),
    "featsel.tolerance": (float, 1e-8),
    "classify.kind": (str, "both"),
    "classify.svm_c": (float, None),
    "classify.rf_trees": (int, 500),
    "classify.rf_runs": (int, 30),
    "classify.rf_mtry": (int, None),
    "classify.rf_min_leaf": (int, 1),
    "classify.rf_max_depth": (int, None),
    "pipeline.seed": (int, 0),
    "pipeline.threads": (int, 1),
    "synth.dim": (int, 32),
    "synth.structures": (int, 6),
    "synth.affected": (_parse_int_list, None),
    "synth.noise_sd": (float, 0.1),
    "synth.severity_cn": (float, 0.0),
    "synth.severity_smci": (float, 0.1),
    "synth.severity_pmci": (float, 0.4),
    "synth.severity_ad": (float, 0.5),
    "synth.count_cn": (int, 10),
    "synth.count_smci": (int, 5),
    "synth.count_pmci": (int, 5),
    "synth.count_ad": (int, 10),
    "synth.age_slope": (float, 0.01),
    "synth.seed": (int, None),
    "synth.out": (str, None),
}

_CHOICES = {
    "grading.method": ("exact", "patchmatch"),
    "graph.sigma_mode": ("median", "fixed"),
    "classify.kind": ("svm", "rf", "both"),
}


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=dict)
    source_path: str | None = None

    def get(self, key: str):
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if key in self.values:
            return self.values[key]
        return _SCHEMA[key][1]

    def set(self, key: str, value) -> None:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = value

    def require(self, key: str):
        v = self.get(key)
        if v is None:
            raise ConfigError(f"config key {key!r} is required for this command")
        return v

    # --- path helpers -------------------------------------------------------

    def _resolve(self, p: str) -> str:
        if os.path.isabs(p) or self.source_path is None:
            return p
        return os.path.join(os.path.dirname(os.path.abspath(self.source_path)), p)

    @property
    def workdir(self) -> str:
        return self._resolve(self.require("paths.workdir"))

    @property
    def manifest_path(self) -> str:
        v = self.get("paths.manifest")
        if v is None:
            # synth output manifest is the default cohort
            return os.path.join(self.synth_out, "manifest.csv")
        return self._resolve(v)

    @property
    def templates_path(self) -> str:
        v = self.get("paths.templates")
        return self._resolve(v) if v is not None else self.manifest_path

    @property
    def report_path(self) -> str:
        v = self.get("paths.report")
        return self._resolve(v) if v is not None else os.path.join(self.workdir, "report.txt")

    @property
    def synth_out(self) -> str:
        v = self.get("synth.out")
        return self._resolve(v) if v is not None else os.path.join(self.workdir, "data")

    # --- parameter objects ----------------------------------------------------

    def grading_params(self) -> GradingParams:
        return GradingParams(
            radius=self.get("grading.radius"),
            k=self.get("grading.k"),
            search=self.get("grading.search"),
            epsilon=self.get("grading.epsilon"),
            method=self.get("grading.method"),
            pm_iterations=self.get("grading.pm_iterations"),
            seed=self.get("pipeline.seed"),
        )

    def graph_params(self) -> GraphParams:
        return GraphParams(
            sigma_mode=self.get("graph.sigma_mode"),
            sigma=self.get("graph.sigma"),
            min_voxels=self.get("graph.min_voxels"),
        )

    def enet_params(self) -> ElasticNetParams:
        return ElasticNetParams(
            lambda1=self.get("featsel.lambda1"),
            lambda2=self.get("featsel.lambda2"),
            target_nonzeros=self.get("featsel.target_nonzeros"),
            max_iterations=self.get("featsel.max_iterations"),
            tolerance=self.get("featsel.tolerance"),
        )

    def rf_params(self) -> RfParams:
        return RfParams(
            n_trees=self.get("classify.rf_trees"),
            mtry=self.get("classify.rf_mtry"),
            min_leaf=self.get("classify.rf_min_leaf"),
            max_depth=self.get("classify.rf_max_depth"),
        )

    def synth_spec(self) -> SynthSpec:
        dim = self.get("synth.dim")
        n_structures = self.get("synth.structures")
        affected = self.get("synth.affected")
        if affected is None:
            affected = [s for s in range(1, n_structures + 1) if s % 2 == 1]
        seed = self.get("synth.seed")
        if seed is None:
            seed = self.get("pipeline.seed")
        return SynthSpec(
            dims=(dim, dim, dim),
            n_structures=n_structures,
            perturbation=uniform_perturbation(
                affected,
                cn=self.get("synth.severity_cn"),
                smci=self.get("synth.severity_smci"),
                pmci=self.get("synth.severity_pmci"),
                ad=self.get("synth.severity_ad"),
            ),
            noise_sd=self.get("synth.noise_sd"),
            counts={
                "CN": self.get("synth.count_cn"),
                "sMCI": self.get("synth.count_smci"),
                "pMCI": self.get("synth.count_pmci"),
                "AD": self.get("synth.count_ad"),
            },
            age_slope=self.get("synth.age_slope"),
            seed=seed,
        )

    def resolved_items(self) -> list[tuple[str, str]]:
        """Every schema key with its effective value, for provenance."""
        out = []
        for key in sorted(_SCHEMA):
            v = self.get(key)
            if v is None:
                out.append((key, ""))
            elif isinstance(v, list):
                out.append((key, ";".join(str(x) for x in v)))
            elif isinstance(v, float):
                out.append((key, f"{v:.12g}"))
            else:
                out.append((key, str(v)))
        return out


def parse_config(path) -> PipelineConfig:
    try:
        text = open(path).read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = PipelineConfig(source_path=os.path.abspath(path))
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in cfg.values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        parser = _SCHEMA[key][0]
        try:
            parsed = parser(val)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {val!r} for {key}") from None
        if key in _CHOICES and parsed not in _CHOICES[key]:
            raise ConfigError(
                f"{path}:{lineno}: {key} must be one of {_CHOICES[key]}, got {parsed!r}"
            )
        cfg.values[key] = parsed
    return cfg
