"""Declarative pipeline configuration.

One YAML file describes a whole run: preset (or custom stage list),
seed, worker endpoints, and per-stage parameters. The config digest
covers everything that affects output bytes (stages, seed, thresholds,
worker bindings) and deliberately excludes runtime knobs (threads,
cache location, output paths), so a resumed run can verify it is
continuing the same computation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml

from .curriculum import VoteConfig
from .dedup import DedupConfig
from .gateway import ScorerGateway, WorkerEndpoint
from .preference import MpoWeights, RuleReward
from .quality import QualityConfig
from .redistribution import RedistConfig, TargetPrior
from .reference import ReferenceConfig

PRESETS = {
    "vqa_full": ["quality", "reference", "dedup", "redist"],
    "caption": ["quality", "dedup"],
}
STAGE_NAMES = ("quality", "reference", "dedup", "redist")
ROLES = ("reward", "generator", "reference", "embedder", "classifier")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MpoConfig:
    count: int = 8
    temperature: float = 1.0
    rule_kind: str = "exact_match"
    rule_epsilon: float = 0.0
    beta: float = 1.0
    delta: float = 0.0
    weights: MpoWeights = field(default_factory=MpoWeights)

    def rule_for(self, target: str) -> RuleReward:
        return RuleReward(kind=self.rule_kind, target=target, epsilon=self.rule_epsilon)


@dataclass
class PipelineConfig:
    preset: str
    stages: list[str]
    seed: int
    threads: int = 1
    cache: str | bool = False  # False, True (run-local file), or explicit path
    output_dir: str | None = None
    worker_specs: dict = field(default_factory=dict)  # normalized endpoint dicts
    quality: QualityConfig | None = None
    reference: ReferenceConfig | None = None
    dedup: DedupConfig | None = None
    redist: RedistConfig | None = None
    ocl: VoteConfig | None = None
    mpo: MpoConfig | None = None

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.digest_material(), sort_keys=True).encode("utf-8")
        ).hexdigest()

    def digest_material(self) -> dict:
        material: dict = {
            "preset": self.preset,
            "stages": self.stages,
            "seed": self.seed,
            "workers": self.worker_specs,
        }
        if self.quality:
            material["quality"] = {
                "threshold_mode": self.quality.threshold_mode, "tau": self.quality.tau,
                "p": self.quality.p, "tau_abar": self.quality.tau_abar}
        if self.reference:
            material["reference"] = {"tau_atilde": self.reference.tau_atilde}
        if self.dedup:
            material["dedup"] = {
                "delta": self.dedup.delta, "target_cluster_size": self.dedup.target_cluster_size,
                "max_iter": self.dedup.max_iter, "seed": self.dedup.seed}
        if self.redist:
            material["redist"] = {
                "mode": self.redist.mode, "total_target": self.redist.total_target,
                "seed": self.redist.seed,
                "prior": {leaf: str(w) for leaf, w in sorted(self.redist.prior.weights.items())}}
        if self.ocl:
            material["ocl"] = {"K": self.ocl.K, "tau_cl": self.ocl.tau_cl, "n": self.ocl.n,
                               "table": self.ocl.table}
        if self.mpo:
            material["mpo"] = {
                "count": self.mpo.count, "temperature": self.mpo.temperature,
                "rule_kind": self.mpo.rule_kind, "rule_epsilon": self.mpo.rule_epsilon,
                "beta": self.mpo.beta, "delta": self.mpo.delta,
                "weights": [self.mpo.weights.w1, self.mpo.weights.w2, self.mpo.weights.w3]}
        return material

    def build_gateway(self, **gateway_kw) -> ScorerGateway:
        built: dict[str, object] = {}

        def build_endpoint(spec: dict, default_seed: int):
            key = json.dumps(spec, sort_keys=True) + f"|{default_seed}"
            if key not in built:
                endpoint = WorkerEndpoint(
                    transport=spec.get("transport", "mock"),
                    address=spec.get("address", ""),
                    command=spec.get("command", ""),
                    seed=spec.get("seed"),
                    dim=spec.get("dim"),
                )
                built[key] = endpoint.build(default_seed)
            return built[key]

        specs = self.worker_specs
        default_spec = specs.get("default", {"transport": "mock"})
        workers = {
            role: build_endpoint(specs.get(role, default_spec), self.seed)
            for role in ROLES
        }
        refs = []
        ref_specs = specs.get("ocl_refs")
        if ref_specs is None and self.ocl is not None:
            ref_specs = [{"transport": "mock"}] * self.ocl.K
        for k, spec in enumerate(ref_specs or []):
            refs.append(build_endpoint(spec, self.seed + k + 1))
        return ScorerGateway(workers, ocl_refs=refs, **gateway_kw)

    def to_dict(self) -> dict:
        out = self.digest_material()
        out["threads"] = self.threads
        out["cache"] = self.cache
        out["output_dir"] = self.output_dir
        return out


def _prior_from(obj: dict, base_dir: Path) -> TargetPrior:
    if "prior" in obj:
        raw = obj["prior"]
    elif "prior_file" in obj:
        with (base_dir / obj["prior_file"]).open("r", encoding="utf-8") as fin:
            raw = yaml.safe_load(fin)
    else:
        raise ConfigError("redist needs 'prior' (inline map) or 'prior_file'")
    if not isinstance(raw, dict):
        raise ConfigError("redist prior must map capability leaves to weights")
    return TargetPrior({str(leaf): Fraction(str(w)) for leaf, w in raw.items()})


def config_from_dict(obj: dict, base_dir: str | Path = ".") -> PipelineConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a mapping")
    base_dir = Path(base_dir)

    preset = obj.get("preset", "vqa_full")
    if preset in PRESETS:
        stages = list(PRESETS[preset])
    elif preset == "custom":
        stages = list(obj.get("stages", []))
        if not stages:
            raise ConfigError("custom preset requires a nonempty 'stages' list")
        unknown = [s for s in stages if s not in STAGE_NAMES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; valid: {list(STAGE_NAMES)}")
    else:
        raise ConfigError(f"unknown preset '{preset}'; valid: {sorted(PRESETS)} or 'custom'")

    seed = int(obj.get("seed", 0))
    config = PipelineConfig(
        preset=preset,
        stages=stages,
        seed=seed,
        threads=int(obj.get("threads", 1)),
        cache=obj.get("cache", False),
        output_dir=obj.get("output_dir"),
        worker_specs=obj.get("workers", {}),
    )

    try:
        if "quality" in obj:
            q = obj["quality"]
            config.quality = QualityConfig(
                threshold_mode=q.get("threshold_mode", "absolute"),
                tau=q.get("tau"), p=q.get("p"), tau_abar=q["tau_abar"])
        if "reference" in obj:
            config.reference = ReferenceConfig(tau_atilde=obj["reference"]["tau_atilde"])
        if "dedup" in obj:
            d = obj["dedup"]
            config.dedup = DedupConfig(
                delta=d["delta"],
                target_cluster_size=int(d.get("target_cluster_size", 1024)),
                max_iter=int(d.get("max_iter", 50)),
                seed=int(d.get("seed", seed)))
        if "redist" in obj:
            r = obj["redist"]
            config.redist = RedistConfig(
                prior=_prior_from(r, base_dir),
                mode=r.get("mode", "downsample_only"),
                total_target=r.get("total_target"),
                seed=int(r.get("seed", seed)))
        if "ocl" in obj:
            o = obj["ocl"]
            table = o.get("f", o.get("table"))
            if table is not None:
                table = {int(s): int(t) for s, t in table.items()}
            config.ocl = VoteConfig(K=int(o["K"]), tau_cl=float(o["tau_cl"]),
                                    n=int(o["n"]), table=table)
        if "mpo" in obj:
            m = obj["mpo"]
            rule = m.get("rule", {})
            if isinstance(rule, str):
                rule = {"kind": rule}
            elif not isinstance(rule, dict):
                raise ConfigError(
                    f"mpo rule must be a mapping or a kind name, got {type(rule).__name__}")
            weights = m.get("weights")
            config.mpo = MpoConfig(
                count=int(m.get("count", 8)),
                temperature=float(m.get("temperature", 1.0)),
                rule_kind=rule.get("kind", m.get("rule_kind", "exact_match")),
                rule_epsilon=float(rule.get("epsilon", m.get("rule_epsilon", 0.0))),
                beta=float(m.get("beta", 1.0)),
                delta=float(m.get("delta", 0.0)),
                weights=MpoWeights(*weights) if weights else MpoWeights())
    except KeyError as exc:
        raise ConfigError(f"missing required config key: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    missing = [s for s in stages if getattr(config, s) is None]
    if missing:
        raise ConfigError(f"stages {missing} are enabled but have no config section")
    return config


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fin:
        obj = yaml.safe_load(fin)
    if obj is None:
        raise ConfigError(f"config file {path} is empty")
    return config_from_dict(obj, base_dir=path.parent)
