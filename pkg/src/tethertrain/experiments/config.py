"""Run configuration: JSON in, validated dataclass out, canonical hash.

Every output file a run produces embeds the config hash and seed in its
header, and `verify` re-derives the hash to confirm nothing drifted.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError

EXPERIMENTS = ("walk_ablation", "film_lr", "rma_grid", "swing_ablation", "full_pipeline")

OUTPUT_ROOT_ENV = "TETHERTRAIN_OUT"


@dataclass
class RunConfig:
    experiment: str
    seeds: list
    out_dir: str | None = None
    deterministic: bool = True
    telemetry: bool = False
    env: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    swing: dict = field(default_factory=dict)
    film_lr_ratios: list = field(default_factory=lambda: [0.05, 5.0, 40.0])
    raw: dict = field(default_factory=dict, repr=False)

    def canonical_json(self) -> str:
        doc = {
            "experiment": self.experiment,
            "seeds": list(self.seeds),
            "deterministic": self.deterministic,
            "telemetry": self.telemetry,
            "env": self.env,
            "ppo": self.ppo,
            "stages": self.stages,
            "eval": self.eval,
            "swing": self.swing,
            "film_lr_ratios": self.film_lr_ratios,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def resolve_out_dir(self) -> Path:
        root = self.out_dir or os.environ.get(OUTPUT_ROOT_ENV, "runs")
        return Path(root) / self.experiment


def _require(cond, message):
    if not cond:
        raise ConfigurationError(message)


def load_config(path_or_dict) -> RunConfig:
    if isinstance(path_or_dict, (str, Path)):
        try:
            doc = json.loads(Path(path_or_dict).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config does not parse as JSON: {exc}") from exc
    else:
        doc = dict(path_or_dict)

    _require("experiment" in doc, "missing field 'experiment'")
    exp = doc["experiment"]
    _require(
        exp in EXPERIMENTS,
        f"unknown experiment id {exp!r}; valid ids: {', '.join(EXPERIMENTS)}",
    )
    seeds = doc.get("seeds", [0])
    _require(
        isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds),
        "field 'seeds' must be a non-empty list of integers",
    )
    for section in ("env", "ppo", "stages", "eval", "swing"):
        if section in doc:
            _require(isinstance(doc[section], dict), f"field '{section}' must be an object")
    ratios = doc.get("film_lr_ratios", [0.05, 5.0, 40.0])
    _require(
        isinstance(ratios, list) and all(isinstance(r, (int, float)) and r > 0 for r in ratios),
        "field 'film_lr_ratios' must be a list of positive numbers",
    )
    return RunConfig(
        experiment=exp,
        seeds=seeds,
        out_dir=doc.get("out_dir"),
        deterministic=bool(doc.get("deterministic", True)),
        telemetry=bool(doc.get("telemetry", False)),
        env=doc.get("env", {}),
        ppo=doc.get("ppo", {}),
        stages=doc.get("stages", {}),
        eval=doc.get("eval", {}),
        swing=doc.get("swing", {}),
        film_lr_ratios=list(ratios),
        raw=doc,
    )
