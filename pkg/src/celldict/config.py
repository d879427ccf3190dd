"""Run configuration: one JSON file drives every pipeline command.

The file round-trips losslessly (floats survive JSON exactly) and its
content hash is embedded in checkpoints, descriptor stores, and reports
for auditability.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .dataio import config_digest
from .dictlearn import LearnConfig
from .pdhg import PdhgParams
from .validate import ClusterConfig

__all__ = ["ConfigError", "RunConfig"]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configurations."""


_LEARN_DEFAULTS = {
    "k": 4,
    "outer_iters": 30,
    "lambda0": 0.05,
    "gamma": 3.0,
    "lambda_floor": 1e-4,
    "eps_dict": 1e-8,
    "eps_obj": 1e-6,
    "patience": 5,
    "seed": 0,
    "pdhg": {
        "tau": 0.25,
        "sigma": 0.25,
        "theta": 1.0,
        "max_iters": 700,
        "tol_inner": 1e-7,
    },
}

_CLUSTER_DEFAULTS = {
    "k": 2,
    "n_init": 20,
    "seed": 0,
    "pca_components": 15,
    "l2_normalize_channels": True,
    "standardize_atoms": True,
    "n_permutations": 1000,
    "n_bootstrap": 1000,
}


@dataclass
class RunConfig:
    dataset: str = ""
    out_dir: str = ""
    channels: list | None = None
    window: int | None = None
    threads: int = 1
    trace: bool = False
    descriptor_epsilon: float = 1e-8
    learn: dict = field(default_factory=lambda: dict(_LEARN_DEFAULTS))
    cluster: dict = field(default_factory=lambda: dict(_CLUSTER_DEFAULTS))

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        merged = dict(_LEARN_DEFAULTS)
        pdhg = dict(_LEARN_DEFAULTS["pdhg"])
        pdhg.update(self.learn.get("pdhg", {}))
        merged.update(self.learn)
        merged["pdhg"] = pdhg
        self.learn = merged
        cluster = dict(_CLUSTER_DEFAULTS)
        cluster.update(self.cluster)
        self.cluster = cluster
        try:
            self.learn_config()
            self.cluster_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    def learn_config(self) -> LearnConfig:
        fields = dict(self.learn)
        pdhg = PdhgParams(lambda_tv=0.0, **fields.pop("pdhg"))
        return LearnConfig(pdhg=pdhg, **fields)

    def cluster_config(self) -> ClusterConfig:
        fields = {
            k: v
            for k, v in self.cluster.items()
            if k not in ("n_permutations", "n_bootstrap")
        }
        return ClusterConfig(**fields)

    @property
    def n_permutations(self) -> int:
        return int(self.cluster["n_permutations"])

    @property
    def n_bootstrap(self) -> int:
        return int(self.cluster["n_bootstrap"])

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Hash of the semantic configuration only.

        Paths, worker count, and tracing are execution context, not part
        of what was computed; excluding them keeps artifacts byte-identical
        across output directories and parallelism degrees.
        """
        payload = {
            "channels": self.channels,
            "window": self.window,
            "descriptor_epsilon": self.descriptor_epsilon,
            "learn": self.learn,
            "cluster": self.cluster,
        }
        return config_digest(payload)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"config {path} has unknown keys: {sorted(unknown)}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(f"config {path}: {exc}") from exc
