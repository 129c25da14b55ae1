"""Run configuration and the simple key=value config-file format."""

import os
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import ConfigurationError
from .layouts import SCENARIOS
from .sampler import GuidanceConfig

MODES = ("full", "gsa", "gsa-concept", "gsl", "off", "prompt-only")


def parse_kv_text(text: str) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_kv_file(path) -> dict:
    with open(path) as fh:
        return parse_kv_text(fh.read())


def write_kv_file(path, values: dict) -> None:
    with open(path, "w") as fh:
        for key in sorted(values):
            fh.write(f"{key}={values[key]}\n")


@dataclass
class RunConfig:
    """Resolved settings for one pipeline invocation."""

    backend: str = "analytic"       # "analytic" or a checkpoint path
    images_dir: Optional[str] = None
    labels_dir: Optional[str] = None
    store_dir: Optional[str] = None
    out_dir: Optional[str] = None
    scenario: Optional[str] = None
    mode: str = "full"
    steps: Optional[int] = None     # N_t; stage 2 defaults to the store's value
    n_p: Optional[int] = None
    n_components: int = 8
    s: float = 7.5
    sigma: float = 0.1
    tau: float = 0.3
    w_sa: float = 1.0
    w_sl: float = 1.0
    seed: int = 0
    workers: int = 1
    refit_pca: bool = False
    tau_sweep: tuple = ()

    def guidance(self, n_t: int) -> GuidanceConfig:
        return GuidanceConfig(
            s=self.s,
            sigma=self.sigma,
            tau=self.tau,
            n_t=n_t,
            n_p=self.n_p,
            w_sa=self.w_sa,
            w_sl=self.w_sl,
            seed=self.seed,
        )

    def validate(self, require=()) -> None:
        for name in require:
            path = getattr(self, name)
            if path is None:
                raise ConfigurationError(f"--{name.replace('_dir', '')} is required")
            if name.endswith("_dir") and name != "out_dir" and not os.path.exists(path):
                raise ConfigurationError(f"{name}={path} does not exist")
        if self.backend != "analytic" and not os.path.exists(self.backend):
            raise ConfigurationError(f"backend checkpoint {self.backend} does not exist")
        if self.scenario is not None and self.scenario not in SCENARIOS:
            raise ConfigurationError(
                f"scenario {self.scenario!r} not in vocabulary {SCENARIOS}"
            )
        if self.mode not in MODES:
            raise ConfigurationError(f"mode {self.mode!r} not in {MODES}")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def to_kv(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out[f.name] = str(value)
        return out
