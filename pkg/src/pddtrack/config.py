"""Pipeline configuration and its flat ``key = value`` file format."""

import dataclasses
from dataclasses import dataclass, fields

import numpy as np

from .association import AssocConfig
from .gm_state import STATE_DIM
from .update import UpdateConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # implicit representation
    sampling_period: float = 10.0
    border: int = 5
    min_separation: float = 3.0  # in cells
    cov_inflation: float = 0.0
    # predictor
    batch_size: int = 24
    epochs: int = 20
    filters: int = 16
    loss: str = "kl"
    relu_output: bool = True
    l2_kernel: float = 1e-4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    readout_bias: float = 1.0
    denormalize_prediction: bool = True
    warmup: str = "persistence"
    # update
    p_detect: float = 0.9
    weight_threshold: float = 0.5
    sigma_birth: float = 20.0
    weight_birth: float = 1.0
    clutter_rate: float = 2.0
    meas_noise: float = 10.0
    truncate_thresh: float = 1e-5
    merge_dist: float = 4.0
    # association
    a_threshold: int = 5
    a_birth: int = 5
    a_attenuation: int = 2
    a_amplification: int = 1
    coast_decaying: bool = True
    # evaluation
    ospa_c: float = 100.0
    ospa_p: float = 1.0
    iou_thresh: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("kl", "jsd"):
            raise ConfigError(f"loss must be 'kl' or 'jsd', got {self.loss!r}")
        if self.warmup != "persistence":
            raise ConfigError(f"unsupported warmup policy {self.warmup!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.filters < 1:
            raise ConfigError("batch_size, epochs and filters must be positive")
        if self.sampling_period <= 0:
            raise ConfigError("sampling_period must be positive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def update_config(self, extent):
        area = float(extent[0]) * float(extent[1])
        return UpdateConfig(
            H=np.eye(STATE_DIM), R=self.meas_noise * np.eye(STATE_DIM), p_detect=self.p_detect,
            clutter_rate=self.clutter_rate, area=area, size_span=(float(extent[0]), float(extent[1])),
            weight_threshold=self.weight_threshold, sigma_birth=self.sigma_birth * np.eye(STATE_DIM),
            weight_birth=self.weight_birth, a_birth=self.a_birth, truncate_thresh=self.truncate_thresh,
            merge_dist=self.merge_dist,
        )

    def assoc_config(self):
        return AssocConfig(self.a_threshold, self.a_birth, self.a_amplification, self.a_attenuation,
                           self.coast_decaying)


def _parse_value(name, typ, text):
    text = text.strip()
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    try:
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r}") from exc
    return text


def _field_types():
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: hints.get(f.type, f.type) if isinstance(f.type, str) else f.type
            for f in fields(PipelineConfig)}


def parse_config(text, base=None):
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    types = _field_types()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, types[key], value)
    base = base or PipelineConfig()
    return dataclasses.replace(base, **values)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)


def dump_config(cfg):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
