"""Run configuration: nested dataclasses, a TOML-subset reader/writer (the
interpreter here has no TOML library), dotted-key overrides, and the JSON
mirror every run writes next to its outputs.

Supported TOML subset: [section] and [section.sub] tables, string / int /
float / bool scalars, flat homogeneous arrays, and # comments.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .corpus import CorpusConfig


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleSection:
    T: int = 1000
    kind: str = "linear"


@dataclass
class PolicySection:
    k: int = 6
    p: float = 0.1
    p_hat: float = 0.1
    one_shot_phase_fraction: float = 0.1


@dataclass
class SamplerSection:
    steps: int = 10
    scale_c: float = 2.0
    scale_s: float = 2.0


@dataclass
class CodecSection:
    kind: str = "identity"
    f: int = 1
    latent_channels: int = 1
    base_width: int = 32
    train_steps: int = 1500
    batch_size: int = 16
    lr: float = 2e-3


@dataclass
class ModelSection:
    widths: list = field(default_factory=lambda: [16, 40, 64])
    cond_dim: int = 64
    cond_proj_channels: int = 8
    temb_dim: int = 128


@dataclass
class TrainSection:
    steps: int = 12000
    batch_size: int = 16
    lr: float = 2e-4
    ema_decay: float = 0.999
    augment_prob: float = 0.5
    log_every: int = 200


@dataclass
class DistillSection:
    steps: int = 1500
    batch_size: int = 16
    lr: float = 2e-5
    log_every: int = 100


@dataclass
class SRSection:
    source_resolution: int = 32
    target_resolution: int = 128
    steps: int = 4000
    batch_size: int = 8
    lr: float = 2e-4
    log_every: int = 200


@dataclass
class RunConfig:
    resolution: int = 32
    seed: int = 0
    out_dir: str = "runs/default"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    policy: PolicySection = field(default_factory=PolicySection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    codec: CodecSection = field(default_factory=CodecSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    distill: DistillSection = field(default_factory=DistillSection)
    sr: SRSection = field(default_factory=SRSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json_mirror(self, out_dir: str | Path):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(json.dumps(self.to_dict(), indent=1))


_SECTIONS = {f.name: f for f in fields(RunConfig) if f.name not in ("resolution", "seed", "out_dir")}


def _parse_scalar(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [] if not inner else [_parse_scalar(v) for v in inner.split(",")]
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r}")


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def parse_toml(text: str) -> dict:
    data: dict = {}
    current = data
    for raw in text.splitlines():
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = data
            for part in line[1:-1].strip().split("."):
                current = current.setdefault(part.strip(), {})
            continue
        if "=" not in line:
            raise ConfigError(f"cannot parse line {raw!r}")
        key, val = line.split("=", 1)
        current[key.strip()] = _parse_scalar(val)
    return data


def _format_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_scalar(x) for x in v) + "]"
    return repr(v)


def write_toml(data: dict) -> str:
    lines = []
    scalars = {k: v for k, v in data.items() if not isinstance(v, dict)}
    for k, v in scalars.items():
        lines.append(f"{k} = {_format_scalar(v)}")
    for section, sub in data.items():
        if not isinstance(sub, dict):
            continue
        lines.append("")
        lines.append(f"[{section}]")
        for k, v in sub.items():
            if isinstance(v, dict):
                raise ConfigError("nested tables deeper than one level are not supported")
            lines.append(f"{k} = {_format_scalar(v)}")
    return "\n".join(lines) + "\n"


def config_from_dict(data: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in data.items():
        if key in ("resolution", "seed"):
            setattr(cfg, key, int(value))
        elif key == "out_dir":
            cfg.out_dir = str(value)
        elif key in _SECTIONS:
            section = getattr(cfg, key)
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a table")
            for sk, sv in value.items():
                if not hasattr(section, sk):
                    raise ConfigError(f"unknown key {key}.{sk}")
                cur = getattr(section, sk)
                if isinstance(cur, tuple):
                    sv = tuple(sv)
                elif isinstance(cur, bool):
                    sv = bool(sv)
                elif isinstance(cur, int) and not isinstance(sv, bool):
                    sv = int(sv)
                elif isinstance(cur, float):
                    sv = float(sv)
                setattr(section, sk, sv)
        else:
            raise ConfigError(f"unknown config section {key!r}")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return config_from_dict(parse_toml(path.read_text()))


def apply_overrides(cfg: RunConfig, overrides: list) -> RunConfig:
    """--set section.key=value (or key=value for top-level scalars)."""
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not of the form key=value")
        key, val = ov.split("=", 1)
        parts = key.strip().split(".")
        parsed = _parse_scalar(val)
        if len(parts) == 1:
            if not hasattr(cfg, parts[0]):
                raise ConfigError(f"unknown config key {key!r}")
            cur = getattr(cfg, parts[0])
            setattr(cfg, parts[0], type(cur)(parsed) if not isinstance(cur, str) else str(parsed))
        elif len(parts) == 2:
            if parts[0] not in _SECTIONS:
                raise ConfigError(f"unknown config section {parts[0]!r}")
            section = getattr(cfg, parts[0])
            if not hasattr(section, parts[1]):
                raise ConfigError(f"unknown key {key!r}")
            cur = getattr(section, parts[1])
            if isinstance(cur, tuple):
                parsed = tuple(parsed)
            elif isinstance(cur, bool):
                parsed = bool(parsed)
            elif isinstance(cur, int) and not isinstance(parsed, bool):
                parsed = int(parsed)
            elif isinstance(cur, float):
                parsed = float(parsed)
            setattr(section, parts[1], parsed)
        else:
            raise ConfigError(f"override key {key!r} nests too deep")
    return cfg
