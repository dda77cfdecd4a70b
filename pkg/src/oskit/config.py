"""Sectioned key=value config files with a strict schema.

Layout: ``[data]``, ``[train]``, ``[eval]``, and one ``[detector.<method>]``
section per detector override. Unknown sections or keys are hard errors,
so a typo cannot silently fall back to a default. Values are plain text;
full-line comments start with ``#``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .detectors import METHOD_NAMES
from .errors import ConfigError
from .training import REGIMES, TrainConfig

_REQUIRED = object()


def _as_int(s: str) -> int:
    return int(s, 10)


def _as_widths(s: str) -> tuple[int, ...]:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty width list")
    return tuple(int(p, 10) for p in parts)


_SCHEMA: dict[str, dict[str, tuple]] = {
    "data": {
        "root": (str, ""),  # empty: fall back to OSKIT_DATA_DIR
        "dataset": (str, "mnist"),
        "background": (str, ""),
        "outliers": (str, "fashion"),
    },
    "train": {
        "regime": (str, _REQUIRED),
        "epochs": (_as_int, 16),
        "batch": (_as_int, 64),
        "lr": (float, 0.004),
        "momentum": (float, 0.9),
        "weight_decay": (float, 5e-5),
        "lr_decay_factor": (float, 0.1),
        "lr_decay_every": (_as_int, 12),
        "xi": (float, 5.0),
        "lambda_b": (float, 0.1),
        "seed": (_as_int, 0),
        "feature_width": (_as_int, 2),
        "widths": (_as_widths, (8, 16)),
        "background_n": (_as_int, 2000),
        "train_n": (_as_int, 0),  # 0: use the full training split
    },
    "eval": {
        "n_each": (_as_int, 500),
        "runs": (_as_int, 5),
        "tpr": (float, 0.95),
        "seed": (_as_int, 0),
    },
}

_DETECTOR_KEYS: dict[str, dict[str, tuple]] = {
    "odin": {"temperature": (float, 1000.0), "epsilon": (float, 0.002)},
    "openmax": {"tail": (_as_int, 20), "alpha": (_as_int, 3)},
    "ocsvm": {"nu": (float, 0.05), "gamma": (float, 0.0)},  # 0: per-dim default
    "tau-softmax": {},
    "tau-sigmoid": {},
    "doc": {},
    "mahalanobis": {},
}


@dataclass(frozen=True)
class Config:
    data: dict
    train: dict
    eval: dict
    detectors: dict[str, dict] = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            regime=t["regime"],
            epochs=t["epochs"],
            batch_size=t["batch"],
            lr=t["lr"],
            momentum=t["momentum"],
            weight_decay=t["weight_decay"],
            lr_decay_factor=t["lr_decay_factor"],
            lr_decay_every=t["lr_decay_every"],
            xi=t["xi"],
            lambda_b=t["lambda_b"],
            seed=t["seed"],
        )


def parse_sections(text: str) -> dict[str, dict[str, str]]:
    """Raw section -> key -> value mapping; duplicates are errors."""
    sections: dict[str, dict[str, str]] = {}
    current: dict[str, str] | None = None
    name = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            current = {}
            sections[name] = current
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key before any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{name}]")
        current[key] = value.strip()
    return sections


def _apply_schema(section: str, raw: dict[str, str], schema: dict[str, tuple]) -> dict:
    out = {}
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                out[key] = parse(raw[key])
            except (ValueError, TypeError) as e:
                raise ConfigError(f"bad value for {key!r} in [{section}]: {raw[key]!r}") from e
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r} in [{section}]")
        else:
            out[key] = default
    return out


def load_config(path) -> Config:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    raw = parse_sections(p.read_text())
    known = set(_SCHEMA)
    detectors: dict[str, dict] = {}
    for name in raw:
        if name in known:
            continue
        if name.startswith("detector."):
            method = name[len("detector.") :]
            if method not in METHOD_NAMES:
                raise ConfigError(f"unknown detector section [{name}]")
            detectors[method] = _apply_schema(name, raw[name], _DETECTOR_KEYS[method])
            continue
        raise ConfigError(f"unknown section [{name}]")
    parsed = {s: _apply_schema(s, raw.get(s, {}), _SCHEMA[s]) for s in _SCHEMA}
    # [train] is mandatory because regime has no default
    if "train" not in raw:
        raise ConfigError("missing required key 'regime' in [train]")
    cfg = Config(parsed["data"], parsed["train"], parsed["eval"], detectors)
    if cfg.train["regime"] not in REGIMES:
        raise ConfigError(f"unknown regime {cfg.train['regime']!r}")
    if cfg.train["regime"] == "background_reg" and not cfg.data["background"]:
        raise ConfigError("regime background_reg needs 'background' in [data]")
    return cfg
