"""Run configuration: one flat dataclass, three named profiles, and a plain
`key = value` config-file format. Precedence when assembling a config is
defaults < profile < config file < explicit overrides (CLI flags).

The data directory for relative corpus paths comes from the `data_dir` key,
falling back to the AWDLM_DATA environment variable.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

DATA_ENV_VAR = "AWDLM_DATA"


@dataclass
class RunConfig:
    # model
    layers: int = 3
    hidden: int = 1150
    embed: int = 400
    # regularization
    dropout_input: float = 0.4
    dropout_hidden: float = 0.3
    dropout_output: float = 0.4
    dropout_embed: float = 0.1
    wdrop: float = 0.5
    alpha: float = 2.0
    beta: float = 1.0
    # weight decay is decoupled L2; the default magnitude is a working
    # placeholder, not a verified reference value
    weight_decay: float = 1.2e-6
    # optimization
    lr: float = 30.0
    clip: float = 0.25
    epochs: int = 750
    nonmono: int = 5
    optimizer: str = "ntasgd"   # ntasgd | sgd | sgd-halving
    # batching / windows
    batch: int = 40
    eval_batch: int = 10
    bptt: int = 70
    bptt_std: float = 5.0
    bptt_p: float = 0.95
    bptt_min: int = 5
    # bookkeeping
    seed: int = 1111
    dtype: str = "float32"
    data_dir: str = ""
    train_file: str = "train.txt"
    valid_file: str = "valid.txt"
    test_file: str = "test.txt"

    def resolved_data_dir(self) -> str:
        return self.data_dir or os.environ.get(DATA_ENV_VAR, "")

    def corpus_path(self, which: str) -> str:
        name = {"train": self.train_file, "valid": self.valid_file,
                "test": self.test_file}[which]
        base = self.resolved_data_dir()
        if os.path.isabs(name) or not base:
            return name
        return os.path.join(base, name)


# profile deltas applied on top of the defaults
PROFILES: dict[str, dict] = {
    # the defaults themselves are the standard single-corpus setup
    "ptb": {},
    # larger corpus variant: bigger batches, heavier input dropout
    "wt2": {"batch": 80, "dropout_input": 0.65},
    # desk-scale profile for tests and demos: small model, regularization off,
    # step size sized for quick memorization
    "tiny": {
        "layers": 2, "hidden": 64, "embed": 32,
        "dropout_input": 0.0, "dropout_hidden": 0.0, "dropout_output": 0.0,
        "dropout_embed": 0.0, "wdrop": 0.0, "alpha": 0.0, "beta": 0.0,
        "weight_decay": 0.0,
        "lr": 10.0, "epochs": 300,
        "batch": 4, "eval_batch": 4, "bptt": 20, "bptt_std": 2.0, "bptt_min": 5,
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise ValueError(f"unknown config key: {name}")
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_file(path: str) -> dict:
    """Read `key = value` lines; blank lines and # comments are skipped."""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            name, raw = line.split("=", 1)
            name = name.strip()
            out[name] = _parse_value(name, raw)
    return out


def make_config(profile: str | None = None, config_file: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if profile:
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        cfg = replace(cfg, **PROFILES[profile])
    if config_file:
        cfg = replace(cfg, **parse_config_file(config_file))
    if overrides:
        clean = {k: v for k, v in overrides.items() if v is not None}
        for k in clean:
            if k not in _FIELD_TYPES:
                raise ValueError(f"unknown config key: {k}")
        cfg = replace(cfg, **clean)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Canonical sorted `key = value` text; the effective-settings record
    every run prints and every checkpoint embeds."""
    lines = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        lines.append(f"{f.name} = {getattr(cfg, f.name)!r}"
                     if isinstance(getattr(cfg, f.name), str)
                     else f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> RunConfig:
    """Inverse of dump_config, used when loading checkpoints."""
    cfg = RunConfig()
    updates: dict = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        name, raw = line.split("=", 1)
        name = name.strip()
        raw = raw.strip()
        if raw.startswith("'") and raw.endswith("'"):
            raw = raw[1:-1]
        updates[name] = _parse_value(name, raw)
    return replace(cfg, **updates)


def diff_configs(a: RunConfig, b: RunConfig) -> list[str]:
    """Names of fields where the two configs disagree."""
    return [f.name for f in fields(RunConfig)
            if getattr(a, f.name) != getattr(b, f.name)]
