"""Run configuration: a flat ``key = value`` file with ``#`` comments.

Every key has a default and unknown keys are rejected. ``to_text`` writes the
same format back, one key per line in field order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .optim import AblationConfig, AdaptationPolicy
from .scoring import ScoreFusionWeights


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    # data
    data_source: str = "synthetic"
    data_n: int = 2000
    data_path: str = ""
    pretrain_frac: float = 0.2
    val_frac: float = 0.15
    test_frac: float = 0.15
    # encoder
    vocab_size: int = 2048
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    max_seq_len: int = 32
    ffn_dim: int = 128
    # pre-training of the base: the held-out slice plus pretrain_n extra
    # synthetic pairs (disjoint from the corpus)
    pretrain_n: int = 6000
    pretrain_epochs: int = 6
    pretrain_lr: float = 0.002
    # adapters
    rank: int = 4
    lora_scale: float = 1.0
    targets: str = "query,value,head"
    # optimiser
    policy: str = "fixed"
    base_lr: float = 0.5
    base_alpha: float = 0.25
    base_beta: float = 1.0
    grid: str = "0.25:1.0,0.5:0.5,0.1:0.5"
    use_adaptive_rates: bool = True
    use_lowrank: bool = True
    epochs: int = 15
    batch_size: int = 16
    # scoring
    density_scoring: bool = True
    alpha_mix: float = 0.5
    beta_loc: float = 0.5
    align_threshold: float = 0.5
    # output
    out_dir: str = "runs"

    def __post_init__(self):
        if self.data_source not in ("synthetic", "tsv"):
            raise ConfigError(f"data_source must be 'synthetic' or 'tsv', got {self.data_source!r}")
        if self.data_source == "tsv" and not self.data_path:
            raise ConfigError("data_source = tsv needs data_path")
        for name in ("epochs", "batch_size", "rank"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.pretrain_epochs < 0 or self.seed < 0 or self.pretrain_n < 0:
            raise ConfigError("pretrain_epochs, pretrain_n and seed must be non-negative")
        if self.pretrain_n % 2:
            raise ConfigError("pretrain_n must be even")
        for name in ("pretrain_lr", "base_lr", "base_alpha", "base_beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.rank >= min(self.embed_dim, self.ffn_dim):
            raise ConfigError(f"rank {self.rank} must be below the encoder width min({self.embed_dim}, {self.ffn_dim})")
        if not -1.0 < self.align_threshold < 1.0:
            raise ConfigError("align_threshold must lie in (-1, 1)")
        self.encoder_config()
        self.fusion_weights()
        self.adaptation_policy()

    # --- derived objects ---------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=self.vocab_size, embed_dim=self.embed_dim, num_heads=self.num_heads,
            num_layers=self.num_layers, max_seq_len=self.max_seq_len, ffn_dim=self.ffn_dim,
            seed=self.seed,
        )

    def fusion_weights(self) -> ScoreFusionWeights:
        try:
            return ScoreFusionWeights(self.alpha_mix, self.beta_loc)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def grid_pairs(self):
        pairs = []
        for item in filter(None, (s.strip() for s in self.grid.split(","))):
            try:
                a, b = item.split(":")
                pairs.append((float(a), float(b)))
            except ValueError as exc:
                raise ConfigError(f"bad grid entry {item!r}; expected alpha:beta") from exc
        return tuple(pairs)

    def adaptation_policy(self) -> AdaptationPolicy:
        try:
            return AdaptationPolicy(self.policy, self.base_alpha, self.base_beta, self.grid_pairs())
        except ValueError as exc:
            raise ConfigError(f"bad policy settings: {exc}") from exc

    def ablation(self) -> AblationConfig:
        return AblationConfig(self.use_adaptive_rates, self.use_lowrank)

    def target_list(self):
        return tuple(t.strip() for t in self.targets.split(",") if t.strip())

    # --- text form -----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TRUE, _FALSE = {"true", "yes", "1", "on"}, {"false", "no", "0", "off"}


def _convert(key, raw):
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}") from exc
    return raw


def parse_assignments(lines, source="<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def load_config(path=None, overrides=(), **direct) -> RunConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides, then ``direct`` kwargs."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_assignments(text.splitlines(), str(path)))
    values.update(parse_assignments(overrides, "--set"))
    for key, v in direct.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        if v is not None:
            values[key] = v
    return RunConfig(**values)
