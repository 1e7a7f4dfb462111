"""Run configuration: flat key=value files over desk/paper profile defaults.

The desk profile is sized to train on a laptop CPU in minutes; the paper
profile carries the full-scale reference settings (learning rate 0.001,
betas 0.9/0.998, epsilon 1e-9, dropout 0.1, clip 2.0, K=7, warmup 1000/8000,
beam 200x6, document cap 512). Unknown keys are rejected loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError

ENCODER_MODES = ("fixed-finetuned", "trainable", "fresh")
DECAY_MODES = ("constant", "inv_sqrt")


@dataclass
class RunConfig:
    seed: int = 13
    # shared encoder
    d_enc: int = 64
    enc_blocks: int = 2
    enc_heads: int = 4
    bilstm_hidden: int = 32
    max_len: int = 512
    vocab_size: int = 2000
    # generator
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    # ablation toggles
    filter_enabled: bool = True
    filter_k: int = 7
    tagger_crf: bool = True
    fusion_enabled: bool = True
    encoder_mode: str = "fixed-finetuned"
    # beam
    beam_width: int = 16
    beam_depth: int = 6
    beam_filter_present: bool = False
    # optimization
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.998
    eps: float = 1e-9
    dropout: float = 0.0
    clip_norm: float = 2.0
    warmup_pke: int = 100
    warmup_akg: int = 200
    lr_decay: str = "constant"
    # training loop
    train_steps_pke: int = 2000
    train_steps_akg: int = 2000
    train_batch_size: int = 4
    train_patience: int = 10
    train_eval_every: int = 100
    train_log_every: int = 50
    # evaluation
    eval_ks: tuple = (5, 10)
    eval_r_k: int = 50
    eval_stem: bool = False
    eval_dedup: bool = True

    def validate(self) -> "RunConfig":
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"encoder.mode must be one of {ENCODER_MODES}, got '{self.encoder_mode}'")
        if self.lr_decay not in DECAY_MODES:
            raise ConfigError(f"lr_decay must be one of {DECAY_MODES}, got '{self.lr_decay}'")
        if self.filter_k < 1:
            raise ConfigError("filter.k must be >= 1")
        if self.beam_width < 1 or self.beam_depth < 1:
            raise ConfigError("beam width and depth must be >= 1")
        if any(k < 1 for k in self.eval_ks):
            raise ConfigError("eval.ks must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        return self

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration fields: {sorted(unknown)}")
        d = dict(d)
        if "eval_ks" in d:
            d["eval_ks"] = tuple(d["eval_ks"])
        return cls(**d).validate()


# full-scale geometry and optimizer settings behind --profile paper
PAPER_OVERRIDES = dict(
    d_enc=768, enc_blocks=12, enc_heads=12, bilstm_hidden=512,
    d_model=768, layers=4, heads=8, vocab_size=50000,
    beam_width=200, beam_depth=6,
    lr=0.001, beta1=0.9, beta2=0.998, eps=1e-9, dropout=0.1, clip_norm=2.0,
    filter_k=7, warmup_pke=1000, warmup_akg=8000, max_len=512,
)


def default_config(profile: str = "desk") -> RunConfig:
    if profile == "desk":
        return RunConfig()
    if profile == "paper":
        return replace(RunConfig(), **PAPER_OVERRIDES)
    raise ConfigError(f"unknown profile '{profile}' (expected desk or paper)")


# dotted file key -> dataclass field
KEYMAP = {
    "seed": "seed",
    "d_enc": "d_enc",
    "enc_blocks": "enc_blocks",
    "enc_heads": "enc_heads",
    "bilstm_hidden": "bilstm_hidden",
    "max_len": "max_len",
    "vocab_size": "vocab_size",
    "d_model": "d_model",
    "layers": "layers",
    "heads": "heads",
    "filter.enabled": "filter_enabled",
    "filter.k": "filter_k",
    "tagger.crf": "tagger_crf",
    "fusion.enabled": "fusion_enabled",
    "encoder.mode": "encoder_mode",
    "beam.width": "beam_width",
    "beam.depth": "beam_depth",
    "beam.filter_present": "beam_filter_present",
    "lr": "lr",
    "beta1": "beta1",
    "beta2": "beta2",
    "eps": "eps",
    "dropout": "dropout",
    "clip_norm": "clip_norm",
    "warmup_pke": "warmup_pke",
    "warmup_akg": "warmup_akg",
    "lr_decay": "lr_decay",
    "train.steps_pke": "train_steps_pke",
    "train.steps_akg": "train_steps_akg",
    "train.batch_size": "train_batch_size",
    "train.patience": "train_patience",
    "train.eval_every": "train_eval_every",
    "train.log_every": "train_log_every",
    "eval.ks": "eval_ks",
    "eval.r_k": "eval_r_k",
    "eval.stem": "eval_stem",
    "eval.dedup": "eval_dedup",
}


def _parse_value(field_name: str, raw: str, template: RunConfig):
    raw = raw.strip()
    current = getattr(template, field_name)
    if field_name == "eval_ks":
        try:
            return tuple(int(x) for x in raw.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"eval.ks expects integers, got '{raw}'")
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean for '{field_name}', got '{raw}'")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"expected an integer for '{field_name}', got '{raw}'")
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"expected a number for '{field_name}', got '{raw}'")
    return raw


def apply_overrides(cfg: RunConfig, pairs: dict) -> RunConfig:
    """Apply dotted-key overrides (already-parsed or raw strings)."""
    updates = {}
    for key, raw in pairs.items():
        if key not in KEYMAP:
            raise ConfigError(f"unknown configuration key '{key}'")
        name = KEYMAP[key]
        updates[name] = _parse_value(name, raw, cfg) if isinstance(raw, str) else raw
    return replace(cfg, **updates).validate()


def load_config(path: str | None = None, profile: str = "desk",
                overrides: dict | None = None) -> RunConfig:
    """Profile defaults, then file keys, then explicit overrides."""
    cfg = default_config(profile)
    if path is not None:
        pairs = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got '{stripped}'")
                key, _, val = stripped.partition("=")
                pairs[key.strip()] = val
        cfg = apply_overrides(cfg, pairs)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()
