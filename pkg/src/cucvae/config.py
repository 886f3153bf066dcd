"""Configuration tree, YAML round-trips and provenance fingerprints.

One structured config drives every command.  Precedence is
defaults < config file < command-line flags; the resolved config is always
dumped next to the outputs it produced.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import VARIANTS


@dataclass
class AudioConfig:
    """Analysis settings shared by feature extraction, metrics and the
    fallback vocoder."""

    sample_rate: int = 22050
    n_fft: int = 1024
    hop_length: int = 256
    win_length: int = 1024
    n_mels: int = 80
    mel_fmin: float = 0.0
    mel_fmax: float = 8000.0
    mel_floor: float = 1e-5
    f0_min: float = 70.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.3
    griffin_lim_iters: int = 32


@dataclass
class ModelConfig:
    d_model: int = 256
    d_ctx: int = 768
    d_z: int = 2
    encoder_layers: int = 4
    encoder_heads: int = 2
    decoder_layers: int = 4
    decoder_heads: int = 2
    ff_dim: int = 1024
    ff_kernels: tuple[int, int] = (9, 1)
    fusion_heads: int = 8
    vae_layers: int = 4
    vae_channels: int = 256
    predictor_channels: int = 256
    predictor_kernel: int = 3
    dropout: float = 0.1
    use_positions: bool = True
    mask_sentinel_pairs: bool = False
    logvar_clamp: float = 14.0


@dataclass
class ContextConfig:
    embedder: str = "stub"          # "stub" | "bert"
    bert_model: str = "bert-base-uncased"


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    warmup_steps: int = 4000
    adam_betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-9
    grad_clip: float = 1.0
    batch_size: int = 8
    frame_budget: int | None = None  # pack batches by total frames instead
    max_steps: int = 20000
    beta1_max: float = 1e-4
    beta2_max: float = 1e-4
    kl_warmup_steps: int = 10000
    checkpoint_interval: int = 2000
    log_interval: int = 10
    seed: int = 1234


@dataclass
class DataConfig:
    match_threshold: float = 0.85   # edit-similarity gate for book location
    word_boundary_silence: bool = False
    mcd_frame_tolerance: int = 2


@dataclass
class RunConfig:
    variant: str = "cuc_vae"
    context_size: int = 5           # L: utterances kept on each side
    seed: int = 1234
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    context: ContextConfig = field(default_factory=ContextConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if self.context_size < 1:
            raise ValueError("context_size must be >= 1")
        if self.variant == "baseline" and self.context_size != 1:
            warnings.warn(
                "variant 'baseline' does not use cross-utterance context; "
                f"context_size={self.context_size} is ignored"
            )

    @property
    def uses_context(self) -> bool:
        return self.variant == "cuc_vae"

    @property
    def uses_vae(self) -> bool:
        return self.variant != "baseline"

    @property
    def uses_conditional_prior(self) -> bool:
        return self.variant in ("cvae", "cuc_vae")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """Stable hash of the resolved config, stored in checkpoints."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {
    "audio": AudioConfig,
    "model": ModelConfig,
    "context": ContextConfig,
    "training": TrainingConfig,
    "data": DataConfig,
}


def _build_section(cls, values: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {}
    for key, val in values.items():
        if isinstance(val, list):
            val = tuple(val)
        coerced[key] = val
    return cls(**coerced)


def config_from_dict(tree: dict) -> RunConfig:
    tree = dict(tree or {})
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in tree:
            kwargs[name] = _build_section(cls, tree.pop(name))
    allowed = {"variant", "context_size", "seed"}
    unknown = set(tree) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(tree)
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        tree = yaml.safe_load(fh)
    return config_from_dict(tree or {})


def save_config(config: RunConfig, path: str | Path):
    """Dump the resolved config for provenance next to run outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Return a copy of ``config`` with dotted-path overrides applied.

    Keys look like ``"training.max_steps"`` or ``"variant"``; ``None``
    values are skipped so absent CLI flags fall through to the file.
    """
    tree = config.to_dict()
    for key, value in overrides.items():
        if value is None:
            continue
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node[part]
        if parts[-1] not in node:
            raise KeyError(f"unknown config override {key!r}")
        node[parts[-1]] = value
    return config_from_dict(tree)
