"""Flat key=value run configuration with documented defaults.

A config file holds ``key = value`` lines (``#`` comments allowed); CLI
``--set key=value`` flags override file values. Unknown keys are rejected.
``build_train_config`` assembles the typed config objects from the flat
dictionary.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ValidationError
from .gcg import GcgConfig, Similarity
from .gnn import Activation, Arch, GnnConfig
from .objective import LossConfig, LossSim
from .synth import SynthSpec
from .trainer import TrainConfig


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValidationError(f"expected a boolean, got {raw!r}")


def _parse_str(raw: str) -> str:
    return raw.strip()


# key -> (default, parser, help)
DEFAULTS: dict[str, tuple] = {
    "data.train_corpus": ("", _parse_str, "path to the training corpus jsonl"),
    "data.train_labels": ("", _parse_str, "path to the training labels json"),
    "data.charges": ("", _parse_str, "path to the charge phrase list"),
    "features.dim": (128, int, "hashed-TF feature dimension"),
    "features.embeddings": ("", _parse_str, "optional external embedding file"),
    "gcg.k": (5, int, "BM25 top-k neighbours per case"),
    "gcg.delta": (0.9, float, "charge-charge similarity threshold"),
    "gcg.sim": ("cosine", _parse_str, "charge similarity: cosine or dot"),
    "gcg.include_charges": (True, _parse_bool, "include charge nodes"),
    "gcg.charge_charge": (True, _parse_bool, "build charge-charge edges"),
    "gcg.token_boundary": (False, _parse_bool, "charge match on token boundaries"),
    "gnn.arch": ("gat", _parse_str, "layer type: gat, gcn or sage"),
    "gnn.layers": (2, int, "number of layers"),
    "gnn.heads": (1, int, "attention heads (gat)"),
    "gnn.dropout": (0.1, float, "feature dropout rate in training"),
    "gnn.activation": ("elu", _parse_str, "layer activation: elu or identity"),
    "gnn.residual": (True, _parse_bool, "add input features to the output"),
    "gnn.leaky_slope": (0.2, float, "attention LeakyReLU slope"),
    "loss.tau": (0.1, float, "softmax temperature"),
    "loss.lambda": (1e-3, float, "degree regularisation coefficient"),
    "loss.sim": ("dot", _parse_str, "training similarity: dot or cosine"),
    "loss.n_easy": (1, int, "easy negatives per query"),
    "loss.n_hard": (5, int, "hard negatives per query"),
    "loss.hard_pool": (50, int, "BM25 pool size for hard negatives"),
    "train.batch_size": (32, int, "queries per step"),
    "train.epochs": (100, int, "training epochs"),
    "train.lr": (1e-4, float, "Adam learning rate"),
    "train.weight_decay": (1e-5, float, "decoupled weight decay"),
    "train.beta1": (0.9, float, "Adam beta1"),
    "train.beta2": (0.999, float, "Adam beta2"),
    "train.eps": (1e-8, float, "Adam epsilon"),
    "train.seed": (7, int, "global seed"),
    "train.eval_every": (0, int, "checkpoint every N epochs (0: end only)"),
    "train.node_feat_only": (False, _parse_bool, "skip the GNN entirely"),
    "synth.n_queries": (10, int, "synthetic queries per split"),
    "synth.n_candidates": (50, int, "synthetic candidates per split"),
    "synth.n_charges": (8, int, "synthetic charge phrases"),
    "synth.topics": (10, int, "synthetic topics"),
    "synth.relevant_per_query": (4, int, "relevant candidates per query"),
    "synth.words_per_doc": (60, int, "words per synthetic document"),
}


def default_config() -> dict:
    return {key: default for key, (default, _, _) in DEFAULTS.items()}


def _set(config: dict, key: str, raw_value: str) -> None:
    if key not in DEFAULTS:
        raise ValidationError(f"unknown config key {key!r}")
    _, parser, _ = DEFAULTS[key]
    try:
        config[key] = parser(raw_value)
    except ValidationError:
        raise
    except ValueError:
        raise ValidationError(f"bad value for {key}: {raw_value!r}") from None


def load_config_file(path: str | Path, config: dict | None = None) -> dict:
    config = dict(config) if config is not None else default_config()
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValidationError(
                    f"malformed config line {line_no}: expected 'key = value'"
                )
            key, _, value = stripped.partition("=")
            _set(config, key.strip(), value)
    return config


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    config = dict(config)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"malformed --set {item!r}: expected key=value")
        key, _, value = item.partition("=")
        _set(config, key.strip(), value)
    return config


def resolve(path: str | Path | None, overrides: list[str] | None = None) -> dict:
    config = load_config_file(path) if path else default_config()
    return apply_overrides(config, overrides or [])


def build_train_config(config: dict) -> TrainConfig:
    try:
        gcg_config = GcgConfig(
            k=config["gcg.k"],
            delta=config["gcg.delta"],
            sim=Similarity(config["gcg.sim"]),
            include_charges=config["gcg.include_charges"],
            charge_charge=config["gcg.charge_charge"],
            token_boundary=config["gcg.token_boundary"],
        )
        gnn_config = GnnConfig(
            arch=Arch(config["gnn.arch"]),
            layers=config["gnn.layers"],
            heads=config["gnn.heads"],
            dropout=config["gnn.dropout"],
            activation=Activation(config["gnn.activation"]),
            dim=config["features.dim"],
            residual=config["gnn.residual"],
            leaky_slope=config["gnn.leaky_slope"],
        )
        loss_config = LossConfig(
            tau=config["loss.tau"],
            lam=config["loss.lambda"],
            sim=LossSim(config["loss.sim"]),
            n_easy=config["loss.n_easy"],
            n_hard=config["loss.n_hard"],
            hard_pool=config["loss.hard_pool"],
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    return TrainConfig(
        batch_size=config["train.batch_size"],
        epochs=config["train.epochs"],
        lr=config["train.lr"],
        weight_decay=config["train.weight_decay"],
        beta1=config["train.beta1"],
        beta2=config["train.beta2"],
        eps=config["train.eps"],
        seed=config["train.seed"],
        eval_every=config["train.eval_every"],
        node_feat_only=config["train.node_feat_only"],
        embedding_file=config["features.embeddings"] or None,
        gcg=gcg_config,
        gnn=gnn_config,
        loss=loss_config,
    )


def build_synth_spec(config: dict, seed: int) -> SynthSpec:
    return SynthSpec(
        seed=seed,
        n_queries=config["synth.n_queries"],
        n_candidates=config["synth.n_candidates"],
        n_charges=config["synth.n_charges"],
        topics=config["synth.topics"],
        relevant_per_query=config["synth.relevant_per_query"],
        words_per_doc=config["synth.words_per_doc"],
    )


def describe_defaults() -> str:
    lines = []
    for key, (default, _, help_text) in DEFAULTS.items():
        lines.append(f"{key} = {default}  # {help_text}")
    return "\n".join(lines)
