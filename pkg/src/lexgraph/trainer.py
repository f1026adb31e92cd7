"""Training loop: build the training graph, then per step run a full-graph
forward, the contrastive + degree objective, reverse-mode backward, and a
decoupled-weight-decay Adam update.

Everything is a pure function of (corpus, charges, labels, config): query
shuffling, sampling, dropout and initialisation all derive from the config
seed, so two runs produce identical loss curves and byte-identical
checkpoints.

Checkpoint layout: magic ``CLNK1``, a little-endian uint32 header length,
a canonical JSON header (version, epoch, config snapshot, rng digest,
tensor table with byte offsets), then all tensors as little-endian float32.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import bm25, gcg, gnn, objective
from .corpus import ChargeVocabulary, Corpus, LabelSet, Split, validate_labels
from .errors import NumericalError, ValidationError

CHECKPOINT_MAGIC = b"CLNK1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 7
    eval_every: int = 0          # 0: checkpoint only at the end
    node_feat_only: bool = False  # skip the GNN; embeddings are the inputs
    embedding_file: str | None = None
    gcg: gcg.GcgConfig = field(default_factory=gcg.GcgConfig)
    gnn: gnn.GnnConfig = field(default_factory=gnn.GnnConfig)
    loss: objective.LossConfig = field(default_factory=objective.LossConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "TrainConfig":
        raw = dict(raw)
        raw["gcg"] = gcg.GcgConfig(
            **{**raw["gcg"], "sim": gcg.Similarity(raw["gcg"]["sim"])}
        )
        raw["gnn"] = gnn.GnnConfig(
            **{
                **raw["gnn"],
                "arch": gnn.Arch(raw["gnn"]["arch"]),
                "activation": gnn.Activation(raw["gnn"]["activation"]),
            }
        )
        raw["loss"] = objective.LossConfig(
            **{**raw["loss"], "sim": objective.LossSim(raw["loss"]["sim"])}
        )
        return TrainConfig(**raw)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    named_params: list[tuple[str, ad.Tensor]],
    state: AdamState,
    lr: float,
    weight_decay: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction; weight decay is decoupled
    (applied to the parameter before the moment update)."""
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros(p.shape, dtype=np.float64)
        theta = p.data.astype(np.float64)
        if weight_decay:
            theta = theta * (1.0 - lr * weight_decay)
        m = state.m.setdefault(name, np.zeros(p.shape, dtype=np.float64))
        v = state.v.setdefault(name, np.zeros(p.shape, dtype=np.float64))
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.data = theta.astype(p.data.dtype)
        p.grad = None


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def _step_seed(seed: int, epoch: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, 3, epoch, step]).generate_state(1)[0])


@dataclass
class TrainArtifacts:
    params: gnn.ModelParams
    features: gcg.NodeFeatures
    graph: gcg.GcgAdjacency
    log: list[dict]
    epochs_run: int


def build_training_graph(
    corpus: Corpus,
    charges: ChargeVocabulary,
    config: TrainConfig,
) -> tuple[gcg.NodeFeatures, gcg.GcgAdjacency, bm25.Bm25Index]:
    features = gcg.assemble_features(
        corpus,
        charges,
        embedding_file=config.embedding_file,
        dim=config.gnn.dim,
        seed=config.seed,
    )
    index = bm25.build_index(corpus)
    neighbors = bm25.pairwise_topk(index, config.gcg.k)
    graph = gcg.build_graph(corpus, charges, features, neighbors, config.gcg)
    return features, graph, index


def train(
    train_corpus: Corpus,
    charges: ChargeVocabulary,
    labels: LabelSet,
    config: TrainConfig,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainArtifacts:
    """Run the full optimisation; returns parameters, graph and loss log."""
    if any(d.split is not Split.TRAIN for d in train_corpus.docs):
        raise ValidationError("training corpus contains non-train documents")
    validate_labels(labels, train_corpus)

    features, graph, index = build_training_graph(train_corpus, charges, config)
    params = gnn.init_params(config.gnn, config.seed)

    n_cases = graph.n
    case_rows = np.arange(n_cases, dtype=np.int64)
    candidate_indices = train_corpus.candidate_indices()
    query_indices = train_corpus.query_indices()
    if not query_indices:
        raise ValidationError("training corpus has no query documents")

    hard_rankings = {
        q: objective.hard_negative_ranking(index, train_corpus, q, labels)
        for q in query_indices
    }

    shuffle_rng = _rng(config.seed, 1)
    sample_rng = _rng(config.seed, 2)
    state = AdamState()
    log: list[dict] = []
    log_fh = Path(log_path).open("w", encoding="utf-8") if log_path else None

    try:
        epochs = 0 if config.node_feat_only else config.epochs
        for epoch in range(epochs):
            order = np.array(query_indices)
            shuffle_rng.shuffle(order)
            step = 0
            for start in range(0, len(order), config.batch_size):
                chunk = [int(i) for i in order[start : start + config.batch_size]]
                batch = objective.sample_batch(
                    chunk, train_corpus, labels, index, config.loss, sample_rng,
                    hard_rankings=hard_rankings,
                )
                try:
                    record = _train_step(
                        graph, features, params, config, batch, train_corpus,
                        labels, case_rows, candidate_indices,
                        _step_seed(config.seed, epoch, step), state,
                    )
                except NumericalError as exc:
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch} step {step}: {exc}"
                    ) from exc
                record.update(epoch=epoch, step=step)
                log.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                step += 1
            if (
                checkpoint_path
                and config.eval_every
                and (epoch + 1) % config.eval_every == 0
            ):
                save_checkpoint(checkpoint_path, params, config, epoch + 1)
    finally:
        if log_fh:
            log_fh.close()

    if checkpoint_path:
        save_checkpoint(checkpoint_path, params, config, epochs)
    return TrainArtifacts(
        params=params, features=features, graph=graph, log=log, epochs_run=epochs
    )


def _train_step(
    graph: gcg.GcgAdjacency,
    features: gcg.NodeFeatures,
    params: gnn.ModelParams,
    config: TrainConfig,
    batch: objective.TrainingBatch,
    corpus: Corpus,
    labels: LabelSet,
    case_rows: np.ndarray,
    candidate_indices: list[int],
    dropout_seed: int,
    state: AdamState,
) -> dict:
    with ad.Tape():
        h = gnn.forward(
            graph, features, params, config.gnn, train=True, seed=dropout_seed
        )
        h_cases = ad.gather_rows(h, case_rows)

        losses = []
        for entry in batch.entries:
            qid = corpus.docs[entry.query].id
            relevant = labels.relevance[qid]
            in_batch = [
                other.positive
                for other in batch.entries
                if other is not entry
                and corpus.docs[other.positive].id not in relevant
            ] if batch.in_batch else []
            losses.append(
                objective.info_nce(
                    h_cases, entry, in_batch, config.loss.tau, config.loss.sim
                )
            )
        degreg = (
            objective.deg_reg(h_cases, candidate_indices)
            if config.loss.lam > 0
            else None
        )
        loss = objective.total_loss(losses, degreg, config.loss.lam)
        infonce_value = float(
            np.mean([l.data.reshape(()).item() for l in losses])
        )
        degreg_value = degreg.data.reshape(()).item() if degreg is not None else 0.0
        total_value = loss.data.reshape(()).item()
        ad.backward(loss)
    adam_step(
        params.named(),
        state,
        lr=config.lr,
        weight_decay=config.weight_decay,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
    )
    return {"infonce": infonce_value, "degreg": degreg_value, "total": total_value}


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def _rng_digest(seed: int, epoch: int) -> str:
    return hashlib.sha256(f"{seed}:{epoch}".encode()).hexdigest()


def save_checkpoint(
    path: str | Path, params: gnn.ModelParams, config: TrainConfig, epoch: int
) -> None:
    tensor_table = []
    payload = bytearray()
    for name, tensor in params.named():
        arr = np.ascontiguousarray(tensor.data.astype("<f4"))
        tensor_table.append(
            {"name": name, "shape": list(arr.shape), "offset": len(payload)}
        )
        payload.extend(arr.tobytes())
    header = {
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "config": config.to_dict(),
        "rng_digest": _rng_digest(config.seed, epoch),
        "tensors": tensor_table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


@dataclass
class Checkpoint:
    version: int
    epoch: int
    config: TrainConfig
    params: gnn.ModelParams
    rng_digest: str


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValidationError(f"not a checkpoint file: bad magic in {path}")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    try:
        header = json.loads(raw[offset : offset + header_len])
    except json.JSONDecodeError:
        raise ValidationError(f"corrupt checkpoint header in {path}") from None
    if header["version"] != CHECKPOINT_VERSION:
        raise ValidationError(
            f"checkpoint version {header['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    offset += header_len
    tensors: dict[str, ad.Tensor] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        numel = int(np.prod(shape)) if shape else 1
        start = offset + entry["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=numel, offset=start)
        tensors[entry["name"]] = ad.Tensor(
            arr.reshape(shape).copy(), requires_grad=True
        )
    return Checkpoint(
        version=header["version"],
        epoch=header["epoch"],
        config=TrainConfig.from_dict(header["config"]),
        params=gnn.ModelParams(tensors=tensors),
        rng_digest=header["rng_digest"],
    )
