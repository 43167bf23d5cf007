"""Mini-batch training, best-epoch selection, metrics and checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import models as md
from . import numerics as nx
from .corpus import DatasetSplit, LabeledStatement
from .numerics import parameter
from .text_repr import PAD_ID, CategoryLexicon, EmbeddingMatrix, EncodedBatch, TextEncoder, load_embeddings


class TrainingFault(RuntimeError):
    def __init__(self, epoch: int, batch: int, cause: Exception):
        super().__init__(f"epoch {epoch}, batch {batch}: {cause}")
        self.epoch = epoch
        self.batch = batch


class EmptyEvaluationError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")

    def adam(self) -> nx.AdamState:
        return nx.AdamState(self.learning_rate, self.beta1, self.beta2, self.epsilon)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float | None

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "val_accuracy": self.val_accuracy}


@dataclass
class TrainResult:
    params: md.ModelParams
    encoder: TextEncoder
    log: list[EpochRecord]
    best_epoch: int


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    """Biased is the positive class. Undefined ratios are ``None``."""

    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    confusion: Confusion

    @classmethod
    def from_confusion(cls, c: Confusion) -> "Metrics":
        if c.total == 0:
            raise EmptyEvaluationError("no statements to evaluate")
        precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else None
        recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else None
        if precision is None or recall is None:
            f1 = None
        elif precision + recall == 0:
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        return cls((c.tp + c.tn) / c.total, precision, recall, f1, c)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp, "tn": self.confusion.tn, "fn": self.confusion.fn},
        }


def confusion_counts(predicted_biased: Sequence[bool], gold_biased: Sequence[bool]) -> Confusion:
    p = np.asarray(predicted_biased, dtype=bool)
    g = np.asarray(gold_biased, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"{p.size} predictions for {g.size} labels")
    return Confusion(int(np.sum(p & g)), int(np.sum(p & ~g)), int(np.sum(~p & ~g)), int(np.sum(~p & g)))


def metrics_from_predictions(predicted_biased, gold_biased) -> Metrics:
    return Metrics.from_confusion(confusion_counts(predicted_biased, gold_biased))


# ---------------------------------------------------------------------------
# training


def _texts(statements: Iterable[LabeledStatement]):
    return [(s.text, s.pos) for s in statements]


def encode_statements(encoder: TextEncoder, statements: Sequence[LabeledStatement]) -> EncodedBatch:
    return encoder.encode_batch(_texts(statements))


def labels(statements: Sequence[LabeledStatement]) -> np.ndarray:
    return np.array([1.0 if s.is_biased else 0.0 for s in statements])


def build_encoder(config: md.ModelConfig, train: Sequence[LabeledStatement], lexicon: CategoryLexicon) -> TextEncoder:
    """Vocabularies come from the training portion only."""
    return TextEncoder.build(_texts(train), lexicon, config.max_len, shared=config.sharing_groups())


def _zero_padding_rows(params: md.ModelParams, named: Sequence[tuple[str, nx.Tensor]], grads: list[np.ndarray]) -> None:
    emb_ids = params.embedding_tensors()
    for (_, t), g in zip(named, grads):
        if id(t) in emb_ids:
            g[PAD_ID] = 0.0


def train(
    model_config: md.ModelConfig,
    train_config: TrainConfig,
    split: DatasetSplit,
    lexicon: CategoryLexicon,
    embeddings_path=None,
    encoder: TextEncoder | None = None,
) -> TrainResult:
    if not split.train:
        raise ValueError("training split is empty")
    encoder = encoder or build_encoder(model_config, split.train, lexicon)
    word_matrix = None
    if embeddings_path is not None:
        word_matrix = load_embeddings(
            embeddings_path, encoder.vocabs["word"], model_config.embed_dim, model_config.seed,
            trainable=not model_config.pretrained_words,
        )
    params = md.init_params(model_config, encoder, word_matrix)

    x_train = encode_statements(encoder, split.train)
    y_train = labels(split.train)
    x_val = encode_statements(encoder, split.validation) if split.validation else None
    y_val = labels(split.validation)

    named = params.trainable()
    tensors = [t for _, t in named]
    state = train_config.adam()
    rng = np.random.default_rng(train_config.seed)
    n = len(split.train)
    log: list[EpochRecord] = []
    best_acc, best_epoch, best_state = -math.inf, 0, params.state()

    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n) if train_config.shuffle_each_epoch else np.arange(n)
        example_losses = np.zeros(n)
        for b, lo in enumerate(range(0, n, train_config.batch_size)):
            rows = order[lo : lo + train_config.batch_size]
            batch = md.trim_batch(x_train.take(rows))
            try:
                with nx.Tape() as tape:
                    prob = md.forward(batch, params).probability
                    loss = nx.bce_loss(prob, y_train[rows])
                grads = tape.gradient(loss, tensors)
                _zero_padding_rows(params, named, grads)
                nx.adam_step(tensors, grads, state)
            except (nx.NumericFault, FloatingPointError) as exc:
                raise TrainingFault(epoch, b, exc) from exc
            example_losses[rows] = nx.bce_values(prob.data, y_train[rows])
        # fixed reduction order: by example index
        train_loss = float(math.fsum(example_losses) / n)
        if not math.isfinite(train_loss):
            raise TrainingFault(epoch, -1, nx.NumericFault("non-finite epoch loss"))
        val_acc = None
        if x_val is not None:
            pred = md.predict_proba(params, x_val) >= md.DEFAULT_THRESHOLD
            val_acc = float(np.mean(pred == (y_val == 1.0)))
        log.append(EpochRecord(epoch, train_loss, val_acc))
        score = val_acc if val_acc is not None else -math.inf
        if score >= best_acc:
            best_acc, best_epoch, best_state = score, epoch, params.state()

    params.load_state(best_state)
    return TrainResult(params, encoder, log, best_epoch)


def predict(params: md.ModelParams, encoder: TextEncoder, statements: Sequence[LabeledStatement]) -> np.ndarray:
    if not statements:
        return np.zeros(0)
    return md.predict_proba(params, encode_statements(encoder, statements))


def evaluate(params: md.ModelParams, encoder: TextEncoder, statements: Sequence[LabeledStatement]) -> Metrics:
    if not statements:
        raise EmptyEvaluationError("no statements to evaluate")
    probs = predict(params, encoder, statements)
    return metrics_from_predictions(probs >= md.DEFAULT_THRESHOLD, [s.is_biased for s in statements])


# ---------------------------------------------------------------------------
# persistence


def checkpoint_save(params: md.ModelParams, encoder: TextEncoder, path, extra: dict | None = None) -> None:
    meta = {
        "model_config": params.config.to_dict(),
        "encoder": encoder.to_dict(),
        "frozen": sorted(e.name for e in params.embeddings.values() if not e.trainable),
    }
    if extra:
        meta["extra"] = extra
    nx.write_container(path, [(n, t.data) for n, t in params.named()], meta)


def checkpoint_load(path) -> tuple[md.ModelParams, TextEncoder]:
    arrays, meta = nx.read_container(path)
    try:
        config = md.ModelConfig.from_dict(meta["model_config"])
        encoder = TextEncoder.from_dict(meta["encoder"])
    except (KeyError, TypeError, ValueError) as exc:
        raise nx.CheckpointFormatError(f"checkpoint metadata is incomplete: {exc}") from None
    word_matrix = None
    if config.pretrained_words:
        shape = (len(encoder.vocabs["word"]), config.embed_dim)
        word_matrix = EmbeddingMatrix("word", parameter(np.zeros(shape), name="embedding.word"), trainable=False)
    params = md.init_params(config, encoder, word_matrix)
    params.load_state(arrays)
    return params, encoder


def write_epoch_log(path, log: Sequence[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in log:
            fh.write(json.dumps(rec.to_json()) + "\n")


def write_metrics(path, metrics: Metrics) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(metrics.to_json(), indent=2) + "\n")
