"""GRU classifiers over word / POS / category channels.

Three architectures share the same building blocks:

* ``vanilla``: merged channels -> GRU -> last state -> sigmoid.
* ``global``: merged channels -> GRU -> attention pooling -> sigmoid.
* ``hierarchical``: one GRU + attention per channel, then a second GRU +
  attention over the short sequence of channel summaries.

Everything is batched: inputs are ``(B, T)`` id arrays with a ``(B, T)`` mask.
Weight matrices are stored ``out x in`` and applied as ``x @ W.T``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor, parameter
from .text_repr import CHANNELS, EmbeddingMatrix, EncodedBatch, EncodedStatement, TextEncoder, random_embeddings

CONTEXT_INIT_RANGE = 0.05
DEFAULT_THRESHOLD = 0.5


class ModelConfigError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class Architecture(str, enum.Enum):
    VANILLA = "vanilla"
    GLOBAL = "global"
    HIERARCHICAL = "hierarchical"


class WeightSharing(str, enum.Enum):
    SEPARATE = "separate"
    SHARE_POS_LIWC = "share-pos-liwc"
    SHARE_ALL = "share-all"


class Prediction(str, enum.Enum):
    BIASED = "biased"
    NEUTRAL = "neutral"


_CHANNEL_LETTERS = {"w": "word", "p": "pos", "l": "liwc"}


def parse_channels(spec: str | Iterable[str]) -> tuple[str, ...]:
    """``"wl"`` or ``["word", "liwc"]`` -> channels in canonical order."""
    if isinstance(spec, str):
        if spec in CHANNELS:
            names = [spec]
        elif "," in spec:
            names = [s.strip() for s in spec.split(",")]
        else:
            try:
                names = [_CHANNEL_LETTERS[c] for c in spec]
            except KeyError:
                raise ModelConfigError(f"unknown channel letter in {spec!r}; use w, p, l") from None
    else:
        names = list(spec)
    unknown = set(names) - set(CHANNELS)
    if unknown:
        raise ModelConfigError(f"unknown channels {sorted(unknown)}")
    return tuple(c for c in CHANNELS if c in names)


def channels_code(channels: Sequence[str]) -> str:
    return "".join(c[0] if c != "liwc" else "l" for c in channels)


@dataclass(frozen=True)
class ModelConfig:
    architecture: Architecture = Architecture.GLOBAL
    channels: tuple[str, ...] = ("word", "liwc")
    hidden_dim: int = 100
    attn_dim: int = 100
    embed_dim: int = 100
    max_len: int = 64
    weight_sharing: WeightSharing = WeightSharing.SEPARATE
    pretrained_words: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        object.__setattr__(self, "weight_sharing", WeightSharing(self.weight_sharing))
        object.__setattr__(self, "channels", parse_channels(self.channels))
        if "word" not in self.channels:
            raise ModelConfigError("channels must include word")
        if self.architecture is Architecture.HIERARCHICAL and len(self.channels) < 2:
            raise ModelConfigError("hierarchical attention needs at least two channels")
        for name in ("hidden_dim", "attn_dim", "embed_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ModelConfigError(f"{name} must be positive")
        if self.pretrained_words and self.weight_sharing is WeightSharing.SHARE_ALL:
            raise ModelConfigError("frozen pre-trained word vectors cannot share a matrix with trained channels")

    def sharing_groups(self) -> list[tuple[str, ...]]:
        if self.weight_sharing is WeightSharing.SHARE_POS_LIWC and {"pos", "liwc"} <= set(self.channels):
            return [("pos", "liwc")]
        if self.weight_sharing is WeightSharing.SHARE_ALL and len(self.channels) > 1:
            return [self.channels]
        return []

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture.value,
            "channels": list(self.channels),
            "hidden_dim": self.hidden_dim,
            "attn_dim": self.attn_dim,
            "embed_dim": self.embed_dim,
            "max_len": self.max_len,
            "weight_sharing": self.weight_sharing.value,
            "pretrained_words": self.pretrained_words,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ModelConfigError(f"unknown model config keys {sorted(extra)}")
        return cls(**{k: (tuple(v) if k == "channels" else v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# parameters


@dataclass(eq=False)
class GruParams:
    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor

    FIELDS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")

    def __post_init__(self):
        hidden, inp = self.W_z.shape
        for g in "zrh":
            W, U, b = (getattr(self, f"{k}_{g}") for k in "WUb")
            if W.shape != (hidden, inp) or U.shape != (hidden, hidden) or b.shape != (hidden,):
                raise nx.ShapeError(f"inconsistent GRU parameter shapes for gate {g}")

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.{f}", getattr(self, f)) for f in self.FIELDS]


@dataclass(eq=False)
class AttentionParams:
    W_emb: Tensor
    b_emb: Tensor
    c: Tensor

    FIELDS = ("W_emb", "b_emb", "c")

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.{f}", getattr(self, f)) for f in self.FIELDS]


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    embeddings: dict[str, EmbeddingMatrix]
    encoder: dict[str, GruParams]
    attention: dict[str, AttentionParams] = field(default_factory=dict)
    top_encoder: GruParams | None = None
    top_attention: AttentionParams | None = None
    output_weight: Tensor | None = None
    output_bias: Tensor | None = None

    def named(self) -> list[tuple[str, Tensor]]:
        """Every distinct tensor once, with a stable name, in a fixed order."""
        out: list[tuple[str, Tensor]] = []
        seen: set[int] = set()
        for ch in self.config.channels:
            emb = self.embeddings[ch]
            if id(emb.weights) not in seen:
                seen.add(id(emb.weights))
                out.append((f"embedding.{emb.name}", emb.weights))
        for key in sorted(self.encoder, key=_channel_order):
            out.extend(self.encoder[key].named(f"encoder.{key}"))
        for key in sorted(self.attention, key=_channel_order):
            out.extend(self.attention[key].named(f"attention.{key}"))
        if self.top_encoder is not None:
            out.extend(self.top_encoder.named("top_encoder"))
        if self.top_attention is not None:
            out.extend(self.top_attention.named("top_attention"))
        out.append(("output.weight", self.output_weight))
        out.append(("output.bias", self.output_bias))
        return out

    def trainable(self) -> list[tuple[str, Tensor]]:
        frozen = {id(e.weights) for e in self.embeddings.values() if not e.trainable}
        return [(n, t) for n, t in self.named() if id(t) not in frozen]

    def embedding_tensors(self) -> set[int]:
        return {id(e.weights) for e in self.embeddings.values()}

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.named()}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        named = dict(self.named())
        missing = set(named) - set(arrays)
        extra = set(arrays) - set(named)
        if missing or extra:
            raise nx.CheckpointFormatError(
                f"parameter inventory mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for n, t in named.items():
            if arrays[n].shape != t.shape:
                raise nx.CheckpointFormatError(f"{n}: stored shape {arrays[n].shape}, expected {t.shape}")
            t.data[...] = arrays[n]


def _channel_order(key: str) -> int:
    return CHANNELS.index(key) if key in CHANNELS else -1


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int, name: str) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-limit, limit, size=(fan_out, fan_in)), name=name)


def zeros(n: int, name: str) -> Tensor:
    return parameter(np.zeros(n), name=name)


def init_gru(rng: np.random.Generator, input_dim: int, hidden_dim: int, prefix: str = "gru") -> GruParams:
    parts = {}
    for g in "zrh":
        parts[f"W_{g}"] = glorot(rng, hidden_dim, input_dim, f"{prefix}.W_{g}")
        parts[f"U_{g}"] = glorot(rng, hidden_dim, hidden_dim, f"{prefix}.U_{g}")
        parts[f"b_{g}"] = zeros(hidden_dim, f"{prefix}.b_{g}")
    return GruParams(**parts)


def init_attention(rng: np.random.Generator, hidden_dim: int, attn_dim: int, prefix: str = "attention") -> AttentionParams:
    return AttentionParams(
        glorot(rng, attn_dim, hidden_dim, f"{prefix}.W_emb"),
        zeros(attn_dim, f"{prefix}.b_emb"),
        parameter(rng.uniform(-CONTEXT_INIT_RANGE, CONTEXT_INIT_RANGE, size=attn_dim), name=f"{prefix}.c"),
    )


def build_embeddings(config: ModelConfig, encoder: TextEncoder, rng: np.random.Generator,
                     word_matrix: EmbeddingMatrix | None = None) -> dict[str, EmbeddingMatrix]:
    """One matrix per distinct vocabulary; channels sharing a vocabulary share the matrix."""
    out: dict[str, EmbeddingMatrix] = {}
    by_vocab: dict[int, EmbeddingMatrix] = {}
    for ch in config.channels:
        vocab = encoder.vocabs[ch]
        if id(vocab) in by_vocab:
            out[ch] = by_vocab[id(vocab)]
            continue
        group = next((g for g in config.sharing_groups() if ch in g), (ch,))
        name = "_".join(group)
        if ch == "word" and word_matrix is not None:
            if word_matrix.weights.shape != (len(vocab), config.embed_dim):
                raise ModelConfigError(
                    f"word matrix shape {word_matrix.weights.shape} does not match vocabulary "
                    f"{len(vocab)} x {config.embed_dim}"
                )
            mat = word_matrix
            mat.name = name
            mat.trainable = not config.pretrained_words
        else:
            mat = random_embeddings(name, vocab, config.embed_dim, rng)
        by_vocab[id(vocab)] = mat
        out[ch] = mat
    return out


def init_params(config: ModelConfig, encoder: TextEncoder, word_matrix: EmbeddingMatrix | None = None) -> ModelParams:
    """Fresh parameters for ``config``; deterministic in ``config.seed``."""
    expected = [tuple(g) for g in config.sharing_groups()]
    got = [tuple(c for c in g if c in config.channels) for g in encoder.shared_groups()]
    got = [g for g in got if len(g) > 1]
    if sorted(expected) != sorted(got):
        raise ModelConfigError(f"encoder vocabulary sharing {got} does not match weight sharing {expected}")
    if config.pretrained_words and word_matrix is None:
        raise ModelConfigError("pretrained_words requires a loaded word embedding matrix")
    rng = np.random.default_rng(config.seed)
    emb = build_embeddings(config, encoder, rng, word_matrix)
    H, A = config.hidden_dim, config.attn_dim
    if config.architecture is Architecture.HIERARCHICAL:
        enc = {ch: init_gru(rng, config.embed_dim, H, f"encoder.{ch}") for ch in config.channels}
        att = {ch: init_attention(rng, H, A, f"attention.{ch}") for ch in config.channels}
        top_enc = init_gru(rng, H, H, "top_encoder")
        top_att = init_attention(rng, H, A, "top_attention")
    else:
        enc = {"merged": init_gru(rng, config.embed_dim * len(config.channels), H, "encoder.merged")}
        att = {"merged": init_attention(rng, H, A, "attention.merged")} if config.architecture is Architecture.GLOBAL else {}
        top_enc = top_att = None
    return ModelParams(
        config, emb, enc, att, top_enc, top_att,
        output_weight=glorot(rng, 1, H, "output.weight"),
        output_bias=zeros(1, "output.bias"),
    )


# ---------------------------------------------------------------------------
# building blocks


def gru_step(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One GRU update; ``x`` is ``(..., input)`` and ``h_prev`` is ``(..., hidden)``."""
    return nx.gru_cell(
        nx.add(nx.matmul(x, nx.transpose(p.W_z)), p.b_z),
        nx.add(nx.matmul(x, nx.transpose(p.W_r)), p.b_r),
        nx.matmul(x, nx.transpose(p.W_h)),
        h_prev, p.U_z, p.U_r, p.U_h, p.b_h,
    )


def encode_sequence(xs: Tensor, mask, p: GruParams) -> Tensor:
    """Hidden states ``(B, T, H)`` for inputs ``(B, T, in)``.

    Masked positions carry the previous state through unchanged.
    """
    mask = np.asarray(mask, dtype=bool)
    if xs.data.ndim != 3 or mask.shape != xs.shape[:2]:
        raise nx.ShapeError(f"encode_sequence: inputs {xs.shape} vs mask {mask.shape}")
    if xs.shape[2] != p.input_dim:
        raise nx.ShapeError(f"encode_sequence: input dim {xs.shape[2]} vs GRU input {p.input_dim}")
    B, T, _ = xs.shape
    # input projections for all positions at once
    xz = nx.add(nx.matmul(xs, nx.transpose(p.W_z)), p.b_z)
    xr = nx.add(nx.matmul(xs, nx.transpose(p.W_r)), p.b_r)
    xh = nx.matmul(xs, nx.transpose(p.W_h))
    h = nx.constant(np.zeros((B, p.hidden_dim)))
    states = []
    for t in range(T):
        step = nx.gru_cell(nx.take(xz, t, 1), nx.take(xr, t, 1), nx.take(xh, t, 1), h, p.U_z, p.U_r, p.U_h, p.b_h)
        h = nx.where(mask[:, t], step, h)
        states.append(h)
    if not states:
        return nx.constant(np.zeros((B, 0, p.hidden_dim)))
    return nx.stack(states, axis=1)


def global_attention(hs: Tensor, mask, a: AttentionParams) -> tuple[Tensor, Tensor]:
    """Attention pooling over ``(B, T, H)`` states. Returns ``(s_rep, alpha)``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise DegenerateInputError("attention over a sequence with no real positions")
    u = nx.tanh(nx.add(nx.matmul(hs, nx.transpose(a.W_emb)), a.b_emb))
    scores = nx.matmul(u, a.c)
    alpha = nx.softmax(scores, mask)
    return nx.weighted_sum(alpha, hs), alpha


def merge_channels(ids: Mapping[str, np.ndarray], embeddings: Mapping[str, EmbeddingMatrix],
                   channels: Sequence[str]) -> Tensor:
    """Per position, concatenation of channel embeddings in word, pos, liwc order."""
    parts = [nx.gather(embeddings[ch].weights, ids[ch]) for ch in CHANNELS if ch in channels]
    return nx.concat(parts, axis=-1)


def _output(rep: Tensor, params: ModelParams) -> Tensor:
    logits = nx.add(nx.matmul(rep, nx.transpose(params.output_weight)), params.output_bias)
    return nx.sigmoid(nx.reshape(logits, (rep.shape[0],)))


@dataclass
class ForwardResult:
    probability: Tensor
    word_alpha: dict[str, np.ndarray] = field(default_factory=dict)
    channel_alpha: np.ndarray | None = None


def _as_batch(enc) -> EncodedBatch:
    if isinstance(enc, EncodedStatement):
        return EncodedBatch.stack([enc])
    if isinstance(enc, EncodedBatch):
        return enc
    return EncodedBatch.stack(list(enc))


def _check_nonempty(mask: np.ndarray) -> None:
    if mask.shape[1] == 0 or not mask.any(axis=1).all():
        raise DegenerateInputError("empty statement: no real tokens to encode")


def forward_vanilla(enc, params: ModelParams) -> ForwardResult:
    batch = _as_batch(enc)
    _check_nonempty(batch.mask)
    ids = {ch: batch.ids(ch) for ch in params.config.channels}
    hs = encode_sequence(merge_channels(ids, params.embeddings, params.config.channels), batch.mask, params.encoder["merged"])
    # carry-through makes the final position equal to the last real state
    return ForwardResult(_output(nx.take(hs, hs.shape[1] - 1, 1), params))


def forward_global(enc, params: ModelParams) -> ForwardResult:
    batch = _as_batch(enc)
    _check_nonempty(batch.mask)
    ids = {ch: batch.ids(ch) for ch in params.config.channels}
    hs = encode_sequence(merge_channels(ids, params.embeddings, params.config.channels), batch.mask, params.encoder["merged"])
    s_rep, alpha = global_attention(hs, batch.mask, params.attention["merged"])
    return ForwardResult(_output(s_rep, params), {"merged": alpha.data})


def forward_hierarchical(enc, params: ModelParams) -> ForwardResult:
    batch = _as_batch(enc)
    _check_nonempty(batch.mask)
    channels = params.config.channels
    if len(channels) < 2:
        raise ModelConfigError("hierarchical attention needs at least two channels")
    reps, alphas = [], {}
    for ch in channels:
        xs = nx.gather(params.embeddings[ch].weights, batch.ids(ch))
        hs = encode_sequence(xs, batch.mask, params.encoder[ch])
        s_rep, alpha = global_attention(hs, batch.mask, params.attention[ch])
        reps.append(s_rep)
        alphas[ch] = alpha.data
    top_mask = np.ones((len(batch), len(channels)), dtype=bool)
    top = encode_sequence(nx.stack(reps, axis=1), top_mask, params.top_encoder)
    joint, beta = global_attention(top, top_mask, params.top_attention)
    return ForwardResult(_output(joint, params), alphas, beta.data)


FORWARD = {
    Architecture.VANILLA: forward_vanilla,
    Architecture.GLOBAL: forward_global,
    Architecture.HIERARCHICAL: forward_hierarchical,
}


def forward(enc, params: ModelParams) -> ForwardResult:
    return FORWARD[params.config.architecture](enc, params)


def trim_batch(batch: EncodedBatch) -> EncodedBatch:
    """Drop trailing all-padding columns; outputs are unchanged by construction."""
    width = int(batch.mask.any(axis=0).nonzero()[0].max()) + 1 if batch.mask.any() else 0
    return EncodedBatch(batch.word_ids[:, :width], batch.pos_ids[:, :width], batch.liwc_ids[:, :width], batch.mask[:, :width])


def predict_proba(params: ModelParams, batch: EncodedBatch, chunk: int = 256) -> np.ndarray:
    out = []
    for lo in range(0, len(batch), chunk):
        part = trim_batch(batch.take(slice(lo, lo + chunk)))
        out.append(forward(part, params).probability.data)
    return np.concatenate(out) if out else np.zeros(0)


def classify(probability: float, threshold: float = DEFAULT_THRESHOLD) -> Prediction:
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability {probability} outside [0, 1]")
    return Prediction.BIASED if probability >= threshold else Prediction.NEUTRAL
