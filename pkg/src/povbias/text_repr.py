"""Statement representation: tokens, POS tags and lexicon categories as id sequences.

Each statement becomes three aligned index sequences (word, POS, category)
plus a padding mask. Position 0 of every vocabulary is padding; position 1 is
the unknown symbol.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .numerics import Tensor, parameter

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
NO_CATEGORY = -1
NO_CATEGORY_SYMBOL = "<none>"

DEFAULT_DIM = 100
DEFAULT_MAX_LEN = 64
UNKNOWN_INIT_RANGE = 0.05

CHANNELS = ("word", "pos", "liwc")


class AlignmentError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class LexiconFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tokenization

_LEADING = "\"'([{`"
_TRAILING = ".,;:!?\"')]}`"
_ACRONYM = re.compile(r"^(?:[A-Za-z]\.){2,}$")


def tokenize(text: str) -> list[str]:
    """Whitespace split with leading/trailing punctuation detached; case is kept."""
    tokens: list[str] = []
    for chunk in text.split():
        if _ACRONYM.match(chunk):
            tokens.append(chunk)
            continue
        head = []
        while chunk and chunk[0] in _LEADING:
            head.append(chunk[0])
            chunk = chunk[1:]
        tail = []
        while chunk and chunk[-1] in _TRAILING:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(head)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tokens


# ---------------------------------------------------------------------------
# POS tagging


class Tagger(Protocol):
    def tag(self, tokens: Sequence[str]) -> list[str]: ...


_CLOSED_CLASS = {
    "DT": "a an the this that these those another each every either neither no some any all both half",
    "IN": "about above across after against along among around at before behind below beneath beside "
    "between beyond by despite during except for from in inside into near of off on onto out outside "
    "over past since through throughout toward towards under underneath unlike until upon via with "
    "within without although because if though unless whereas while whether",
    "CC": "and but or nor yet plus",
    "PRP": "i me you he him she her it we us they them myself yourself himself herself itself ourselves themselves",
    "PRP$": "my your his its our their",
    "WDT": "which whatever whichever",
    "WP": "who whom what whoever",
    "WP$": "whose",
    "WRB": "when where why how wherever whenever",
    "MD": "can could may might must shall should will would",
    "TO": "to",
    "EX": "there",
    "RB": "not never also very too quite rather almost already always often perhaps still just "
    "even only soon then now here however thus therefore indeed",
    "VBZ": "is has does",
    "VBP": "are am have do",
    "VBD": "was were had did said made became went came took got saw gave found",
    "VB": "be",
    "VBN": "been done gone known seen taken given born",
    "VBG": "being having doing",
    "JJ": "many few much more most other such own same new old good bad great little big high",
    "CD": "one two three four five six seven eight nine ten hundred thousand million billion",
    "UH": "oh yes well",
    "POS": "'s",
}
POS_LEXICON: dict[str, str] = {w: tag for tag, words in _CLOSED_CLASS.items() for w in words.split()}

_PUNCT_TAGS = {
    ".": ".", "!": ".", "?": ".", ",": ",", ";": ":", ":": ":", "-": ":", "--": ":",
    '"': "''", "'": "''", "`": "``", "(": "-LRB-", ")": "-RRB-", "[": "-LRB-", "]": "-RRB-",
    "{": "-LRB-", "}": "-RRB-", "$": "$", "%": "NN", "&": "CC",
}
_SUFFIX_RULES = (
    ("ing", "VBG", 5),
    ("ed", "VBD", 4),
    ("ly", "RB", 4),
    ("est", "JJS", 5),
    ("tion", "NN", 5),
    ("sion", "NN", 5),
    ("ment", "NN", 5),
    ("ness", "NN", 5),
    ("ity", "NN", 5),
    ("ous", "JJ", 5),
    ("ful", "JJ", 5),
    ("ive", "JJ", 5),
    ("able", "JJ", 5),
    ("ible", "JJ", 5),
    ("less", "JJ", 5),
    ("ical", "JJ", 5),
    ("ic", "JJ", 4),
    ("al", "JJ", 4),
    ("ize", "VB", 5),
    ("ise", "VB", 5),
)
_NUMBER = re.compile(r"^[+-]?\d[\d,.]*(?:s|th|st|nd|rd)?$")
PENN_TAGS = sorted(
    set(_CLOSED_CLASS) | set(_PUNCT_TAGS.values()) | {t for _, t, _ in _SUFFIX_RULES}
    | {"NN", "NNS", "NNP", "NNPS", "CD", "FW", "SYM"}
)


class RuleTagger:
    """Closed-class lookup, then capitalisation and suffix rules, defaulting to NN."""

    def tag_one(self, token: str, first: bool) -> str:
        if token in _PUNCT_TAGS:
            return _PUNCT_TAGS[token]
        if _NUMBER.match(token):
            return "CD"
        low = token.lower()
        if low in POS_LEXICON:
            return POS_LEXICON[low]
        if not first and token[:1].isupper():
            return "NNP"
        if not any(ch.isalnum() for ch in token):
            return "SYM"
        for suffix, tag, min_len in _SUFFIX_RULES:
            if len(low) >= min_len and low.endswith(suffix):
                return tag
        if len(low) > 3 and low.endswith("s") and not low.endswith(("ss", "us", "is")):
            return "NNS"
        return "NN"

    def tag(self, tokens: Sequence[str]) -> list[str]:
        return [self.tag_one(tok, i == 0) for i, tok in enumerate(tokens)]


class PretaggedTagger:
    """Returns supplied tags verbatim after checking alignment."""

    def __init__(self, tags: Sequence[str]):
        self.tags = list(tags)

    def tag(self, tokens: Sequence[str]) -> list[str]:
        if len(self.tags) != len(tokens):
            raise AlignmentError(f"{len(self.tags)} tags supplied for {len(tokens)} tokens")
        return list(self.tags)


def pos_tag(tokens: Sequence[str], tagger: Tagger | None = None, tags: Sequence[str] | None = None) -> list[str]:
    if tags is not None:
        tagger = PretaggedTagger(tags)
    out = (tagger or RuleTagger()).tag(tokens)
    if len(out) != len(tokens):
        raise AlignmentError(f"tagger returned {len(out)} tags for {len(tokens)} tokens")
    return out


# ---------------------------------------------------------------------------
# category lexicon


@dataclass
class CategoryLexicon:
    patterns: list[tuple[str, bool, frozenset[str]]]
    category_list: list[str]
    _exact: dict[str, frozenset[str]] = field(init=False, repr=False)
    _prefix: dict[str, frozenset[str]] = field(init=False, repr=False)

    def __post_init__(self):
        exact: dict[str, set[str]] = {}
        prefix: dict[str, set[str]] = {}
        for pat, wildcard, cats in self.patterns:
            target = prefix if wildcard else exact
            target.setdefault(pat, set()).update(cats)
        self._exact = {k: frozenset(v) for k, v in exact.items()}
        self._prefix = {k: frozenset(v) for k, v in prefix.items()}
        unknown = {c for _, _, cats in self.patterns for c in cats} - set(self.category_list)
        if unknown:
            raise LexiconFormatError(f"categories missing from category list: {sorted(unknown)}")

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, Iterable[str]]]) -> "CategoryLexicon":
        patterns = []
        order: list[str] = []
        for raw, cats in rows:
            cats = [c for c in cats if c]
            wildcard = raw.endswith("*")
            pat = raw[:-1] if wildcard else raw
            pat = pat.lower()
            if not pat:
                raise LexiconFormatError(f"empty pattern {raw!r}")
            for c in cats:
                if c not in order:
                    order.append(c)
            patterns.append((pat, wildcard, frozenset(cats)))
        return cls(patterns, order)

    def matches(self, token: str) -> frozenset[str]:
        low = token.lower()
        found = set(self._exact.get(low, ()))
        for i in range(1, len(low) + 1):
            cats = self._prefix.get(low[:i])
            if cats:
                found |= cats
        return frozenset(found)

    def to_rows(self) -> list[list]:
        return [[p + ("*" if w else ""), sorted(c)] for p, w, c in self.patterns]


def load_lexicon(path=None) -> CategoryLexicon:
    """Read ``pattern<TAB>cat1,cat2`` lines; ``None`` loads the bundled demo lexicon."""
    if path is None:
        text = resources.files("povbias").joinpath("data/demo_lexicon.tsv").read_text("utf-8")
        source = "demo_lexicon.tsv"
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        source = str(path)
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise LexiconFormatError(f"{source}:{lineno}: expected pattern<TAB>categories")
        rows.append((parts[0].strip(), [c.strip() for c in parts[1].split(",")]))
    if not rows:
        raise LexiconFormatError(f"{source}: lexicon is empty")
    return CategoryLexicon.from_rows(rows)


def compute_descriptiveness(lexicon: CategoryLexicon) -> dict[str, float]:
    """IDF-style weight per category: log(total patterns / patterns in category)."""
    total = len(lexicon.patterns)
    if total == 0:
        raise LexiconFormatError("lexicon is empty")
    counts = Counter(c for _, _, cats in lexicon.patterns for c in cats)
    return {c: math.log(total / counts[c]) for c in lexicon.category_list if counts[c] > 0}


def liwc_assign(token: str, lexicon: CategoryLexicon, descriptiveness: Mapping[str, float]) -> int:
    """Index (in ``lexicon.category_list``) of the most descriptive matching category."""
    cats = lexicon.matches(token)
    best, best_score = NO_CATEGORY, -math.inf
    for i, c in enumerate(lexicon.category_list):
        if c in cats and c in descriptiveness and descriptiveness[c] > best_score:
            best, best_score = i, descriptiveness[c]
    return best


# ---------------------------------------------------------------------------
# vocabularies and embeddings


class Vocabulary:
    def __init__(self, entries: Sequence[str]):
        if len(entries) < 2 or entries[0] != PAD or entries[1] != UNK:
            raise ValueError("vocabulary must start with the padding and unknown symbols")
        self.entries = list(entries)
        self.index = {e: i for i, e in enumerate(self.entries)}
        if len(self.index) != len(self.entries):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, symbols: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts = Counter(symbols)
        counts.pop(PAD, None)
        counts.pop(UNK, None)
        ranked = sorted((s for s, n in counts.items() if n >= min_count), key=lambda s: (-counts[s], s))
        return cls([PAD, UNK] + ranked)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.index

    def lookup(self, symbol: str) -> int:
        return self.index.get(symbol, UNK_ID)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.entries == other.entries


@dataclass(eq=False)
class EmbeddingMatrix:
    name: str
    weights: Tensor
    trainable: bool = True

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def frozen_rows(self) -> np.ndarray:
        return np.array([PAD_ID])


def random_embeddings(name: str, vocab: Vocabulary, dim: int, rng: np.random.Generator) -> EmbeddingMatrix:
    w = rng.uniform(-UNKNOWN_INIT_RANGE, UNKNOWN_INIT_RANGE, size=(len(vocab), dim))
    w[PAD_ID] = 0.0
    return EmbeddingMatrix(name, parameter(w, name=f"embedding.{name}"))


def load_embeddings(path, vocab: Vocabulary, dim: int = DEFAULT_DIM, seed: int = 0,
                    name: str = "word", trainable: bool = True) -> EmbeddingMatrix:
    """Rows for words found in a GloVe-format text file; others uniform in +/-0.05."""
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-UNKNOWN_INIT_RANGE, UNKNOWN_INIT_RANGE, size=(len(vocab), dim))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) - 1 != dim:
                raise EmbeddingFormatError(path, lineno, f"expected {dim} values, found {len(parts) - 1}")
            row = vocab.index.get(parts[0])
            if row is None or row == PAD_ID:
                continue
            try:
                weights[row] = [float(v) for v in parts[1:]]
            except ValueError:
                raise EmbeddingFormatError(path, lineno, "non-numeric vector component") from None
    weights[PAD_ID] = 0.0
    return EmbeddingMatrix(name, parameter(weights, name=f"embedding.{name}"), trainable)


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class EncodedStatement:
    word_ids: np.ndarray
    pos_ids: np.ndarray
    liwc_ids: np.ndarray
    mask: np.ndarray
    length: int
    tokens: tuple[str, ...] = ()

    def ids(self, channel: str) -> np.ndarray:
        return getattr(self, f"{channel}_ids")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EncodedStatement)
            and self.length == other.length
            and self.tokens == other.tokens
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in ("word_ids", "pos_ids", "liwc_ids", "mask"))
        )


@dataclass
class EncodedBatch:
    word_ids: np.ndarray
    pos_ids: np.ndarray
    liwc_ids: np.ndarray
    mask: np.ndarray

    def ids(self, channel: str) -> np.ndarray:
        return getattr(self, f"{channel}_ids")

    def __len__(self) -> int:
        return self.mask.shape[0]

    @classmethod
    def stack(cls, encoded: Sequence[EncodedStatement]) -> "EncodedBatch":
        return cls(
            np.stack([e.word_ids for e in encoded]),
            np.stack([e.pos_ids for e in encoded]),
            np.stack([e.liwc_ids for e in encoded]),
            np.stack([e.mask for e in encoded]),
        )

    def take(self, rows) -> "EncodedBatch":
        return EncodedBatch(self.word_ids[rows], self.pos_ids[rows], self.liwc_ids[rows], self.mask[rows])


def channel_symbol(channel: str, symbol: str) -> str:
    """Vocabulary key for a symbol; POS and category symbols are namespaced."""
    return symbol if channel == "word" else f"{channel}:{symbol}"


class TextEncoder:
    """Vocabularies, tagger and lexicon needed to encode raw statements.

    ``shared`` lists channel groups that index one combined vocabulary (and so
    one embedding matrix), e.g. ``[("pos", "liwc")]``.
    """

    def __init__(self, vocabs: Mapping[str, Vocabulary], lexicon: CategoryLexicon,
                 max_len: int = DEFAULT_MAX_LEN, tagger: Tagger | None = None):
        self.vocabs = dict(vocabs)
        self.lexicon = lexicon
        self.descriptiveness = compute_descriptiveness(lexicon)
        self.max_len = max_len
        self.tagger = tagger or RuleTagger()
        self._category_cache: dict[str, str] = {}

    @classmethod
    def build(cls, texts: Iterable[tuple[str, Sequence[str] | None]], lexicon: CategoryLexicon,
              max_len: int = DEFAULT_MAX_LEN, shared: Sequence[Sequence[str]] = (),
              tagger: Tagger | None = None) -> "TextEncoder":
        """Build vocabularies from ``(text, optional_pos_tags)`` training pairs."""
        probe = cls({c: Vocabulary([PAD, UNK]) for c in CHANNELS}, lexicon, max_len, tagger)
        symbols: dict[str, list[str]] = {c: [] for c in CHANNELS}
        for text, tags in texts:
            tokens = tokenize(text)
            symbols["word"].extend(t.lower() for t in tokens)
            symbols["pos"].extend(pos_tag(tokens, probe.tagger, tags))
        symbols["pos"].extend(PENN_TAGS)
        symbols["liwc"].extend(list(lexicon.category_list) + [NO_CATEGORY_SYMBOL])
        keyed = {c: [channel_symbol(c, s) for s in symbols[c]] for c in CHANNELS}

        vocabs: dict[str, Vocabulary] = {}
        grouped = set()
        for group in shared:
            combined = Vocabulary.build(s for c in group for s in keyed[c])
            for c in group:
                vocabs[c] = combined
                grouped.add(c)
        for c in CHANNELS:
            if c not in grouped:
                vocabs[c] = Vocabulary.build(keyed[c])
        return cls(vocabs, lexicon, max_len, tagger)

    def category(self, token: str) -> str:
        cat = self._category_cache.get(token)
        if cat is None:
            idx = liwc_assign(token, self.lexicon, self.descriptiveness)
            cat = NO_CATEGORY_SYMBOL if idx == NO_CATEGORY else self.lexicon.category_list[idx]
            self._category_cache[token] = cat
        return cat

    def encode(self, text: str, pos: Sequence[str] | None = None) -> EncodedStatement:
        tokens = tokenize(text)
        tags = pos_tag(tokens, self.tagger, pos)
        tokens, tags = tokens[: self.max_len], tags[: self.max_len]
        n = len(tokens)
        ids = {c: np.zeros(self.max_len, dtype=np.int64) for c in CHANNELS}
        for t, (tok, tag) in enumerate(zip(tokens, tags)):
            ids["word"][t] = self.vocabs["word"].lookup(channel_symbol("word", tok.lower()))
            ids["pos"][t] = self.vocabs["pos"].lookup(channel_symbol("pos", tag))
            ids["liwc"][t] = self.vocabs["liwc"].lookup(channel_symbol("liwc", self.category(tok)))
        mask = np.zeros(self.max_len, dtype=bool)
        mask[:n] = True
        return EncodedStatement(ids["word"], ids["pos"], ids["liwc"], mask, n, tuple(tokens))

    def encode_batch(self, items: Iterable[tuple[str, Sequence[str] | None]]) -> EncodedBatch:
        return EncodedBatch.stack([self.encode(text, pos) for text, pos in items])

    def shared_groups(self) -> list[list[str]]:
        groups: dict[int, list[str]] = {}
        for c in CHANNELS:
            groups.setdefault(id(self.vocabs[c]), []).append(c)
        return [g for g in groups.values() if len(g) > 1]

    def to_dict(self) -> dict:
        distinct: dict[int, tuple[str, Vocabulary]] = {}
        for c in CHANNELS:
            distinct.setdefault(id(self.vocabs[c]), (c, self.vocabs[c]))
        return {
            "max_len": self.max_len,
            "vocabularies": {c: v.entries for c, v in distinct.values()},
            "channel_vocab": {c: distinct[id(self.vocabs[c])][0] for c in CHANNELS},
            "lexicon": self.lexicon.to_rows(),
            "tagger": "rule",
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TextEncoder":
        built = {owner: Vocabulary(entries) for owner, entries in d["vocabularies"].items()}
        vocabs = {c: built[owner] for c, owner in d["channel_vocab"].items()}
        lexicon = CategoryLexicon.from_rows((p, cats) for p, cats in d["lexicon"])
        return cls(vocabs, lexicon, int(d["max_len"]))


def encode_statement(text: str, encoder: TextEncoder, pos: Sequence[str] | None = None) -> EncodedStatement:
    return encoder.encode(text, pos)
