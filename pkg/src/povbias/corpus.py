"""Labeled statement corpora: judgment filtering, agreement, regimes, splits."""

from __future__ import annotations

import enum
import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

CONFIDENCE_THRESHOLD = 0.6
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


class CorpusError(ValueError):
    pass


class StratumExhaustedError(CorpusError):
    def __init__(self, article_type: str, needed: int, available: int):
        super().__init__(
            f"article type {article_type!r} needs {needed} pool statements, only {available} available"
        )
        self.article_type = article_type


class UndefinedAgreementError(CorpusError):
    pass


class Label(str, enum.Enum):
    BIASED = "biased"
    NEUTRAL = "neutral"


class Rating(str, enum.Enum):
    NEUTRAL = "neutral"
    BIASED = "biased"
    DONT_KNOW = "dont_know"


class Source(str, enum.Enum):
    CROWD_POV = "crowd_pov"
    FEATURED_ARTICLE = "featured_article"


class Regime(str, enum.Enum):
    CW_HARD = "cw-hard"
    FEATURED = "featured"
    TYPE_BALANCED = "type-balanced"


@dataclass(frozen=True)
class LabeledStatement:
    id: str
    text: str
    label: Label
    confidence: float = 1.0
    article_type: str = ""
    source: Source = Source.CROWD_POV
    pos: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError(f"statement {self.id!r} has empty text")
        if not 0.0 <= self.confidence <= 1.0:
            raise CorpusError(f"statement {self.id!r}: confidence {self.confidence} outside [0, 1]")
        if self.source is Source.FEATURED_ARTICLE and self.label is not Label.NEUTRAL:
            raise CorpusError(f"featured-article statement {self.id!r} must be neutral")

    @property
    def is_biased(self) -> bool:
        return self.label is Label.BIASED

    def to_json(self) -> dict:
        row = {
            "id": self.id,
            "text": self.text,
            "label": self.label.value,
            "confidence": self.confidence,
            "article_type": self.article_type,
            "source": self.source.value,
        }
        if self.pos is not None:
            row["pos"] = list(self.pos)
        return row

    @classmethod
    def from_json(cls, row: Mapping) -> "LabeledStatement":
        try:
            pos = row.get("pos")
            return cls(
                id=str(row["id"]),
                text=row["text"],
                label=Label(row["label"]),
                confidence=float(row.get("confidence", 1.0)),
                article_type=row.get("article_type") or "",
                source=Source(row.get("source", Source.CROWD_POV.value)),
                pos=tuple(pos) if pos is not None else None,
            )
        except KeyError as exc:
            raise CorpusError(f"corpus row is missing field {exc}") from None
        except ValueError as exc:
            if isinstance(exc, CorpusError):
                raise
            raise CorpusError(f"corpus row {row.get('id')!r}: {exc}") from None


def read_corpus(path) -> list[LabeledStatement]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            out.append(LabeledStatement.from_json(row))
    return out


def write_corpus(path, statements: Iterable[LabeledStatement]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in statements:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# judgments


@dataclass
class JudgmentTable:
    items: list[str] = field(default_factory=list)
    workers: list[str] = field(default_factory=list)
    ratings: dict[tuple[str, str], Rating] = field(default_factory=dict)

    def add(self, worker: str, item: str, rating: Rating | str) -> None:
        if not hasattr(self, "_seen"):
            self._seen = (set(self.items), set(self.workers))
        items, workers = self._seen
        if item not in items:
            items.add(item)
            self.items.append(item)
        if worker not in workers:
            workers.add(worker)
            self.workers.append(worker)
        self.ratings[(worker, item)] = Rating(rating)

    def by_item(self) -> dict[str, list[Rating]]:
        units: dict[str, list[Rating]] = {i: [] for i in self.items}
        for (_, item), r in self.ratings.items():
            units.setdefault(item, []).append(r)
        return units

    def validate(self) -> None:
        rated = {item for _, item in self.ratings}
        missing = [i for i in self.items if i not in rated]
        if missing:
            raise CorpusError(f"items without any rating: {missing[:5]}")


def read_judgments(path) -> JudgmentTable:
    table = JudgmentTable()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                table.add(str(row["worker_id"]), str(row["item_id"]), row["rating"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad judgment row ({exc})") from None
    table.validate()
    return table


def majority_aggregate(table: JudgmentTable) -> dict[str, tuple[Rating, float]]:
    """Majority rating per item with confidence = share of ratings agreeing.

    Stand-in for a platform-provided confidence; ties resolve in
    Rating declaration order.
    """
    out = {}
    order = list(Rating)
    for item, ratings in table.by_item().items():
        if not ratings:
            continue
        counts = Counter(ratings)
        best = max(order, key=lambda r: (counts[r], -order.index(r)))
        out[item] = (best, counts[best] / len(ratings))
    return out


def filter_judgments(
    table: JudgmentTable,
    aggregated: Mapping[str, tuple[Rating | str, float]],
    texts: Mapping[str, str] | None = None,
    article_types: Mapping[str, str] | None = None,
) -> list[LabeledStatement]:
    """Keep items labeled biased/neutral with confidence of at least 0.6."""
    kept = []
    for item in table.items:
        if item not in aggregated:
            raise CorpusError(f"no aggregated judgment for item {item!r}")
        rating, confidence = aggregated[item]
        rating = Rating(rating)
        if rating is Rating.DONT_KNOW or confidence < CONFIDENCE_THRESHOLD:
            continue
        kept.append(
            LabeledStatement(
                id=item,
                text=(texts or {}).get(item, item),
                label=Label(rating.value),
                confidence=float(confidence),
                article_type=(article_types or {}).get(item, ""),
                source=Source.CROWD_POV,
            )
        )
    return kept


def krippendorff_alpha(table: JudgmentTable) -> float:
    """Nominal Krippendorff's alpha via the coincidence matrix.

    Items rated only once are not pairable and are left out.
    """
    units = [rs for rs in table.by_item().values() if len(rs) >= 2]
    values = sorted({r.value for rs in units for r in rs})
    idx = {v: i for i, v in enumerate(values)}
    k = len(values)
    coincidence = [[0.0] * k for _ in range(k)]
    for rs in units:
        m = len(rs)
        counts = Counter(idx[r.value] for r in rs)
        for c, nc in counts.items():
            for d, nd in counts.items():
                pairs = nc * (nd - 1) if c == d else nc * nd
                coincidence[c][d] += pairs / (m - 1)
    n_c = [sum(row) for row in coincidence]
    n = sum(n_c)
    if n < 2:
        raise UndefinedAgreementError("fewer than two pairable ratings")
    observed = sum(coincidence[c][d] for c in range(k) for d in range(k) if c != d)
    expected = sum(n_c[c] * n_c[d] for c in range(k) for d in range(k) if c != d)
    if expected == 0:
        # a single value used throughout: no disagreement possible
        return 1.0
    return 1.0 - (n - 1) * observed / expected


# ---------------------------------------------------------------------------
# regimes


def largest_remainder(histogram: Mapping[str, int], total: int) -> dict[str, int]:
    """Apportion ``total`` proportionally to ``histogram``; ties go by key order."""
    size = sum(histogram.values())
    if size == 0:
        return {k: 0 for k in histogram}
    quotas = {k: total * v / size for k, v in histogram.items()}
    alloc = {k: int(q) for k, q in quotas.items()}
    left = total - sum(alloc.values())
    ranked = sorted(quotas, key=lambda k: (-(quotas[k] - alloc[k]), k))
    for k in ranked[:left]:
        alloc[k] += 1
    return alloc


def build_regime(
    biased: Sequence[LabeledStatement],
    neutral_pool: Sequence[LabeledStatement],
    regime: Regime | str,
    seed: int,
) -> list[LabeledStatement]:
    """Neutral side of a dataset regime; the biased side is always ``biased``."""
    regime = Regime(regime)
    if not neutral_pool:
        raise CorpusError("neutral pool is empty")
    if regime is Regime.CW_HARD:
        return list(neutral_pool)
    rng = random.Random(seed)
    need = len(biased)
    if regime is Regime.FEATURED:
        if len(neutral_pool) < need:
            raise CorpusError(f"featured pool has {len(neutral_pool)} statements, need {need}")
        return rng.sample(list(neutral_pool), need)

    histogram = Counter(s.article_type for s in biased)
    quotas = largest_remainder(dict(sorted(histogram.items())), need)
    strata: dict[str, list[LabeledStatement]] = defaultdict(list)
    for s in neutral_pool:
        strata[s.article_type].append(s)
    sample = []
    for article_type in sorted(quotas):
        want = quotas[article_type]
        have = strata.get(article_type, [])
        if len(have) < want:
            raise StratumExhaustedError(article_type, want, len(have))
        sample.extend(rng.sample(have, want))
    return sample


# ---------------------------------------------------------------------------
# splitting


@dataclass
class DatasetSplit:
    train: list[LabeledStatement]
    validation: list[LabeledStatement]
    test: list[LabeledStatement]
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split(data: Sequence[LabeledStatement], seed: int) -> DatasetSplit:
    """Label-stratified 70/10/20 split, deterministic in ``seed``."""
    n = len(data)
    if n < 10:
        raise CorpusError(f"need at least 10 statements to split, got {n}")
    ids = [s.id for s in data]
    if len(set(ids)) != n:
        raise CorpusError("statement ids must be unique")
    n_train = round(SPLIT_FRACTIONS[0] * n)
    n_val = round(SPLIT_FRACTIONS[1] * n)
    sizes = {"train": n_train, "validation": n_val, "test": n - n_train - n_val}

    rng = random.Random(seed)
    groups = {
        label: [s for s in data if s.label is label] for label in (Label.BIASED, Label.NEUTRAL)
    }
    for g in groups.values():
        rng.shuffle(g)
    biased_alloc = largest_remainder(sizes, len(groups[Label.BIASED]))
    parts: dict[str, list[LabeledStatement]] = {}
    b_pos = u_pos = 0
    for name in ("train", "validation", "test"):
        nb = biased_alloc[name]
        nu = sizes[name] - nb
        part = groups[Label.BIASED][b_pos : b_pos + nb] + groups[Label.NEUTRAL][u_pos : u_pos + nu]
        b_pos += nb
        u_pos += nu
        rng.shuffle(part)
        parts[name] = part
    return DatasetSplit(parts["train"], parts["validation"], parts["test"], seed)


def split_to_json(s: DatasetSplit) -> dict:
    return {
        "seed": s.seed,
        "train": [x.id for x in s.train],
        "validation": [x.id for x in s.validation],
        "test": [x.id for x in s.test],
    }


def type_histogram(statements: Iterable[LabeledStatement]) -> dict[str, int]:
    return dict(sorted(Counter(s.article_type for s in statements).items()))


def load_split_dir(directory) -> DatasetSplit:
    d = Path(directory)
    meta = json.loads((d / "split.json").read_text(encoding="utf-8"))
    return DatasetSplit(
        read_corpus(d / "train.jsonl"),
        read_corpus(d / "validation.jsonl"),
        read_corpus(d / "test.jsonl"),
        int(meta["seed"]),
    )

