import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from povbias import corpus as cp
from povbias.corpus import JudgmentTable, Label, LabeledStatement, Rating, Regime, Source

from oracles import KRIPP_FIXTURE, KRIPP_FIXTURE_ALPHA, pairwise_alpha


def _stmt(i, label=Label.BIASED, article_type="Place", source=Source.CROWD_POV):
    return LabeledStatement(f"s{i}", f"statement number {i}", label, 1.0, article_type, source)


def _table(rows):
    t = JudgmentTable()
    for w, i, r in rows:
        t.add(w, i, r)
    return t


def test_filter_confidence_threshold():
    t = _table([("w1", "a", "biased"), ("w1", "b", "neutral"), ("w1", "c", "dont_know")])
    agg = {"a": ("biased", 0.59), "b": ("neutral", 0.6), "c": ("dont_know", 1.0)}
    kept = cp.filter_judgments(t, agg, texts={"a": "A.", "b": "B.", "c": "C."})
    assert [(s.id, s.label, s.text) for s in kept] == [("b", Label.NEUTRAL, "B.")]


def test_filter_missing_aggregation_names_item():
    t = _table([("w1", "a", "biased"), ("w1", "zz9", "biased")])
    with pytest.raises(cp.CorpusError, match="zz9"):
        cp.filter_judgments(t, {"a": ("biased", 1.0)})


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from(list(Rating)), st.floats(0, 1)), min_size=1, max_size=30))
def test_filter_never_grows_or_relabels(entries):
    t = JudgmentTable()
    agg = {}
    for n, (rating, conf) in enumerate(entries):
        t.add("w", f"i{n}", rating)
        agg[f"i{n}"] = (rating, conf)
    kept = cp.filter_judgments(t, agg)
    assert len(kept) <= len(entries)
    for s in kept:
        assert s.label.value == agg[s.id][0].value


def test_majority_aggregate_confidence():
    t = _table([("w1", "a", "biased"), ("w2", "a", "biased"), ("w3", "a", "neutral")])
    label, conf = cp.majority_aggregate(t)["a"]
    assert label is Rating.BIASED and conf == pytest.approx(2 / 3)


def test_alpha_perfect_agreement():
    t = _table([("w1", "a", "biased"), ("w2", "a", "biased"), ("w1", "b", "neutral"), ("w2", "b", "neutral")])
    assert cp.krippendorff_alpha(t) == 1.0


def test_alpha_single_value_everywhere_is_one():
    t = _table([("w1", "a", "biased"), ("w2", "a", "biased")])
    assert cp.krippendorff_alpha(t) == 1.0


def test_alpha_two_by_two_hand_worked():
    # o_AA = 2, o_AB = o_BA = 1, n_A = 3, n_B = 1, n = 4
    # alpha = 1 - 3 * 2 / (2 * 3 * 1) = 0
    t = _table([("w1", "i1", "neutral"), ("w2", "i1", "neutral"), ("w1", "i2", "neutral"), ("w2", "i2", "biased")])
    assert cp.krippendorff_alpha(t) == pytest.approx(0.0, abs=1e-12)


def test_alpha_fixture_matches_hand_value_and_pairwise_oracle():
    t = _table(KRIPP_FIXTURE)
    got = cp.krippendorff_alpha(t)
    assert got == pytest.approx(KRIPP_FIXTURE_ALPHA, abs=1e-9)
    units = [[r.value for r in rs] for rs in t.by_item().values()]
    assert pairwise_alpha(units) == pytest.approx(KRIPP_FIXTURE_ALPHA, abs=1e-9)


def test_alpha_can_be_negative():
    t = _table([("w1", "a", "biased"), ("w2", "a", "neutral"), ("w1", "b", "neutral"), ("w2", "b", "biased")])
    assert cp.krippendorff_alpha(t) < 0


def test_alpha_undefined_without_pairs():
    t = _table([("w1", "a", "biased"), ("w2", "b", "neutral")])
    with pytest.raises(cp.UndefinedAgreementError):
        cp.krippendorff_alpha(t)


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False))
def test_alpha_permutation_invariant(rnd):
    rows = list(KRIPP_FIXTURE)
    base = cp.krippendorff_alpha(_table(rows))
    wnames = sorted({w for w, _, _ in rows})
    inames = sorted({i for _, i, _ in rows})
    workers = dict(zip(wnames, rnd.sample([f"x{k}" for k in range(len(wnames))], len(wnames))))
    items = dict(zip(inames, rnd.sample([f"y{k}" for k in range(len(inames))], len(inames))))
    shuffled = [(workers[w], items[i], r) for w, i, r in rows]
    rnd.shuffle(shuffled)
    assert cp.krippendorff_alpha(_table(shuffled)) == pytest.approx(base, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from(["neutral", "biased", "dont_know"]), min_size=2, max_size=4), min_size=2, max_size=8))
def test_alpha_matches_pairwise_oracle(units):
    rows = [(f"w{j}", f"i{i}", r) for i, u in enumerate(units) for j, r in enumerate(u)]
    t = _table(rows)
    assert cp.krippendorff_alpha(t) == pytest.approx(pairwise_alpha(units), abs=1e-9)


def test_featured_statement_must_be_neutral():
    with pytest.raises(cp.CorpusError):
        LabeledStatement("x", "text", Label.BIASED, 1.0, "", Source.FEATURED_ARTICLE)
    with pytest.raises(cp.CorpusError):
        LabeledStatement("x", "   ", Label.NEUTRAL)
    with pytest.raises(cp.CorpusError):
        LabeledStatement("x", "t", Label.NEUTRAL, confidence=1.5)


def test_regime_cw_hard_identity():
    neutral = [_stmt(i, Label.NEUTRAL) for i in range(5)]
    assert cp.build_regime([_stmt(9)], neutral, Regime.CW_HARD, 0) == neutral


def test_regime_featured_size_and_determinism():
    biased = [_stmt(i) for i in range(30)]
    pool = [_stmt(100 + i, Label.NEUTRAL, source=Source.FEATURED_ARTICLE) for i in range(200)]
    a = cp.build_regime(biased, pool, "featured", 4)
    assert len(a) == 30 and len({s.id for s in a}) == 30
    assert a == cp.build_regime(biased, pool, "featured", 4)


def test_regime_featured_full_size():
    biased = [_stmt(i) for i in range(1843)]
    pool = [_stmt(10_000 + i, Label.NEUTRAL, source=Source.FEATURED_ARTICLE) for i in range(5000)]
    assert len(cp.build_regime(biased, pool, Regime.FEATURED, 1)) == 1843


def test_regime_type_balanced_histogram():
    biased = [_stmt(0, article_type="Place"), _stmt(1, article_type="Place"), _stmt(2, article_type="Agent"), _stmt(3, article_type="Agent")]
    pool = [_stmt(10 + i, Label.NEUTRAL, article_type=t) for i, t in enumerate(["Place", "Agent", "Work"] * 5)]
    out = cp.build_regime(biased, pool, Regime.TYPE_BALANCED, 0)
    assert Counter(s.article_type for s in out) == {"Place": 2, "Agent": 2}


def test_regime_stratum_exhausted_names_type():
    biased = [_stmt(i, article_type="Species") for i in range(3)]
    pool = [_stmt(10, Label.NEUTRAL, article_type="Species"), _stmt(11, Label.NEUTRAL, article_type="Place")]
    with pytest.raises(cp.StratumExhaustedError, match="Species"):
        cp.build_regime(biased, pool, Regime.TYPE_BALANCED, 0)


def test_largest_remainder_tie_by_name():
    assert cp.largest_remainder({"b": 1, "a": 1}, 1) == {"a": 1, "b": 0}
    assert cp.largest_remainder({"x": 3, "y": 3, "z": 4}, 5) == {"x": 2, "y": 1, "z": 2}
    alloc = cp.largest_remainder({"x": 1, "y": 1, "z": 1}, 2)
    assert alloc == {"x": 1, "y": 1, "z": 0}


def _data(n, n_biased):
    return [_stmt(i, Label.BIASED if i < n_biased else Label.NEUTRAL) for i in range(n)]


def test_split_100_40():
    s = cp.split(_data(100, 40), seed=3)
    assert s.sizes() == (70, 10, 20)
    assert [sum(x.is_biased for x in part) for part in (s.train, s.validation, s.test)] == [28, 4, 8]


def test_split_full_size():
    sizes = cp.split(_data(4952, 1843), seed=0).sizes()
    for got, want in zip(sizes, (3466, 495, 991)):
        assert abs(got - want) <= 1


def test_split_deterministic():
    data = _data(57, 20)
    a, b = cp.split(data, 9), cp.split(data, 9)
    assert [x.id for x in a.train + a.validation + a.test] == [x.id for x in b.train + b.validation + b.test]
    c = cp.split(data, 10)
    assert [x.id for x in a.train] != [x.id for x in c.train]


def test_split_requires_ten():
    with pytest.raises(cp.CorpusError):
        cp.split(_data(9, 3), 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 300), st.floats(0, 1), st.integers(0, 2**31))
def test_split_partition_and_ratio(n, frac, seed):
    n_biased = int(n * frac)
    data = _data(n, n_biased)
    random.Random(seed).shuffle(data)
    s = cp.split(data, seed)
    ids = [x.id for x in s.train + s.validation + s.test]
    assert sorted(ids) == sorted(x.id for x in data)
    assert len(set(ids)) == n
    for part, frac_part in zip((s.train, s.validation, s.test), cp.SPLIT_FRACTIONS):
        assert abs(len(part) - frac_part * n) <= 1
        if part:
            expected_biased = n_biased * len(part) / n
            assert abs(sum(x.is_biased for x in part) - expected_biased) <= 1


def test_corpus_jsonl_round_trip(tmp_path):
    rows = [_stmt(1), LabeledStatement("z", "Some text.", Label.NEUTRAL, 0.7, "Work", Source.FEATURED_ARTICLE, ("DT", "NN", "."))]
    path = tmp_path / "c.jsonl"
    cp.write_corpus(path, rows)
    assert cp.read_corpus(path) == rows


def test_read_judgments(tmp_path):
    path = tmp_path / "j.jsonl"
    path.write_text('{"worker_id": "w1", "item_id": "a", "rating": "biased"}\n{"worker_id": "w2", "item_id": "a", "rating": "dont_know"}\n')
    t = cp.read_judgments(path)
    assert t.items == ["a"] and t.workers == ["w1", "w2"]
    assert t.ratings[("w2", "a")] is Rating.DONT_KNOW
