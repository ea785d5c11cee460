import csv
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asap_joint.corpus import (
    CurationConfig,
    Dataset,
    Review,
    compute_stats,
    count_chinese,
    count_sentences,
    curate,
    non_chinese_ratio,
    parse_review,
    read_csv,
    serialize_review,
    split,
    split_sizes,
    write_csv,
)
from asap_joint.errors import BadRatios, DuplicateId, EmptyDataset, MalformedRating, MissingColumn, UnknownPolarity
from asap_joint.taxonomy import AspectTaxonomy, Polarity, default_taxonomy

TAX = default_taxonomy()


def record(star="3", text="好吃", rid="a", **cells):
    row = {"id": rid, "review": text, "star": star}
    row.update({name: "" for name in TAX.names})
    row.update({k.replace("__", "#"): v for k, v in cells.items()})
    return row


def review(rid, text, rating=4, mentioned=(0,)):
    labels = [None] * TAX.n
    for i in mentioned:
        labels[i] = Polarity.POSITIVE
    return Review(rid, text, rating, tuple(labels))


class TestTaxonomy:
    def test_eighteen_categories(self):
        assert TAX.n == 18
        assert "Food#Taste" in TAX and "Ambience#Decoration" in TAX
        assert [e.index for e in TAX] == list(range(18))
        assert len(set(TAX.names)) == 18

    def test_five_coarse_groups(self):
        assert {e.coarse for e in TAX} == {"Food", "Price", "Location", "Service", "Ambience"}

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            AspectTaxonomy.from_names(["Food#Taste", "Food#Taste"])

    def test_fingerprint_tracks_names(self):
        other = AspectTaxonomy.from_names(TAX.names[::-1])
        assert TAX.fingerprint()["n"] == 18
        assert TAX.fingerprint() != other.fingerprint()


class TestPolarity:
    @pytest.mark.parametrize("code", [-1, 0, 1])
    def test_round_trip(self, code):
        pol = Polarity(code)
        assert int(pol) == code
        assert Polarity.from_class_index(pol.class_index) is pol

    def test_class_order(self):
        assert [Polarity.NEGATIVE.class_index, Polarity.NEUTRAL.class_index, Polarity.POSITIVE.class_index] == [0, 1, 2]
        assert len(Polarity) == 3


class TestParseReview:
    def test_single_aspect(self):
        r = parse_review(record(star="3", Food__Taste="1"), TAX)
        assert r.rating == 3
        assert r.mentioned_count == 1
        assert r.labels[TAX.index_of("Food#Taste")] is Polarity.POSITIVE
        assert sum(r.mask) == 1

    def test_rating_out_of_range(self):
        with pytest.raises(MalformedRating):
            parse_review(record(star="6"), TAX)

    @pytest.mark.parametrize("star", ["0", "3.5", "x", ""])
    def test_bad_ratings(self, star):
        with pytest.raises(MalformedRating):
            parse_review(record(star=star), TAX)

    def test_float_formatted_integer_rating(self):
        assert parse_review(record(star="4.0"), TAX).rating == 4

    def test_unknown_polarity(self):
        with pytest.raises(UnknownPolarity):
            parse_review(record(Food__Taste="2"), TAX)
        with pytest.raises(UnknownPolarity):
            parse_review(record(Food__Taste="good"), TAX)

    def test_missing_column(self):
        row = record()
        del row["Food#Taste"]
        with pytest.raises(MissingColumn):
            parse_review(row, TAX)

    def test_sentinel_means_not_mentioned(self):
        r = parse_review(record(Food__Taste="-2", Price__Level="0"), TAX)
        assert r.mentioned_count == 1
        assert r.labels[TAX.index_of("Food#Taste")] is None
        # a different sentinel is configurable; -2 then becomes an error
        with pytest.raises(UnknownPolarity):
            parse_review(record(Food__Taste="-2"), TAX, sentinel=-9)

    def test_nine_aspect_example(self):
        cells = {
            "Location#Transportation": "1",
            "Ambience#Noise": "-1",
            "Price#Level": "0",
            "Price#Cost_effective": "-1",
            "Service#Timely": "-1",
            "Ambience#Decoration": "1",
            "Ambience#Space": "1",
            "Food#Portion": "1",
            "Food#Taste": "1",
        }
        row = record(star="3")
        row.update(cells)
        r = parse_review(row, TAX)
        assert r.rating == 3
        assert r.mentioned_count == 9
        for name, code in cells.items():
            assert r.labels[TAX.index_of(name)] == Polarity(int(code))

    def test_mask_matches_labels(self):
        r = parse_review(record(Food__Taste="1", Service__Queue="-1", Ambience__Noise="0"), TAX)
        assert r.mask == tuple(0 if lab is None else 1 for lab in r.labels)
        assert r.mentioned_count == sum(r.mask) == 3


class TestCsv:
    def test_fixture_reads_by_header_name(self, fixture_csv):
        ds = read_csv(fixture_csv)
        assert [r.id for r in ds] == ["r1", "r2", "r3"]
        assert ds[1].labels[TAX.index_of("Price#Level")] is Polarity.NEGATIVE
        assert ds[1].labels[TAX.index_of("Service#Queue")] is None

    def test_write_read_round_trip(self, fixture_csv, tmp_path):
        ds = read_csv(fixture_csv)
        write_csv(ds, tmp_path / "out.csv")
        again = read_csv(tmp_path / "out.csv")
        assert again.reviews == ds.reviews
        with open(tmp_path / "out.csv", encoding="utf-8") as fh:
            header = next(csv.reader(fh))
        assert header == ["id", "review", "star", *TAX.names]

    def test_duplicate_ids(self):
        with pytest.raises(DuplicateId):
            Dataset((review("a", "好"), review("a", "坏")))


_texts = st.text(st.characters(blacklist_categories=("Cs", "Cc")) | st.sampled_from("\n,\"'"), min_size=1, max_size=60)
_texts = _texts.filter(lambda t: t.strip())
_labels = st.lists(st.sampled_from([None, *Polarity]), min_size=18, max_size=18)


class TestRoundTrip:
    @given(text=_texts, rating=st.integers(1, 5), labels=_labels,
           rid=st.from_regex(r"[A-Za-z0-9_]{1,12}", fullmatch=True))
    @settings(max_examples=200, deadline=None)
    def test_parse_inverts_serialize(self, text, rating, labels, rid):
        r = Review(rid, text, rating, tuple(labels))
        assert parse_review(serialize_review(r, TAX), TAX) == r

    @given(texts=st.lists(_texts, min_size=1, max_size=5))
    @settings(max_examples=30, deadline=None)
    def test_csv_file_round_trip(self, tmp_path_factory, texts):
        ds = Dataset(tuple(review(f"id{i}", t) for i, t in enumerate(texts)))
        path = tmp_path_factory.mktemp("rt") / "ds.csv"
        write_csv(ds, path)
        assert read_csv(path).reviews == ds.reviews


class TestCharacterCounting:
    def test_chinese_ranges(self):
        assert count_chinese("好吃abc㐀") == 3  # Extension A counts
        assert count_chinese("，。！") == 0

    def test_ratio_ignores_whitespace(self):
        assert non_chinese_ratio("好 好 a") == pytest.approx(1 / 3)

    def test_sentences(self):
        assert count_sentences("好吃。服务好！价格？") == 3
        assert count_sentences("no terminator") == 1
        assert count_sentences("一。。二!!") == 2


def zh(n):
    return "好" * n


class TestCuration:
    def _curate(self, *texts):
        return curate([review(f"r{i}", t) for i, t in enumerate(texts)])

    def test_short_review(self):
        _, rep = self._curate(zh(30))
        assert rep.dropped_short == 1 and rep.kept == 0

    def test_long_review(self):
        _, rep = self._curate(zh(1200))
        assert rep.dropped_long == 1 and rep.kept == 0

    def test_mostly_latin(self):
        _, rep = self._curate(zh(20) + "a" * 80)
        assert rep.dropped_non_chinese == 1

    @pytest.mark.parametrize("n, kept", [(49, False), (50, True), (1000, True), (1001, False)])
    def test_length_bounds_inclusive(self, n, kept):
        ds, rep = self._curate(zh(n))
        assert (len(ds) == 1) is kept

    @pytest.mark.parametrize("chinese, latin, kept", [(62, 138, True), (58, 142, False)])
    def test_ratio_threshold(self, chinese, latin, kept):
        text = zh(chinese) + "x" * latin
        assert non_chinese_ratio(text) == pytest.approx(0.69 if kept else 0.71)
        ds, rep = self._curate(text)
        assert (len(ds) == 1) is kept
        assert rep.dropped_non_chinese == (0 if kept else 1)

    def test_privacy_fields_stripped_and_malformed_counted(self):
        rows = [record(text=zh(60), rid="a", Food__Taste="1"), record(text=zh(60), rid="b", star="9")]
        for row in rows:
            row["user_id"] = "u1"
            row["post_time"] = "2020-01-01"
        ds, rep = curate(rows)
        assert rep.kept == 1 and rep.dropped_malformed == 1
        assert rep.dropped_fields == ["post_time", "user_id"]
        assert rep.kept + rep.dropped == rep.input_count == 2

    def test_quality_hook(self):
        cfg = CurationConfig(quality_filter=lambda r: "广告" not in r.text)
        ds, rep = curate([review("a", zh(60)), review("b", zh(60) + "广告")], cfg)
        assert [r.id for r in ds] == ["a"] and rep.dropped_low_quality == 1

    def test_idempotent(self):
        ds, _ = self._curate(zh(60), zh(10), zh(500))
        again, rep = curate(ds.reviews)
        assert rep.kept == len(ds) and rep.dropped == 0

    def test_config_from_key_value_file(self, tmp_path):
        path = tmp_path / "cur.cfg"
        path.write_text("# thresholds\nmin_chinese = 10\nmax_non_chinese_ratio=0.5\n")
        cfg = CurationConfig.from_file(path)
        assert cfg.min_chinese == 10 and cfg.max_non_chinese_ratio == 0.5 and cfg.max_chinese == 1000

    def test_config_from_json(self, tmp_path):
        path = tmp_path / "cur.json"
        path.write_text('{"max_chinese": 2000, "strip_fields": ["uid"]}')
        cfg = CurationConfig.from_file(path)
        assert cfg.max_chinese == 2000 and cfg.strip_fields == ("uid",)


class TestStats:
    def test_fixture_hand_count(self, fixture_csv):
        # r1 "菜很好吃。服务也不错！": 2 sentences, 11 visible chars, 9 Chinese, K=2 (pos, pos), 5 stars
        # r2 "价格有点贵. 环境一般? 下次再来": 3 sentences, 15 visible, 13 Chinese,
        # K=3 (neg, neu, neu), 3 stars
        # r3 "Taste is great 味道好": 1 sentence, 15 visible, 3 Chinese, K=1 (pos), 4 stars
        stats = compute_stats(read_csv(fixture_csv))
        assert stats.review_count == 3
        assert stats.avg_sentences_per_review == pytest.approx(6 / 3)
        assert stats.avg_aspects_per_review == pytest.approx(6 / 3)
        assert stats.avg_length_chars == pytest.approx(41 / 3)
        assert stats.avg_chinese_chars == pytest.approx(25 / 3)
        assert stats.polarity_counts == {"positive": 3, "negative": 1, "neutral": 2}
        assert stats.rating_histogram == (0, 0, 1, 1, 1)

    def test_singleton(self):
        stats = compute_stats(Dataset((review("a", "好", rating=5, mentioned=(0, 3)),)))
        assert stats.avg_aspects_per_review == 2.0
        assert stats.rating_histogram == (0, 0, 0, 0, 1)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            compute_stats(Dataset(()))

    def test_invariants(self, fixture_csv):
        ds = read_csv(fixture_csv)
        stats = compute_stats(ds)
        assert sum(stats.polarity_counts.values()) == sum(r.mentioned_count for r in ds)
        assert sum(stats.rating_histogram) == stats.review_count

    def test_table_mentions_counts(self, fixture_csv):
        table = compute_stats(read_csv(fixture_csv)).format_table("train")
        assert "Positive" in table and "5-star" in table


def many(n):
    return Dataset(tuple(review(f"r{i}", f"好{i}") for i in range(n)))


class TestSplit:
    def test_exact_division(self):
        parts = split(many(100), seed=5, ratios=(0.8, 0.1, 0.1))
        assert tuple(len(p) for p in parts) == (80, 10, 10)
        assert [p.split for p in parts] == ["train", "dev", "test"]

    def test_deterministic(self):
        a = split(many(50), seed=9)
        b = split(many(50), seed=9)
        assert [[r.id for r in p] for p in a] == [[r.id for r in p] for p in b]

    def test_bad_ratios(self):
        with pytest.raises(BadRatios):
            split(many(10), seed=0, ratios=(0.5, 0.5, 0.5))
        with pytest.raises(BadRatios):
            split(many(10), seed=0, ratios=(1.0, 0.0, 0.0))

    @given(n=st.integers(0, 300), seed=st.integers(0, 2**32 - 1),
           weights=st.tuples(*[st.integers(1, 20)] * 3))
    @settings(max_examples=100, deadline=None)
    def test_partition(self, n, seed, weights):
        total = sum(weights)
        ratios = tuple(w / total for w in weights)
        if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
            return
        ds = many(n)
        parts = split(ds, seed, ratios)
        ids = [r.id for p in parts for r in p]
        assert sorted(ids) == sorted(r.id for r in ds)
        assert len(set(ids)) == n
        assert tuple(len(p) for p in parts) == split_sizes(n, ratios)
