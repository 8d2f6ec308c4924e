from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alignembed import data as D


def numbered(n, kind="translation"):
    return D.PairDataset([(f"a{i} x", f"b{i} y") for i in range(n)], kind)


class TestLoadTsv:
    def test_order_preserved(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text("one\tbir\ntwo\tiki\nthree\tüç\n", encoding="utf-8")
        ds = D.load_pairs_tsv(path)
        assert ds.pairs == [("one", "bir"), ("two", "iki"), ("three", "üç")]
        assert ds.source == str(path)

    def test_entailment_filter(self, tmp_path):
        path = tmp_path / "nli.tsv"
        lines = [f"p{i}\th{i}\t{lab}" for i in range(100)
                 for lab in ("entailment", "contradiction", "neutral")]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        ds = D.load_pairs_tsv(path, "entailment")
        assert len(ds) == 100
        assert ds.pairs[:2] == [("p0", "h0"), ("p1", "h1")]

    def test_malformed_over_threshold(self, tmp_path):
        path = tmp_path / "bad.tsv"
        rows = [f"a{i}\tb{i}" for i in range(48)] + ["only-one-column", "x\t\t"]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        with pytest.raises(D.MalformedInputError, match="2 malformed of 50"):
            D.load_pairs_tsv(path)

    def test_malformed_under_threshold_is_counted(self, tmp_path, caplog):
        path = tmp_path / "ok.tsv"
        rows = [f"a{i}\tb{i}" for i in range(199)] + ["broken"]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        ds = D.load_pairs_tsv(path)
        assert len(ds) == 199
        assert "1 malformed of 200" in caplog.text

    def test_blank_lines_and_crlf(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_bytes(b"a\tb\r\n\r\nc\td\r\n")
        assert D.load_pairs_tsv(path).pairs == [("a", "b"), ("c", "d")]

    def test_write_round_trip(self, tmp_path):
        ds = numbered(5)
        D.write_pairs_tsv(ds, tmp_path / "o.tsv")
        assert D.load_pairs_tsv(tmp_path / "o.tsv").pairs == ds.pairs

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            D.load_pairs_tsv(tmp_path / "absent.tsv")

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            D.PairDataset([("a", " ")])


class TestSplit:
    def test_rerun_identical(self):
        ds = numbered(10)
        assert D.split_validation(ds, 2, 5) == D.split_validation(ds, 2, 5)

    def test_zero_holdout(self):
        ds = numbered(10)
        train, val = D.split_validation(ds, 0, 1)
        assert train.pairs == ds.pairs and len(val) == 0

    def test_sizes_and_disjoint(self):
        ds = numbered(5000)
        train, val = D.split_validation(ds, 2048, 3)
        assert (len(train), len(val)) == (2952, 2048)
        assert set(train.pairs).isdisjoint(val.pairs)
        assert set(train.pairs) | set(val.pairs) == set(ds.pairs)

    def test_order_kept(self):
        ds = numbered(50)
        train, val = D.split_validation(ds, 20, 0)
        pos = {p: i for i, p in enumerate(ds.pairs)}
        for part in (train, val):
            idx = [pos[p] for p in part.pairs]
            assert idx == sorted(idx)

    def test_too_large(self):
        with pytest.raises(ValueError):
            D.split_validation(numbered(3), 3, 0)


class TestEvalPairings:
    def test_thousand_each(self):
        pairings = D.make_eval_pairings(numbered(1000), 1000, 1000, seed=4)
        assert len(pairings) == 2000
        assert pairings.counts() == {1.0: 1000, 0.0: 1000}

    def test_never_own_mate_exhaustive(self):
        ds = numbered(3)
        mate = {a: b for a, b in ds.pairs}
        for seed in range(200):
            for a, b, label in D.make_eval_pairings(ds, 3, 20, seed).items:
                assert (mate[a] == b) == (label == 1.0)

    def test_deterministic(self):
        ds = numbered(30)
        assert D.make_eval_pairings(ds, 10, 10, 2).items == D.make_eval_pairings(ds, 10, 10, 2).items

    def test_negatives_cover_all_offsets(self):
        # the shifted draw must still reach every j != i
        ds = numbered(4)
        hits = Counter((a, b) for a, b, lab in D.make_eval_pairings(ds, 0, 4000, 0).items)
        assert len(hits) == 4 * 3
        assert min(hits.values()) > 250

    def test_insufficient(self):
        with pytest.raises(ValueError):
            D.make_eval_pairings(numbered(5), 6, 0, 0)
        with pytest.raises(ValueError):
            D.make_eval_pairings(numbered(1), 1, 1, 0)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            D.LabeledPairings([("a", "b", 0.5)])


class TestBatchIter:
    def test_counts(self):
        batches = list(D.batch_iter(numbered(100), 32, 4, seed=0))
        assert len(batches) == 4
        assert all(len(b) == 32 for b in batches)
        assert len({p for b in batches[:3] for p in b}) == 96

    def test_published_schedule_epochs(self):
        # Tatoeba en-tr is roughly 1.1M pairs
        assert D.epochs_for(120_000, 32, 1_100_000) == pytest.approx(3.5, abs=0.05)

    def test_same_seed_same_sequence(self):
        ds = numbered(50)
        assert list(D.batch_iter(ds, 8, 20, 7)) == list(D.batch_iter(ds, 8, 20, 7))
        assert list(D.batch_iter(ds, 8, 20, 7)) != list(D.batch_iter(ds, 8, 20, 8))

    def test_epoch_reshuffled_with_seed_plus_epoch(self):
        ds = numbered(20)
        batches = list(D.batch_iter(ds, 10, 4, 3))
        second_epoch = [p for b in batches[2:] for p in b]
        order = np.random.default_rng(4).permutation(20)
        assert second_epoch == [ds.pairs[i] for i in order]

    def test_duplicates_resampled(self):
        pairs = [("same", f"t{i}") for i in range(5)] + [(f"s{i}", f"t{i + 5}") for i in range(30)]
        it = D.batch_iter(D.PairDataset(pairs), 8, 30, 1)
        for batch in it:
            assert len({a for a, _ in batch}) == 8
            assert len({b for _, b in batch}) == 8
        assert it.collisions > 0

    def test_batch_larger_than_dataset(self):
        with pytest.raises(ValueError):
            D.batch_iter(numbered(3), 4, 1, 0)


class TestSynth:
    cfg = D.SynthConfig(n_translation=300, n_entailment=200, n_eval=50, seed=11)

    def test_bijection_round_trip(self):
        lang = D.SynthLanguagePair.build(self.cfg)
        tr, _, _ = D.synth_bilingual(self.cfg)
        for a, b in tr.pairs:
            assert lang.translate(a) == b
            assert lang.back_translate(b) == a
        assert sorted(lang.mapping.tolist()) == list(range(self.cfg.vocab_l1))

    def test_deterministic(self):
        assert D.synth_bilingual(self.cfg) == D.synth_bilingual(self.cfg)

    def test_streams_independent(self):
        bigger = D.SynthConfig(n_translation=600, n_entailment=200, n_eval=50, seed=11)
        assert D.synth_bilingual(bigger)[1] == D.synth_bilingual(self.cfg)[1]

    def test_sizes_and_kinds(self):
        tr, ent, ev = D.synth_bilingual(self.cfg)
        assert [len(tr), len(ent), len(ev)] == [300, 200, 50]
        assert [tr.kind, ent.kind, ev.kind] == ["translation", "entailment", "caption"]
        assert all(w.startswith("tr") for a, b in ent.pairs for w in (a + " " + b).split())

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 10_000))
    def test_paraphrase_budget(self, seed):
        rng = np.random.default_rng(seed)
        probs = np.full(50, 1 / 50)
        src = rng.integers(0, 50, size=10).tolist()
        out = D.paraphrase(src, 0.2, probs, rng)
        shared = sum((Counter(src) & Counter(out)).values())
        assert shared >= 8
        assert 8 <= len(out) <= 10

    @pytest.mark.parametrize("field, value", [("edit_rate", 0.0), ("edit_rate", 1.0),
                                              ("n_eval", 0), ("min_len", 13)])
    def test_invalid_config(self, field, value):
        with pytest.raises(ValueError):
            D.SynthConfig(**{field: value})
