import numpy as np
import pytest

from fundusq.datasets import (
    BinaryLabel,
    DatasetManifest,
    FundusRecord,
    SplitSpec,
    TrinaryLabel,
    bin_score,
    is_on_grid,
    load_manifest,
    merge_pseudo,
    save_manifest,
    snap_to_grid,
    stratified_split,
)
from fundusq.errors import IdCollision, InsufficientData, ParseError, ValidationError

SPLITS = ("train", "validation", "test")


def make_manifest(n, seed=0, grid=True):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        if grid:
            q = float(rng.integers(2, 21)) / 2.0
        else:
            q = float(rng.uniform(1.0, 10.0))
        records.append(FundusRecord(id=f"r{i:05d}", image_uri=f"img{i}.png", quality=q))
    return DatasetManifest(records=records)


class TestManifestIo:
    def test_roundtrip(self, tmp_path):
        m = DatasetManifest(
            records=[
                FundusRecord("a", "a.png", "db1", quality=7.5),
                FundusRecord("b", "b.png", "db1", trinary=TrinaryLabel.USABLE),
                FundusRecord("c", "c.png", "db2", binary=BinaryLabel.POOR),
                FundusRecord("d", "d.png", "db2", quality=3.0, pseudo=True),
            ],
            split_assignment={"a": "train", "b": "validation"},
            source="unit",
        )
        path = tmp_path / "m.jsonl"
        save_manifest(m, path)
        back = load_manifest(path)
        assert len(back) == 4
        assert back.record("a").quality == 7.5
        assert back.record("b").trinary is TrinaryLabel.USABLE
        assert back.record("c").binary is BinaryLabel.POOR
        assert back.record("d").pseudo
        assert back.split_assignment == m.split_assignment

    def test_three_records(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"version": 1, "source": "t", "created": ""}\n'
            '{"id": "x", "image_uri": "x.png"}\n'
            '{"id": "y", "image_uri": "y.png", "quality": 5.5}\n'
            '{"id": "z", "image_uri": "z.png", "trinary": "Good"}\n'
        )
        assert len(load_manifest(path)) == 3

    def test_out_of_range_quality_names_record(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"version": 1}\n{"id": "bad1", "image_uri": "a.png", "quality": 10.5}\n'
        )
        with pytest.raises(ValidationError) as exc:
            load_manifest(path)
        assert exc.value.record_id == "bad1"

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"version": 1}\n'
            '{"id": "a", "image_uri": "a.png"}\n'
            '{"id": "a", "image_uri": "b.png"}\n'
        )
        with pytest.raises(ValidationError):
            load_manifest(path)

    def test_parse_error(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("not json\n")
        with pytest.raises(ParseError):
            load_manifest(path)

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"version": 1}\n{"id": "a", "image_uri": "a.png", "mystery": 1}\n'
        )
        with pytest.raises(ValidationError):
            load_manifest(path)

    def test_pseudo_requires_quality(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"version": 1}\n{"id": "a", "image_uri": "a.png", "pseudo": true}\n'
        )
        with pytest.raises(ValidationError):
            load_manifest(path)


class TestBinScore:
    def test_boundaries(self):
        assert bin_score(1.0, 0.5) == 0
        assert bin_score(10.0, 0.5) == 18
        assert bin_score(6.5, 0.5) == 11  # floor((6.5-1)/0.5)

    def test_grid_partition_is_disjoint_and_exhaustive(self):
        # every grid score maps to exactly one of the 19 bins
        seen = [bin_score(1.0 + 0.5 * i, 0.5) for i in range(19)]
        assert seen == list(range(19))

    def test_off_grid_scores(self):
        assert bin_score(1.49, 0.5) == 0
        assert bin_score(1.51, 0.5) == 1


class TestStratifiedSplit:
    def test_paper_counts_exact(self):
        m = make_manifest(1245, seed=1)
        out = stratified_split(m, SplitSpec(counts=(932, 104, 209), seed=5))
        assert out.split_sizes() == {"train": 932, "validation": 104, "test": 209}

    def test_exact_proportions_single_bin(self):
        records = [
            FundusRecord(f"r{i}", f"{i}.png", quality=5.0) for i in range(10)
        ]
        m = DatasetManifest(records=records)
        out = stratified_split(
            m, SplitSpec(fractions=(0.8, 0.1, 0.1), seed=0)
        )
        assert out.split_sizes() == {"train": 8, "validation": 1, "test": 1}

    def test_per_bin_deviation_at_most_one_record(self):
        # brute-force recount over all bins of a 1245-record manifest
        m = make_manifest(1245, seed=2, grid=False)
        counts = (932, 104, 209)
        out = stratified_split(m, SplitSpec(counts=counts, seed=9))
        fractions = {s: c / 1245 for s, c in zip(SPLITS, counts)}
        by_bin = {}
        for r in m.records:
            by_bin.setdefault(bin_score(r.quality, 0.5), []).append(r.id)
        for ids in by_bin.values():
            for s in SPLITS:
                alloc = sum(1 for i in ids if out.split_assignment[i] == s)
                assert abs(alloc - len(ids) * fractions[s]) <= 1.0

    def test_deterministic_under_seed(self):
        m = make_manifest(400, seed=3)
        a = stratified_split(m, SplitSpec(counts=(300, 50, 50), seed=17))
        b = stratified_split(m, SplitSpec(counts=(300, 50, 50), seed=17))
        assert a.split_assignment == b.split_assignment
        c = stratified_split(m, SplitSpec(counts=(300, 50, 50), seed=18))
        assert c.split_assignment != a.split_assignment

    def test_disjoint_and_covering(self):
        m = make_manifest(123, seed=4)
        out = stratified_split(m, SplitSpec(fractions=(0.6, 0.2, 0.2), seed=0))
        assert set(out.split_assignment) == m.ids()
        assert sum(out.split_sizes().values()) == 123

    def test_insufficient_data(self):
        m = make_manifest(10, seed=5)
        with pytest.raises(InsufficientData):
            stratified_split(m, SplitSpec(counts=(10, 5, 5), seed=0))

    def test_unscored_record_rejected_when_stratifying(self):
        m = DatasetManifest(records=[FundusRecord("a", "a.png")])
        with pytest.raises(ValidationError):
            stratified_split(m, SplitSpec(fractions=(0.8, 0.1, 0.1), seed=0))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SplitSpec(counts=(1, 2, 3), fractions=(0.5, 0.25, 0.25))
        with pytest.raises(ValueError):
            SplitSpec(fractions=(0.5, 0.2, 0.2))
        with pytest.raises(ValueError):
            SplitSpec()


class TestMergePseudo:
    def _pseudo(self, n, prefix="p"):
        return DatasetManifest(
            records=[
                FundusRecord(f"{prefix}{i}", f"{prefix}{i}.png", quality=5.0, pseudo=True)
                for i in range(n)
            ]
        )

    def test_stage_three_paper_arithmetic(self):
        labeled = make_manifest(1245, seed=6)
        labeled = stratified_split(labeled, SplitSpec(counts=(932, 104, 209), seed=1))
        merged = merge_pseudo(
            labeled, self._pseudo(59910), validation_fraction=0.05, seed=0
        )
        assert merged.split_sizes() == {
            "train": 57899,
            "validation": 3047,
            "test": 209,
        }
        # test split untouched
        test_before = {i for i, s in labeled.split_assignment.items() if s == "test"}
        test_after = {i for i, s in merged.split_assignment.items() if s == "test"}
        assert test_before == test_after

    def test_empty_pseudo_is_identity(self):
        labeled = make_manifest(50, seed=7)
        labeled = stratified_split(labeled, SplitSpec(fractions=(0.8, 0.1, 0.1), seed=1))
        merged = merge_pseudo(labeled, DatasetManifest())
        assert merged is labeled

    def test_id_collision(self):
        labeled = make_manifest(5, seed=8)
        clash = DatasetManifest(
            records=[FundusRecord("r00001", "x.png", quality=5.0, pseudo=True)]
        )
        with pytest.raises(IdCollision):
            merge_pseudo(labeled, clash)

    def test_default_mode_pseudo_never_in_validation_or_test(self):
        labeled = make_manifest(60, seed=9)
        labeled = stratified_split(labeled, SplitSpec(fractions=(0.7, 0.15, 0.15), seed=1))
        merged = merge_pseudo(labeled, self._pseudo(40))
        for r in merged.records:
            if r.pseudo:
                assert merged.split_assignment[r.id] == "train"

    def test_pseudo_flag_required(self):
        labeled = make_manifest(5, seed=10)
        bad = DatasetManifest(records=[FundusRecord("q1", "q.png", quality=5.0)])
        with pytest.raises(ValidationError):
            merge_pseudo(labeled, bad)


class TestGridHelpers:
    def test_is_on_grid(self):
        assert is_on_grid(6.5) and is_on_grid(1.0) and is_on_grid(10.0)
        assert not is_on_grid(6.25)

    def test_snap_rounds_halves_up(self):
        assert snap_to_grid(6.25) == 6.5
        assert snap_to_grid(6.2) == 6.0
        assert snap_to_grid(0.3) == 1.0
        assert snap_to_grid(10.4) == 10.0
