import numpy as np
import pytest

from mapreid.core import LabeledSet, Role, l2_normalize
from mapreid.data import (SplitManifest, SyntheticSpec, generate_synthetic, load_labeled_set, load_split,
                          pk_sampler, relabel_by_clothing, save_labeled_set, split_by_identity,
                          validate_manifest)
from mapreid.errors import (InvalidSpec, LabelColumnMissing, ManifestMismatch, MissingClothingLabels,
                            NonFiniteValue, ParseError, TooFewIdentities)

SMALL = SyntheticSpec(num_identities=20, instances_per_identity=6, dim=8, seed=3)


class TestSynthetic:
    def test_degenerate_clusters(self):
        s = generate_synthetic(SyntheticSpec(num_identities=5, instances_per_identity=4, dim=6,
                                             intra_sigma=0.0, clothing_shift_sigma=0.0))
        for pid in range(5):
            rows = s.embeddings[s.identity == pid]
            assert np.all(rows == rows[0])

    def test_deterministic(self):
        a, b = generate_synthetic(SMALL), generate_synthetic(SMALL)
        assert a.embeddings.tobytes() == b.embeddings.tobytes()
        assert np.array_equal(a.clothing, b.clothing) and np.array_equal(a.camera, b.camera)

    def test_shapes_and_labels(self):
        s = generate_synthetic(SMALL)
        assert (s.n, s.d) == (120, 8)
        assert np.bincount(s.identity).tolist() == [6] * 20
        assert s.clothing.max() < SMALL.clothing_clusters_per_identity

    def test_nearest_center(self):
        spec = SyntheticSpec(num_identities=30, instances_per_identity=5, dim=10, intra_sigma=0.05,
                             inter_scale=5.0, clothing_shift_sigma=0.0, seed=11)
        s = generate_synthetic(spec)
        centers = np.stack([s.embeddings[s.identity == i].mean(axis=0) for i in range(30)])
        d = ((s.embeddings[:, None, :] - centers[None]) ** 2).sum(-1)
        assert np.mean(d.argmin(axis=1) == s.identity) == 1.0

    def test_cross_clothing_less_similar(self):
        spec = SyntheticSpec(num_identities=50, instances_per_identity=8, dim=16, intra_sigma=0.2,
                             inter_scale=1.5, clothing_shift_sigma=2.0, seed=5)
        s = generate_synthetic(spec)
        u = l2_normalize(s.embeddings)
        sim = u @ u.T
        same_id = s.identity[:, None] == s.identity[None, :]
        same_cloth = same_id & (s.clothing[:, None] == s.clothing[None, :])
        np.fill_diagonal(same_cloth, False)
        cross = same_id & ~same_cloth
        np.fill_diagonal(cross, False)
        assert sim[same_cloth].mean() - sim[cross].mean() >= 0.3

    @pytest.mark.parametrize("kw", [dict(intra_sigma=-1.0), dict(num_identities=0), dict(dim=1),
                                    dict(clothing_shift_sigma=float("nan"))])
    def test_invalid(self, kw):
        with pytest.raises(InvalidSpec):
            generate_synthetic(SyntheticSpec(**kw))

    def test_split_disjoint(self):
        parts = split_by_identity(generate_synthetic(SMALL), seed=1)
        train_ids = set(parts["train"].original_identity.tolist())
        for name in ("validation.query", "validation.gallery", "test.query", "test.gallery"):
            assert not train_ids & set(parts[name].original_identity.tolist())
        assert set(parts["test.query"].original_identity.tolist()) <= set(parts["test.gallery"].original_identity.tolist())
        total = sum(parts[n].n for n in parts)
        assert total == 120


class TestPkSampler:
    def test_batch_of_64(self):
        s = generate_synthetic(SyntheticSpec(num_identities=40, instances_per_identity=6, dim=4))
        for batch in pk_sampler(s, 16, 4, seed=0, epoch=0):
            assert batch.size == 64
            ids, counts = np.unique(s.identity[batch.indices], return_counts=True)
            assert ids.size == 16 and np.all(counts == 4)

    def test_covers_every_identity(self):
        s = generate_synthetic(SyntheticSpec(num_identities=40, instances_per_identity=6, dim=4))
        seen = np.concatenate([s.identity[b.indices] for b in pk_sampler(s, 16, 4)])
        assert set(seen.tolist()) == set(range(40))

    def test_replacement(self):
        s = LabeledSet.from_raw(np.arange(12.0).reshape(6, 2) + 1, [0, 0, 1, 1, 1, 1])
        batch = pk_sampler(s, 2, 4, seed=2)[0]
        rows = batch.indices[s.identity[batch.indices] == 0]
        assert rows.size == 4 and set(rows.tolist()) <= {0, 1}

    def test_reproducible_and_epoch_dependent(self):
        s = generate_synthetic(SMALL)
        a = [b.indices.tolist() for b in pk_sampler(s, 4, 4, seed=5, epoch=0)]
        b = [b.indices.tolist() for b in pk_sampler(s, 4, 4, seed=5, epoch=0)]
        c = [b.indices.tolist() for b in pk_sampler(s, 4, 4, seed=5, epoch=1)]
        assert a == b and a != c

    def test_too_few_identities(self):
        with pytest.raises(TooFewIdentities):
            pk_sampler(generate_synthetic(SMALL), 21, 2)


class TestRelabel:
    def test_three_suits(self):
        # one person, three outfits: three classes
        s = LabeledSet.from_raw(np.ones((6, 2)), [7] * 6, clothing=[1, 1, 2, 2, 3, 3])
        r = relabel_by_clothing(s)
        assert r.num_identities == 3
        assert r.provenance["person_identity"].tolist() == [7] * 6

    def test_never_changes_clothes(self):
        s = LabeledSet.from_raw(np.ones((4, 2)), [2, 2, 5, 5], clothing=[1, 1, 1, 1])
        r = relabel_by_clothing(s)
        assert r.num_identities == 2
        assert np.array_equal(r.identity == r.identity[0], s.identity == s.identity[0])

    def test_pair_count_and_no_merging(self):
        s = generate_synthetic(SMALL)
        r = relabel_by_clothing(s)
        pairs = {(a, b) for a, b in zip(s.original_identity.tolist(), s.clothing.tolist())}
        assert r.num_identities == len(pairs)
        for c in np.unique(r.identity):
            assert np.unique(s.original_identity[r.identity == c]).size == 1

    def test_missing_clothing(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("id,camera,f0\n1,0,0.5\n")
        with pytest.raises(MissingClothingLabels):
            relabel_by_clothing(load_labeled_set(path))


class TestFileIo:
    FIXTURE = "id,camera,clothing,f0,f1\n10,0,1,0.5,-1.25\n20,1,0,3.0,0.125\n10,2,2,1e-3,7.0\n"

    def test_csv_fixture(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(self.FIXTURE)
        s = load_labeled_set(path)
        np.testing.assert_array_equal(s.embeddings, [[0.5, -1.25], [3.0, 0.125], [1e-3, 7.0]])
        assert s.identity.tolist() == [0, 1, 0]
        assert s.original_identity.tolist() == [10, 20, 10]
        assert s.camera.tolist() == [0, 1, 2] and s.clothing.tolist() == [1, 0, 2]

    def test_nan_coordinates(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("id,camera,f0,f1,f2\n1,0,0,0,0\n2,0,0,0,0\n3,0,0,nan,0\n")
        with pytest.raises(NonFiniteValue) as exc:
            load_labeled_set(path)
        assert (exc.value.row, exc.value.col) == (2, 1)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("id,f0\n1,0.5\n")
        with pytest.raises(LabelColumnMissing):
            load_labeled_set(path)

    def test_parse_error_line(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("id,camera,f0\n1,0,0.5\n2,x,0.5\n")
        with pytest.raises(ParseError) as exc:
            load_labeled_set(path)
        assert exc.value.line == 3

    def test_csv_and_binary_agree(self, tmp_path):
        s = generate_synthetic(SMALL)
        save_labeled_set(s, tmp_path / "s.csv")
        save_labeled_set(s, tmp_path / "s.bin")
        a, b = load_labeled_set(tmp_path / "s.csv"), load_labeled_set(tmp_path / "s.bin")
        assert a.embeddings.tobytes() == b.embeddings.tobytes() == s.embeddings.tobytes()
        for f in ("identity", "original_identity", "camera", "clothing"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_binary_resave_identical(self, tmp_path):
        s = generate_synthetic(SMALL)
        save_labeled_set(s, tmp_path / "a.bin")
        save_labeled_set(load_labeled_set(tmp_path / "a.bin"), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def _last_shaped_sets():
    def block(n_ids, n_imgs, base):
        ids = base + np.arange(n_imgs) % n_ids
        return LabeledSet.from_raw(np.ones((n_imgs, 1)), ids)
    return {
        "train": block(5000, 71248, 0),
        "validation.query": block(56, 100, 100000),
        "validation.gallery": block(56, 21279, 100000),
        "test.query": block(5805, 10176, 200000),
        "test.gallery": block(5806, 125353, 200000),
    }


LAST_TEXT = """\
train.identities = 5000
train.images = 71248
validation.query.identities = 56
validation.query.images = 100
validation.gallery.identities = 56
validation.gallery.images = 21279
test.query.identities = 5805
test.query.images = 10176
test.gallery.identities = 5806
test.gallery.images = 125353
"""


class TestManifest:
    def test_last_shaped_accepted(self):
        report = validate_manifest(SplitManifest.from_text(LAST_TEXT), _last_shaped_sets())
        assert all(ok for *_, ok in report)
        assert ("train.identities", 5000, 5000, True) in report

    def test_extra_row(self):
        sets = _last_shaped_sets()
        sets["validation.query"] = LabeledSet.from_raw(np.ones((101, 1)), 100000 + np.arange(101) % 56)
        with pytest.raises(ManifestMismatch) as exc:
            validate_manifest(SplitManifest.from_text(LAST_TEXT), sets)
        assert (exc.value.field, exc.value.declared, exc.value.actual) == ("validation.query.images", 100, 101)

    def test_overlap(self):
        sets = {"train": LabeledSet.from_raw(np.ones((4, 1)), [1, 1, 2, 2]),
                "test.gallery": LabeledSet.from_raw(np.ones((2, 1)), [2, 3])}
        with pytest.raises(ManifestMismatch) as exc:
            validate_manifest(SplitManifest.from_sets(sets), sets)
        assert exc.value.field == "disjoint.train/test.gallery"

    def test_text_roundtrip_and_load_split(self, tmp_path):
        parts = split_by_identity(generate_synthetic(SMALL))
        files = {}
        for name, s in parts.items():
            files[name] = f"{name}.bin"
            save_labeled_set(s, tmp_path / files[name])
        m = SplitManifest.from_sets(parts, files)
        (tmp_path / "manifest.txt").write_text(m.to_text())
        back, sets = load_split(tmp_path)
        assert back.counts == m.counts and back.files == m.files
        assert all(ok for *_, ok in validate_manifest(back, sets))
