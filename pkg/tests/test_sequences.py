"""Gather/scatter and feature-map format tests."""

import numpy as np
import pytest

from epiline import (
    DimensionMismatchError,
    FeatureMap,
    LineSequence,
    SearchConfig,
    ShapeMismatchError,
    gather,
    read_feature_map,
    scatter,
    search_pairs,
    write_feature_map,
)
from epiline import synthetic
from epiline.pair_search import EpipolarPair, EpipolarPairSet, QuantizedLineKey
from epiline.geometry import EpipolarLine, Orientation


def rectified_set(h=8, w=8, s_b=1.0):
    pair = synthetic.rectified_pair(h, w)
    return search_pairs(pair, SearchConfig(s_k=0.1, s_b=s_b, delta=1.0))


def coordinate_map(h, w):
    """One-channel map whose value at (x, y) is x."""
    data = np.tile(np.arange(w, dtype=float)[None, :, None], (h, 1, 1))
    return FeatureMap(data)


class TestFeatureMap:
    def test_rejects_non_finite(self):
        data = np.zeros((2, 2, 1))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureMap(data)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            FeatureMap(np.zeros((4, 4)))

    def test_integer_input_upcast_to_float(self):
        fmap = FeatureMap(np.ones((2, 3, 4), dtype=np.int32))
        assert np.issubdtype(fmap.data.dtype, np.floating)

    def test_data_is_read_only(self):
        fmap = FeatureMap(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            fmap.data[0, 0, 0] = 1.0

    def test_construction_does_not_freeze_callers_array(self):
        source = np.zeros((2, 2, 1))
        FeatureMap(source)
        source[0, 0, 0] = 1.0  # caller's array stays writable


class TestGather:
    def test_row_sequences_follow_x_order(self):
        pairs = rectified_set()
        fmap = coordinate_map(8, 8)
        for seq in gather(fmap, pairs, "ref"):
            np.testing.assert_array_equal(seq.tokens[:, 0], np.arange(8.0))

    def test_empty_source_yields_empty_sequence(self):
        key = QuantizedLineKey(Orientation.STANDARD, 0, 2)
        entry = EpipolarPair(
            key=key,
            line=EpipolarLine(Orientation.STANDARD, 0.0, 2.0),
            ref_pixels=np.array([[0, 2], [1, 2]]),
            src_pixels=np.zeros((0, 2), dtype=np.int64),
        )
        holes = np.ones((4, 4), dtype=bool)
        ref_holes = holes.copy()
        ref_holes[2, 0] = ref_holes[2, 1] = False
        pair_set = EpipolarPairSet(
            pairs=(entry,), ref_hole_mask=ref_holes, src_hole_mask=holes, image_size=(4, 4)
        )
        fmap = FeatureMap(np.zeros((4, 4, 3)))
        seqs = gather(fmap, pair_set, "src")
        assert seqs[0].n == 0
        assert seqs[0].tokens.shape == (0, 3)

    def test_dimension_mismatch(self):
        pairs = rectified_set(8, 8)
        with pytest.raises(DimensionMismatchError):
            gather(FeatureMap(np.zeros((4, 4, 1))), pairs, "ref")

    def test_bad_side_rejected(self):
        pairs = rectified_set()
        with pytest.raises(ValueError):
            gather(coordinate_map(8, 8), pairs, "both")


class TestScatter:
    def test_round_trip_is_identity_on_clustered_pixels(self):
        rng = np.random.default_rng(0)
        pairs = rectified_set()
        fmap = FeatureMap(rng.standard_normal((8, 8, 5)))
        back = scatter(gather(fmap, pairs, "src"), pairs, fmap)
        np.testing.assert_array_equal(back.data, fmap.data)

    def test_holes_keep_template_values(self):
        pair = synthetic.rectified_pair(8, 8)
        pairs = search_pairs(pair, SearchConfig(s_k=0.1, s_b=1.0, delta=0.6, min_cluster_size=9))
        # min_cluster_size=9 dissolves every 8-pixel row, so everything is a hole.
        assert pairs.cluster_count == 0
        template = FeatureMap(np.ones((8, 8, 2)))
        out = scatter([], pairs, template)
        np.testing.assert_array_equal(out.data, template.data)

    def test_zero_sequences_ones_template(self):
        pairs = rectified_set()
        template = FeatureMap(np.ones((8, 8, 2)))
        zero_seqs = [
            LineSequence(seq.pair_index, np.zeros_like(seq.tokens), seq.pixel_order)
            for seq in gather(template, pairs, "src")
        ]
        out = scatter(zero_seqs, pairs, template)
        clustered = ~pairs.src_hole_mask
        assert (out.data[clustered] == 0.0).all()
        assert (out.data[pairs.src_hole_mask] == 1.0).all()

    def test_every_value_has_exactly_one_provenance(self):
        rng = np.random.default_rng(1)
        pair = synthetic.random_pair(rng, 16, 20)
        pairs = search_pairs(pair, SearchConfig(s_k=0.1, s_b=2.0, delta=1.0))
        template = FeatureMap(rng.standard_normal((16, 20, 3)))
        sequences = gather(template, pairs, "src")
        random_seqs = [
            LineSequence(seq.pair_index, rng.standard_normal(seq.tokens.shape), seq.pixel_order)
            for seq in sequences
        ]
        out = scatter(random_seqs, pairs, template)

        provenance = np.full((16, 20), -1, dtype=int)  # -1 = template
        for i, seq in enumerate(random_seqs):
            for x, y in seq.pixel_order:
                assert provenance[y, x] == -1  # no aliasing between sequences
                provenance[y, x] = i
        for y in range(16):
            for x in range(20):
                if provenance[y, x] == -1:
                    np.testing.assert_array_equal(out.data[y, x], template.data[y, x])
                else:
                    seq = random_seqs[provenance[y, x]]
                    row = np.nonzero((seq.pixel_order == [x, y]).all(axis=1))[0][0]
                    np.testing.assert_array_equal(out.data[y, x], seq.tokens[row])

    def test_sequence_count_mismatch(self):
        pairs = rectified_set()
        fmap = coordinate_map(8, 8)
        with pytest.raises(ShapeMismatchError):
            scatter(gather(fmap, pairs, "src")[:-1], pairs, fmap)

    def test_channel_mismatch(self):
        pairs = rectified_set()
        seqs = gather(coordinate_map(8, 8), pairs, "src")
        with pytest.raises(ShapeMismatchError):
            scatter(seqs, pairs, FeatureMap(np.zeros((8, 8, 2))))


class TestOrderStability:
    def test_pixel_order_is_arc_sorted_and_reproducible(self):
        rng = np.random.default_rng(2)
        pair = synthetic.random_pair(rng, 16, 20)
        pairs = search_pairs(pair, SearchConfig(s_k=0.1, s_b=2.0, delta=1.0))
        fmap = FeatureMap(rng.standard_normal((16, 20, 2)))
        first = gather(fmap, pairs, "ref")
        second = gather(fmap, pairs, "ref")
        for a, b, entry in zip(first, second, pairs.pairs):
            np.testing.assert_array_equal(a.pixel_order, b.pixel_order)
            t = entry.line.arc_parameter(
                a.pixel_order[:, 0].astype(float), a.pixel_order[:, 1].astype(float)
            )
            assert (np.diff(t) >= -1e-12).all()


class TestFeatureMapFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        fmap = FeatureMap(rng.standard_normal((5, 7, 3)).astype(np.float32))
        path = tmp_path / "map.epfm"
        write_feature_map(path, fmap)
        back = read_feature_map(path)
        assert (back.height, back.width, back.channels) == (5, 7, 3)
        np.testing.assert_array_equal(back.data, fmap.data)

    def test_float64_write_is_f32_on_disk(self, tmp_path):
        fmap = FeatureMap(np.full((2, 2, 1), 1.0 / 3.0))
        path = tmp_path / "map.epfm"
        write_feature_map(path, fmap)
        back = read_feature_map(path)
        np.testing.assert_array_equal(back.data, fmap.data.astype(np.float32))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.epfm"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(ValueError):
            read_feature_map(path)

    def test_truncated_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(4)
        fmap = FeatureMap(rng.standard_normal((4, 4, 2)).astype(np.float32))
        path = tmp_path / "map.epfm"
        write_feature_map(path, fmap)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ValueError):
            read_feature_map(path)
