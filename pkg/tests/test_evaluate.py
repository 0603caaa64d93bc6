import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from handocc.evaluate import (
    emit_plots,
    evaluate,
    export_report,
    load_report,
    make_predictor,
    odsc,
    profile,
)
from handocc.model import NetworkConfig, build_occlusion_net, build_seg_net
from handocc.synth import generate_dataset
from handocc.types import HAND, OBJECT


def brute_force_odsc(pred, gt, overlap):
    """Independent pixel-counting oracle."""
    inter = p_count = g_count = 0
    h, w = pred.shape
    for y in range(h):
        for x in range(w):
            if not overlap[y, x]:
                continue
            p = pred[y, x] == HAND
            g = gt[y, x] == HAND
            p_count += int(p)
            g_count += int(g)
            inter += int(p and g)
    if p_count + g_count == 0:
        return 1.0
    return 2.0 * inter / (p_count + g_count)


class TestOdsc:
    def test_identity_is_one(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 3, (16, 16)).astype(np.uint8)
        overlap = np.ones((16, 16), np.uint8)
        assert odsc(gt, gt, overlap) == 1.0

    def test_disjoint_is_zero(self):
        overlap = np.ones((8, 8), np.uint8)
        a = np.full((8, 8), HAND, np.uint8)
        a[:, 4:] = OBJECT
        b = np.full((8, 8), OBJECT, np.uint8)
        b[:, 4:] = HAND
        assert odsc(a, b, overlap) == 0.0

    def test_constructed_90_over_110(self):
        overlap = np.zeros((10, 10), np.uint8)
        overlap.flat[:100] = 1
        gt = np.zeros((10, 10), np.uint8)
        pred = np.zeros((10, 10), np.uint8)
        gt.flat[:60] = HAND            # |G| = 60
        pred.flat[15:65] = HAND        # |P| = 50, 45 shared
        assert odsc(pred, gt, overlap) == pytest.approx(90.0 / 110.0)
        assert brute_force_odsc(pred, gt, overlap) == pytest.approx(90.0 / 110.0)

    def test_matches_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            pred = rng.integers(0, 3, (32, 32)).astype(np.uint8)
            gt = rng.integers(0, 3, (32, 32)).astype(np.uint8)
            overlap = (rng.random((32, 32)) < 0.5).astype(np.uint8)
            assert odsc(pred, gt, overlap) == brute_force_odsc(pred, gt, overlap)

    def test_empty_overlap_convention(self):
        assert odsc(np.zeros((4, 4), np.uint8), np.zeros((4, 4), np.uint8),
                    np.ones((4, 4), np.uint8)) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            odsc(np.zeros((4, 4), np.uint8), np.zeros((4, 4), np.uint8),
                 np.zeros((4, 5), np.uint8))

    tri = arrays(np.uint8, (12, 12), elements=st.integers(0, 2))
    om = arrays(np.uint8, (12, 12), elements=st.integers(0, 1))

    @settings(max_examples=30, deadline=None)
    @given(tri, tri, om)
    def test_symmetric(self, a, b, overlap):
        assert odsc(a, b, overlap) == pytest.approx(odsc(b, a, overlap))

    @settings(max_examples=30, deadline=None)
    @given(tri, tri, om)
    def test_invariant_outside_overlap(self, a, b, overlap):
        noisy = a.copy()
        outside = ~overlap.astype(bool)
        noisy[outside] = (noisy[outside] + 1) % 3
        assert odsc(a, b, overlap) == pytest.approx(odsc(noisy, b, overlap))


@pytest.fixture(scope="module")
def samples():
    return generate_dataset(12, base_seed=4, size=64,
                            objects=["bar", "disk", "paddle"])


class TestEvaluate:

    def test_ground_truth_prediction_scores_one(self, samples):
        report = evaluate(lambda s: s.gt, samples)
        assert report.aggregate == 1.0
        assert all(row.odsc == 1.0 for row in report.rows)

    def test_rows_partition_dataset(self, samples):
        report = evaluate(lambda s: s.gt, samples)
        assert sum(row.sample_count for row in report.rows) == len(samples)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            evaluate(lambda s: s.gt, [])

    def test_untrained_network_scores_below_oracle(self, samples):
        cfg = NetworkConfig(encoder_channels=(8, 16, 24, 32, 40))
        predictor = make_predictor(build_occlusion_net(cfg, seed=0))
        report = evaluate(predictor, samples)
        assert 0.0 <= report.aggregate < 1.0

    def test_aggregate_is_sample_weighted_mean(self, samples):
        cfg = NetworkConfig(encoder_channels=(8, 16, 24, 32, 40))
        predictor = make_predictor(build_occlusion_net(cfg, seed=1))
        report = evaluate(predictor, samples)
        weighted = sum(r.odsc * r.sample_count for r in report.rows)
        assert report.aggregate == pytest.approx(weighted / len(samples))

    def test_seen_flag_propagates_to_rows(self):
        marked = generate_dataset(4, base_seed=7, size=64,
                                  objects=["bar", "knob"], unseen={"knob"})
        report = evaluate(lambda s: s.gt, marked)
        flags = {row.object_name: row.seen for row in report.rows}
        assert flags == {"bar": True, "knob": False}

    def test_report_roundtrip(self, tmp_path, samples):
        report = evaluate(lambda s: s.gt, samples, fingerprint="abc123")
        path = export_report(report, tmp_path / "report.json")
        assert load_report(path) == report

    def test_csv_export_row_count(self, tmp_path, samples):
        report = evaluate(lambda s: s.gt, samples)
        path = export_report(report, tmp_path / "report.csv")
        lines = path.read_text().strip().splitlines()
        assert len(lines) == len(report.rows) + 1

    def test_plots_exist_and_nonempty(self, tmp_path, samples):
        report = evaluate(lambda s: s.gt, samples)
        written = emit_plots(report, tmp_path / "plots")
        assert written
        for path in written:
            assert path.exists()
            assert path.stat().st_size > 0


class TestProfile:
    def test_stage_structure(self, sample64):
        cfg = NetworkConfig(encoder_channels=(8, 16, 24, 32, 40))
        occ = build_occlusion_net(cfg, seed=0)
        seg = build_seg_net(cfg, seed=1)
        occ.eval(), seg.eval()
        result = profile(occ, seg, sample64, repeats=10, warmup=2)
        stages = result.stages()
        assert set(stages) == {"input_prep", "seg_net", "occ_net", "composition"}
        assert result.total_ms == pytest.approx(sum(stages.values()))
        assert result.fps == pytest.approx(1000.0 / result.total_ms)

    def test_too_few_repeats_rejected(self, sample64):
        cfg = NetworkConfig(encoder_channels=(8, 16, 24, 32, 40))
        occ = build_occlusion_net(cfg, seed=0)
        seg = build_seg_net(cfg, seed=1)
        with pytest.raises(ValueError):
            profile(occ, seg, sample64, repeats=5)
