import numpy as np
import pytest

import vdistill


def test_budget():
    b = vdistill.budget(128, 729, 32)
    assert b["original_tokens"] == 93312
    assert b["compressed_tokens"] == 23424
    assert round(b["reduction_ratio"] * 100, 2) == 74.90


def test_select_keyframes_hand_trace():
    frames = np.array([[1, 0], [0.995, 0.0999], [0.6, 0.8]], dtype=np.float32)
    keyframes, order = vdistill.select_keyframes(frames, np.array([1, 0], dtype=np.float32), tau=0.9, k=4)
    assert keyframes == [0, 2]
    assert order == [0, 2]


def test_merge_frame_weights():
    patches = np.array([[1, 0], [0, 1]], dtype=np.float32)
    token, weights = vdistill.merge_frame(patches, None, np.array([0.8, 0.6], dtype=np.float32), alpha=1e6)
    assert weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(token, [0.5, 0.5], atol=1e-6)


def test_distill_and_stream_agree():
    frames, patches, qf, qp = vdistill.gen(40, m=4, d_f=8, d_p=6, clusters=3, blend=0.9, seed=5)
    assert frames.shape == (40, 8)
    assert patches.shape == (40, 4, 6)
    a = vdistill.distill(frames, patches, qf, qp, k=8)
    b = vdistill.distill(frames, patches, qf, qp, k=8, stream=True)
    assert a["keyframe_indices"] == b["keyframe_indices"]
    np.testing.assert_array_equal(a["merged_tokens"], b["merged_tokens"])
    k = len(a["keyframe_indices"])
    assert a["token_count"] == 4 * k + (40 - k)
    assert a["merged_tokens"].shape == (40 - k, 6)


def test_cumulative_curve():
    curve = vdistill.cumulative_curve(np.ones(50))
    assert curve.shape == (101,)
    np.testing.assert_allclose(curve, np.linspace(0, 1, 101), atol=1e-12)
    with pytest.raises(vdistill.Error):
        vdistill.cumulative_curve(np.zeros(3))


def test_build_manifest_deterministic():
    catalog = [{"video_id": "h", "length": 3000}, {"video_id": "n", "length": 90, "query_id": "q", "answer_key": "B"}]
    a = vdistill.build_manifest(catalog, lengths=[2000], cases_per_length=25, seed=3)
    assert len(a["cases"]) == 25
    assert a == vdistill.build_manifest(catalog, lengths=[2000], cases_per_length=25, seed=3)
    for c in a["cases"]:
        assert 0 <= c["insert_index"] <= c["haystack_len"] - c["needle_len"]


def test_dimension_errors_raise():
    with pytest.raises(vdistill.Error):
        vdistill.select_keyframes(np.ones((3, 2), dtype=np.float32) / np.sqrt(2), np.ones(3, dtype=np.float32))
