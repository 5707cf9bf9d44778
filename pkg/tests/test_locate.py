import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padaction.locate import (
    LocateConfig, OverlayPlacement, bbox_iou, crop_overlay, detect_and_describe, estimate_affine,
    locate_overlay, match_descriptors, sample_indices, template_features, to_gray,
)
from padaction.synth import SpecRanges, default_templates, get_template, synth_video
from padaction.synth.render import scale_translate

MILD = SpecRanges((0.8, 1.0), (0.8, 1.2), (90, 100))


def _apply(m, pts):
    return pts @ np.asarray(m)[:, :2].T + np.asarray(m)[:, 2]


def test_uniform_image_has_no_keypoints():
    assert detect_and_describe(np.full((64, 64, 3), 128, np.uint8)) == []


def test_too_small_image_gives_empty_list():
    assert detect_and_describe(np.random.default_rng(0).integers(0, 255, (20, 20), dtype=np.uint8)) == []


def test_keypoints_ordered_and_deterministic():
    img = get_template("generic").base_image
    a = detect_and_describe(img)
    b = detect_and_describe(img)
    assert [k.position for k in a] == [k.position for k in b]
    resp = [k.response for k in a]
    assert resp == sorted(resp, reverse=True)
    assert len({k.descriptor.shape for k in a}) == 1
    assert len(detect_and_describe(img, max_keypoints=10)) <= 10


def test_self_match_majority():
    kps = detect_and_describe(get_template("xbox-like").base_image)
    pairs = match_descriptors(kps, kps, 0.75)
    assert len(pairs) >= 0.5 * len(kps)


def test_match_empty_b():
    assert match_descriptors(np.ones((3, 8)), np.zeros((0, 8))) == []


def test_distinct_descriptors_match_themselves():
    d = np.eye(10) * 5.0
    assert match_descriptors(d, d, 0.75) == [(i, i) for i in range(10)]


def test_tied_candidates_fail_ratio_test():
    b = np.array([[1.0, 0.0], [1.0, 0.0], [-5.0, 9.0]])
    assert match_descriptors(np.array([[1.0, 0.0]]), b, 0.75) == []


def test_ratio_must_lie_in_unit_interval():
    with pytest.raises(ValueError):
        match_descriptors(np.eye(2), np.eye(2), 1.0)


M = np.array([[0.5, 0.0, 10.0], [0.0, 0.5, 20.0]])


def test_exact_correspondences_recovered(rng):
    src = rng.uniform(0, 256, (50, 2))
    fit = estimate_affine(src, _apply(M, src), seed=0)
    assert fit is not None and fit.inlier_count == 50
    assert np.abs(fit.matrix - M).max() <= 1e-6


def test_outliers_rejected(rng):
    src = rng.uniform(0, 256, (50, 2))
    out_src = rng.uniform(0, 256, (30, 2))
    out_dst = rng.uniform(0, 256, (30, 2))
    fit = estimate_affine(np.vstack([src, out_src]), np.vstack([_apply(M, src), out_dst]), seed=0)
    assert fit is not None and fit.inlier_count >= 50
    assert np.abs(fit.matrix - M).max() <= 1e-3


def test_nineteen_correspondences_give_no_model(rng):
    src = rng.uniform(0, 256, (19, 2))
    assert estimate_affine(src, _apply(M, src)) is None
    assert estimate_affine(src[:2], _apply(M, src[:2])) is None


@st.composite
def affines(draw):
    s = draw(st.floats(0.3, 2.0))
    theta = draw(st.floats(-np.pi, np.pi))
    aniso = draw(st.floats(0.8, 1.25))
    shear = draw(st.floats(-0.2, 0.2))
    t = draw(st.tuples(st.floats(-200, 200), st.floats(-200, 200)))
    r = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    lin = s * r @ np.array([[aniso, shear], [0.0, 1.0 / aniso]])
    return np.column_stack([lin, t])


@settings(max_examples=50, deadline=None)
@given(affines(), st.integers(0, 2**31 - 1))
def test_affine_recovery_property(m, seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 256, (40, 2))
    fit = estimate_affine(src, _apply(m, src), seed=seed)
    assert fit is not None and np.abs(fit.matrix - m).max() <= 1e-6


@settings(max_examples=30, deadline=None)
@given(affines(), st.integers(0, 2**31 - 1))
def test_affine_recovery_with_40pct_outliers(m, seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 256, (60, 2))
    dst = _apply(m, src)
    bad = rng.choice(60, 24, replace=False)
    dst[bad] = rng.uniform(-300, 600, (24, 2))
    fit = estimate_affine(src, dst, seed=seed)
    assert fit is not None and np.abs(fit.matrix - m).max() <= 1e-3


def test_half_scale_template_gives_correct_correspondences():
    tpl = get_template("playstation-like")
    v = synth_video(tpl, 1, ranges=SpecRanges((0.8, 1.0), (0.5, 0.5), (90, 100)), seed=4, frame_size=(320, 180))
    frame = v.frames[0]
    tf = template_features(tpl)
    kps = detect_and_describe(frame)
    pairs = np.asarray(match_descriptors(tf.descriptors, np.stack([k.descriptor for k in kps])))
    pts = np.array([k.position for k in kps])
    truth = _apply(v.truth_placement.matrix, tf.points[pairs[:, 0]])
    correct = np.linalg.norm(truth - pts[pairs[:, 1]], axis=1) < 3.0
    assert correct.sum() >= 20


def test_sample_indices():
    assert sample_indices(10) == list(range(10))
    idx = sample_indices(300)
    assert len(idx) == 25 and idx[0] == 0 and idx[-1] == 299


class _CountingFrames:
    def __init__(self, frames):
        self.frames = frames
        self.seen = set()

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        self.seen.add(i)
        return self.frames[i]


@pytest.fixture(scope="module")
def mild_video():
    return synth_video(get_template("generic"), 10, ranges=MILD, seed=21, frame_size=(480, 270))


def test_locate_mild_video(mild_video):
    frames = _CountingFrames(list(mild_video.frames))
    p = locate_overlay(frames, default_templates(), seed=0)
    assert frames.seen == set(range(10))
    assert p is not None and p.template_name == "generic" and p.inlier_count >= 20
    assert bbox_iou(p.crop_bbox, mild_video.bbox) >= 0.9


def test_locate_deterministic_and_jobs_invariant(mild_video):
    frames = list(mild_video.frames)[:4]
    a = locate_overlay(frames, default_templates(), seed=3)
    b = locate_overlay(frames, default_templates(), seed=3, jobs=2)
    assert a == b


def test_noise_video_not_found():
    rng = np.random.default_rng(0)
    frames = [rng.integers(0, 256, (180, 320, 3), dtype=np.uint8) for _ in range(3)]
    assert locate_overlay(frames, default_templates()) is None


def _identity_placement(size=(256, 128)):
    return OverlayPlacement("xbox-like", ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)), 50, 50.0, (0, 0, *size),
                            template_size=size)


def test_identity_crop_is_the_frame():
    frame = np.random.default_rng(1).integers(0, 256, (128, 256, 3), dtype=np.uint8)
    assert np.array_equal(crop_overlay(frame, _identity_placement()), frame)


def test_crop_resamples_to_canonical_size():
    frame = np.random.default_rng(1).integers(0, 256, (128, 256, 3), dtype=np.uint8)
    crop = crop_overlay(frame, _identity_placement(), canonical_size=(128, 64))
    assert crop.shape == (64, 128, 3)


def test_crop_correlates_with_template(mild_video):
    p = locate_overlay(list(mild_video.frames)[:3], default_templates())
    crop = to_gray(crop_overlay(mild_video.frames[0], p)).astype(np.float64)
    tpl = to_gray(get_template(p.template_name).base_image).astype(np.float64)
    a, b = crop - crop.mean(), tpl - tpl.mean()
    assert (a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()) >= 0.8


def test_out_of_frame_crop_is_black():
    frame = np.full((128, 256, 3), 200, np.uint8)
    p = OverlayPlacement("x", scale_translate(1.0, 128.0, 0.0), 50, 50.0, (128, 0, 256, 128))
    crop = crop_overlay(frame, p)
    assert np.all(crop[:, 130:] == 0)
    assert np.all(crop[:, :126] == 200)


def test_placement_json_round_trip(tmp_path):
    p = _identity_placement()
    p.save(tmp_path / "placement.json")
    assert OverlayPlacement.load(tmp_path / "placement.json") == p


def test_bbox_iou():
    assert bbox_iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert bbox_iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3)
    assert bbox_iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0


def test_locate_config_defaults():
    c = LocateConfig()
    assert (c.ratio, c.iterations, c.inlier_px, c.min_inliers, c.n_sampled, c.max_keypoints) == (0.75, 2000, 3.0, 20, 25, 2000)
