import json

import numpy as np
import pytest

from evkit.events import GrayFrame
from evkit.motion import (CANVAS_SIZE, CROP_SIZE, MotionParams,
                          apply_homography_points, center_crop,
                          params_homography, read_clip, read_pgm,
                          resize_bilinear, sample_motion, synthesize_clip,
                          to_grayscale, warp_homography, write_clip, write_pgm)


def smooth_image(size=128, seed=0):
    rng = np.random.default_rng(seed)
    low = rng.uniform(20, 235, (6, 6))
    return np.clip(resize_bilinear(low, size, size), 0, 255)


def checkerboard_canvas(cell=8):
    ys, xs = np.meshgrid(np.arange(CANVAS_SIZE), np.arange(CANVAS_SIZE),
                         indexing="ij")
    return (((ys // cell) + (xs // cell)) % 2 * 255.0)


class TestSampleMotion:
    def test_deterministic_per_seed(self):
        a = sample_motion(123, "start_to_end")
        b = sample_motion(123, "start_to_end")
        assert a == b

    def test_two_sets_are_independent_draws(self):
        a = sample_motion(5, "org_to_start")
        b = sample_motion(5, "start_to_end")
        assert a != b  # different categorical streams

    def test_start_to_end_always_translates(self):
        for seed in range(2000):
            p = sample_motion(seed, "start_to_end")
            assert p.translation_dir != "none"
            assert p.translation_mag > 0

    def test_org_to_start_mode_frequencies(self):
        n = 20_000
        none_frac = sum(
            sample_motion(s, "org_to_start").translation_dir == "none"
            for s in range(n)) / n
        zoom_in_frac = sum(
            sample_motion(s, "org_to_start").scale_kind == "zoom_in"
            for s in range(n)) / n
        assert abs(none_frac - 0.2149) < 0.01
        assert abs(zoom_in_frac - 0.2254) < 0.01

    def test_unknown_set_rejected(self):
        with pytest.raises(ValueError):
            sample_motion(0, "end_to_start")


class TestWarping:
    def test_identity_params_reproduce_center_crop(self):
        img = smooth_image()
        clip = synthesize_clip(img, seed=0, n_frames=3,
                               org_params=MotionParams.identity(),
                               s2e_params=MotionParams.identity())
        canvas = np.clip(resize_bilinear(img, CANVAS_SIZE, CANVAS_SIZE), 0, 255)
        expected = center_crop(canvas, CROP_SIZE)
        for frame in clip.frames:
            assert np.array_equal(frame.data, expected)

    def test_pure_right_translation_matches_shift_oracle(self):
        canvas = checkerboard_canvas()
        # 280x280 input resizes to itself exactly, so sampling stays integral.
        clip = synthesize_clip(
            canvas, seed=0, n_frames=12,
            org_params=MotionParams.identity(),
            s2e_params=MotionParams(translation_dir="right",
                                    translation_mag=22.0))
        off = (CANVAS_SIZE - CROP_SIZE) // 2
        for i, frame in enumerate(clip.frames):
            shift = round(22 * i / 11)
            expected = canvas[off:off + CROP_SIZE,
                              off - shift:off - shift + CROP_SIZE]
            assert np.array_equal(frame.data, expected), f"frame {i}"

    def test_default_clip_shape(self):
        clip = synthesize_clip(smooth_image(), seed=7)
        assert clip.n_frames == 12
        assert clip.fps == 30.0
        assert clip.width == clip.height == CROP_SIZE

    def test_minimum_image_size_enforced(self):
        with pytest.raises(ValueError):
            synthesize_clip(np.zeros((32, 32)), seed=0)

    def test_grayscale_conversion_bt601(self):
        rgb = np.zeros((70, 70, 3))
        rgb[..., 0] = 100.0
        rgb[..., 1] = 50.0
        rgb[..., 2] = 200.0
        gray = to_grayscale(rgb)
        assert np.allclose(gray, 0.299 * 100 + 0.587 * 50 + 0.114 * 200)

    def test_gray_frame_input_accepted(self):
        frame = GrayFrame.from_array(smooth_image())
        clip = synthesize_clip(frame, seed=3, n_frames=2)
        assert clip.n_frames == 2


class TestContainment:
    @pytest.mark.parametrize("seed", range(24))
    def test_sampling_footprint_stays_inside_canvas(self, seed):
        clip = synthesize_clip(smooth_image(seed=seed), seed=seed, n_frames=12)
        corners = np.array([[28.0, 28.0], [251.0, 28.0],
                            [251.0, 251.0], [28.0, 251.0]])
        for rec in clip.positions:
            h = np.asarray(rec["homography"])
            src = apply_homography_points(np.linalg.inv(h), corners)
            assert src.min() >= 0.0
            assert src.max() <= CANVAS_SIZE - 1.0

    def test_oversized_motion_is_clamped_not_fatal(self):
        big = MotionParams(translation_dir="right", translation_mag=500.0)
        clip = synthesize_clip(smooth_image(), seed=0, n_frames=4,
                               org_params=big, s2e_params=big)
        assert clip.n_frames == 4


class TestComposition:
    def test_recorded_transform_reproduces_frames(self):
        img = smooth_image(seed=4)
        clip = synthesize_clip(img, seed=11, n_frames=12)
        h0 = np.asarray(clip.positions[0]["homography"])
        canvas = np.clip(resize_bilinear(img, CANVAS_SIZE, CANVAS_SIZE), 0, 255)
        start_canvas = warp_homography(canvas, h0)
        off = (CANVAS_SIZE - CROP_SIZE) // 2
        for i in (3, 7, 11):
            hi = np.asarray(clip.positions[i]["homography"])
            rel = hi @ np.linalg.inv(h0)
            redone = warp_homography(start_canvas, rel)
            crop = redone[off:off + CROP_SIZE, off:off + CROP_SIZE]
            mae = np.abs(crop - clip.frames[i].data).mean()
            assert mae < 2.0, f"frame {i}: MAE {mae}"

    def test_clip_determinism(self):
        a = synthesize_clip(smooth_image(), seed=99, n_frames=6)
        b = synthesize_clip(smooth_image(), seed=99, n_frames=6)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.data, fb.data)
        assert json.dumps(a.positions) == json.dumps(b.positions)


class TestClipPersistence:
    def test_pgm_round_trip(self, tmp_path):
        frame = GrayFrame.from_array(np.rint(smooth_image(64)))
        path = tmp_path / "frame.pgm"
        write_pgm(path, frame)
        back = read_pgm(path)
        assert np.array_equal(back.data, frame.data)

    def test_clip_write_read(self, tmp_path):
        clip = synthesize_clip(smooth_image(), seed=1, n_frames=4)
        write_clip(clip, tmp_path / "clip")
        back = read_clip(tmp_path / "clip")
        assert back.n_frames == 4
        assert back.fps == clip.fps
        for fa, fb in zip(back.frames, clip.frames):
            assert np.abs(fa.data - fb.data).max() <= 0.5  # u8 quantization
        assert (tmp_path / "clip" / "positions.json").exists()
        assert (tmp_path / "clip" / "clip.json").exists()

    def test_truncated_pgm_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        write_pgm(path, GrayFrame.from_array(np.zeros((8, 8))))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError):
            read_pgm(path)


class TestParamsHomography:
    def test_identity_params_give_identity_matrix(self):
        h = params_homography(MotionParams.identity())
        assert np.allclose(h, np.eye(3))

    def test_perspective_moves_corners_as_requested(self):
        offsets = np.array([[3.0, -2.0], [0.0, 4.0], [-1.0, 1.0], [2.0, 2.0]])
        params = MotionParams(perspective=True, corner_offsets=offsets)
        h = params_homography(params, canvas_size=280)
        c = (280 - 1) / 2.0
        half = 140.0
        corners = np.array([[c - half, c - half], [c + half, c - half],
                            [c + half, c + half], [c - half, c + half]])
        mapped = apply_homography_points(h, corners)
        assert np.allclose(mapped, corners + offsets, atol=1e-8)

    def test_scaled_toward_identity(self):
        params = MotionParams("right", 20.0, "zoom_in", 1.2, "cw", 8.0, True,
                              np.full((4, 2), 5.0))
        tiny = params.scaled(0.0)
        assert tiny.translation_mag == 0.0
        assert tiny.scale_factor == 1.0
        assert tiny.rotation_deg == 0.0
        assert not tiny.corner_offsets.any()
        assert np.allclose(params_homography(tiny), np.eye(3))
