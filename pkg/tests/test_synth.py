import numpy as np
import pytest

from sca_stereo import autodiff as ad
from sca_stereo import fileio, geometry, synth
from sca_stereo.errors import FormatError

from oracles import lr_occlusion_oracle, visibility_oracle


class TestSceneSpec:
    def test_invalid_disparity_range(self):
        with pytest.raises(ValueError):
            synth.SceneSpec(seed=0, disparity_range=(0.0, 10.0))
        with pytest.raises(ValueError):
            synth.SceneSpec(seed=0, disparity_range=(5.0, 20.0))  # exceeds d_max_full

    def test_invalid_domain(self):
        with pytest.raises(ValueError):
            synth.SceneSpec(seed=0, domain_style="real")


class TestGenerateScene:
    def test_deterministic(self):
        a = synth.generate_scene(synth.SceneSpec(seed=7))
        b = synth.generate_scene(synth.SceneSpec(seed=7))
        for v in ("left", "right"):
            assert np.array_equal(a.images[v].data, b.images[v].data)
            assert np.array_equal(a.disparities[v].values.data, b.disparities[v].values.data)

    def test_single_layer_constant_disparity(self):
        spec = synth.SceneSpec(seed=3, num_layers=1, image_size=(16, 48))
        s = synth.generate_scene(spec)
        d = s.disparities["left"].values.data
        assert len(np.unique(d)) == 1
        assert np.array_equal(d, s.disparities["right"].values.data)
        disp = float(d[0, 0])
        offset = geometry.signed_offset(s.disparities["left"].values, "left")
        warped = geometry.backward_warp(s.images["right"], offset).data
        cols = np.arange(48) - disp >= 0
        assert np.max(np.abs(warped - s.images["left"].data)[:, :, cols]) <= 1e-6

    def test_warp_reconstruction_invariant_100_seeds(self):
        worst = 0.0
        for seed in range(100):
            style = "target" if seed % 2 else "source"
            s = synth.generate_scene(synth.SceneSpec(seed=seed, domain_style=style))
            mask = geometry.occlusion_mask(s.disparities["left"], s.disparities["right"]).mask.data
            offset = geometry.signed_offset(s.disparities["left"].values, "left")
            warped = geometry.backward_warp(s.images["right"], offset).data
            err = np.abs(warped - s.images["left"].data).max(axis=0)
            worst = max(worst, float((err * mask).max()))
        assert worst <= 1e-6

    def test_occlusion_mask_matches_visibility_oracle(self):
        for seed in range(30):
            s = synth.generate_scene(synth.SceneSpec(seed=seed, integer_disparities=True))
            for base in ("left", "right"):
                match = geometry.other_view(base)
                mask = geometry.occlusion_mask(s.disparities[base], s.disparities[match]).mask.data
                oracle = visibility_oracle(
                    s.disparities[base].values.data, s.disparities[match].values.data, base
                )
                assert np.array_equal(mask, oracle)

    def test_two_layer_occlusion_band(self):
        # hand-built: background d=2, full-height foreground strip d=10
        h, w = 8, 64
        dl = np.full((h, w), 2.0)
        dl[:, 40:56] = 10.0
        dr = np.full((h, w), 2.0)
        dr[:, 30:46] = 10.0  # shifted left by 10
        mask = geometry.occlusion_mask(
            geometry.DisparityMap(ad.constant(dl), "left"),
            geometry.DisparityMap(ad.constant(dr), "right"),
        ).mask.data
        oracle = lr_occlusion_oracle(dl, dr, "left")
        assert np.array_equal(mask, oracle)
        # the 8 background pixels left of the strip map into the foreground: occluded
        assert np.all(mask[:, 32:40] == 0.0)
        assert np.all(mask[:, 40:56] == 1.0)
        assert np.all(mask[:, 2:32] == 1.0)

    def test_source_target_share_disparities_differ_photometrically(self):
        for seed in (1, 5, 9):
            src = synth.generate_scene(synth.SceneSpec(seed=seed, domain_style="source"))
            tgt = synth.generate_scene(synth.SceneSpec(seed=seed, domain_style="target"))
            for v in ("left", "right"):
                assert np.array_equal(
                    src.disparities[v].values.data, tgt.disparities[v].values.data
                )
                assert not np.array_equal(src.images[v].data, tgt.images[v].data)

    def test_target_photometry_shifts_statistics(self):
        src = synth.generate_scene(synth.SceneSpec(seed=11, domain_style="source"))
        tgt = synth.generate_scene(synth.SceneSpec(seed=11, domain_style="target"))
        # gamma 1.4 darkens midtones; the blue channel gain partly compensates
        assert tgt.images["left"].data[0].mean() < src.images["left"].data[0].mean()

    def test_images_in_unit_range(self):
        for seed in (0, 1):
            s = synth.generate_scene(synth.SceneSpec(seed=seed, domain_style="target"))
            for v in ("left", "right"):
                assert s.images[v].data.min() >= 0.0
                assert s.images[v].data.max() <= 1.0


class TestPfm:
    def test_round_trip_exact_at_float32(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((13, 9)).astype(np.float32).astype(np.float64)
        path = tmp_path / "map.pfm"
        fileio.write_pfm(ad.constant(values), path)
        back = fileio.read_pfm(path)
        assert np.array_equal(back.data, values)

    def test_header_format(self, tmp_path):
        path = tmp_path / "map.pfm"
        fileio.write_pfm(np.zeros((2, 4)), path)  # H=2, W=4
        blob = path.read_bytes()
        assert blob.startswith(b"Pf\n4 2\n-1.0\n")

    def test_big_endian_fixture(self, tmp_path):
        values = np.array([[1.5, -2.25], [3.0, 0.125]], dtype=">f4")
        path = tmp_path / "big.pfm"
        with open(path, "wb") as f:
            f.write(b"Pf\n2 2\n1.0\n")
            f.write(values[::-1].tobytes())
        back = fileio.read_pfm(path)
        assert np.array_equal(back.data, values.astype(np.float64))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
        with pytest.raises(FormatError):
            fileio.read_pfm(path)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "short.pfm"
        path.write_bytes(b"Pf\n4 2\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(FormatError) as exc_info:
            fileio.read_pfm(path)
        assert exc_info.value.offset == len(b"Pf\n4 2\n-1.0\n") + 10

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            fileio.write_pfm(np.array([[np.inf]]), tmp_path / "x.pfm")


class TestPpm:
    def test_round_trip_error_bound(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (3, 6, 5))
        path = tmp_path / "img.ppm"
        fileio.write_ppm(ad.constant(img), path)
        back = fileio.read_ppm(path)
        assert np.max(np.abs(back.data - img)) <= 1.0 / 510.0 + 1e-12

    def test_black_white_preserved(self, tmp_path):
        img = np.zeros((3, 2, 2))
        img[:, 0, :] = 1.0
        path = tmp_path / "bw.ppm"
        fileio.write_ppm(img, path)
        back = fileio.read_ppm(path)
        assert np.array_equal(back.data, img)

    def test_fixture_bytes(self, tmp_path):
        # 1x2: top row mid-gray 0.5 -> 128 (round half up), bottom 0.2 -> 51
        img = np.zeros((3, 2, 1))
        img[:, 0, 0] = 0.5
        img[:, 1, 0] = 0.2
        path = tmp_path / "fix.ppm"
        fileio.write_ppm(img, path)
        assert path.read_bytes() == b"P6\n1 2\n255\n" + bytes([128] * 3 + [51] * 3)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(FormatError):
            fileio.read_ppm(path)

    def test_written_sample_parses(self, tmp_path):
        s = synth.generate_scene(synth.SceneSpec(seed=2, image_size=(16, 32)))
        paths = synth.write_sample(s, tmp_path, "sample")
        rig = synth.default_rig(16, 32)
        back = synth.read_sample(tmp_path, {k: v for k, v in paths.items()}, rig)
        assert np.max(np.abs(back.images["left"].data - s.images["left"].data)) <= 1 / 510 + 1e-12
        assert np.array_equal(
            back.disparities["left"].values.data,
            s.disparities["left"].values.data.astype(np.float32).astype(np.float64),
        )


class TestManifest:
    def test_round_trip(self, tmp_path):
        rows = [
            {
                "sample_id": "0",
                "seed": "123",
                "domain": "source",
                "split": "source_train",
                "left_image": "a.ppm",
                "right_image": "b.ppm",
                "left_disp": "a.pfm",
                "right_disp": "b.pfm",
            }
        ]
        path = tmp_path / "manifest.csv"
        synth.write_manifest(rows, path)
        assert synth.read_manifest(path) == rows
