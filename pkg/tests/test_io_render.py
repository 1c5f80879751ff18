import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from relevance_lens.attribution import Heatmap, gradient_saliency, normalize_heatmap
from relevance_lens.errors import FormatError, InputError
from relevance_lens.io import (
    ManifestRow,
    heatmap_to_pgm_bytes,
    load_image,
    load_mask,
    manifest_from_breakhis_dir,
    parse_breakhis_name,
    raw_to_rgb,
    read_heatmap,
    read_manifest,
    save_mask,
    save_png,
    sidecar_path,
    to_raw,
    to_tensor,
    write_heatmap,
    write_manifest,
)
from relevance_lens.nn import Dense, Flatten, Model
from relevance_lens.render import DIVERGING, overlay, quantize, render_heatmap, render_occlusion_series
from relevance_lens.selection import SelectionConfig, select
from relevance_lens.synthetic import patch_weight_map, planted_image, planted_model

from .conftest import dense_model


def _rgb_model(h=2, w=2):
    return dense_model(np.ones((2, 3 * h * w)), input_shape=(3, h, w))


class TestImages:
    @pytest.mark.parametrize("value,expect", [(255, 1.0), (0, 0.0), (128, 128 / 255)])
    def test_to_tensor_scaling(self, tmp_path, value, expect):
        p = tmp_path / "x.png"
        save_png(np.full((2, 2, 3), value, dtype=np.uint8), p)
        x = to_tensor(load_image(p), _rgb_model())
        assert x.shape == (3, 2, 2)
        np.testing.assert_array_equal(x, np.full((3, 2, 2), expect))

    def test_preprocessing_applied(self):
        model = Model(
            [Flatten(), Dense(np.ones((1, 3)), np.zeros(1))], (3, 1, 1), [0.5, 0.0, 1.0], [0.5, 2.0, 1.0], ["a"]
        )
        x = to_tensor(np.full((1, 1, 3), 255, dtype=np.uint8), model)
        np.testing.assert_allclose(x.ravel(), [1.0, 0.5, 0.0])

    def test_size_mismatch_needs_resize(self):
        rgb = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(InputError, match="resize"):
            to_tensor(rgb, _rgb_model())
        assert to_tensor(rgb, _rgb_model(), resize=True).shape == (3, 2, 2)

    def test_grayscale_model_input(self):
        rgb = np.full((2, 2, 3), 200, dtype=np.uint8)
        np.testing.assert_array_equal(to_raw(rgb, 1), np.full((1, 2, 2), 200 / 255))

    def test_unreadable(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"nope")
        with pytest.raises(InputError):
            load_image(p)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint8, (3, 4, 3)))
    def test_raw_roundtrip_exact(self, rgb):
        np.testing.assert_array_equal(raw_to_rgb(to_raw(rgb, 3)), rgb)


class TestRender:
    def test_grayscale(self):
        out = render_heatmap(np.array([[0.0, 0.5, 1.0]]), "grayscale")
        assert out[0].tolist() == [[0, 0, 0], [128, 128, 128], [255, 255, 255]]

    def test_diverging_endpoints(self):
        out = render_heatmap(np.array([[0.0, 1.0]]), "diverging")
        assert out[0].tolist() == [[0, 0, 255], [255, 0, 0]]
        assert DIVERGING.shape == (256, 3)
        assert np.all(DIVERGING[127] >= 253) and np.all(DIVERGING[128] >= 253)

    def test_unknown_palette(self):
        with pytest.raises(InputError):
            render_heatmap(np.zeros((1, 1)), "viridis")

    def test_quantize_half_up(self):
        assert quantize(np.array([0.5, 0.5 / 255, 1.5 / 255])).tolist() == [128, 1, 2]

    def test_overlay_alpha_zero_identity(self, rng):
        base = rng.integers(0, 256, (3, 4, 3)).astype(np.uint8)
        out = overlay(base, rng.uniform(size=(3, 4)), 0.0)
        assert out.tobytes() == base.tobytes()

    def test_overlay_full_alpha(self, rng):
        base = rng.integers(0, 256, (2, 2, 3)).astype(np.uint8)
        out = overlay(base, np.ones((2, 2)), 1.0)
        assert np.all(out == [255, 0, 0])

    def test_overlay_half(self):
        base = np.full((1, 1, 3), 255, dtype=np.uint8)
        assert overlay(base, np.ones((1, 1)), 0.5)[0, 0].tolist() == [255, 128, 128]

    def test_overlay_size_mismatch(self):
        with pytest.raises(InputError):
            overlay(np.zeros((2, 2, 3), np.uint8), np.zeros((3, 3)), 0.5)

    def test_dimensions_preserved(self, rng):
        v = rng.uniform(size=(5, 7))
        assert render_heatmap(v, "diverging").shape == (5, 7, 3)
        assert overlay(np.zeros((5, 7, 3), np.uint8), v).shape == (5, 7, 3)


class TestOcclusionSeries:
    def test_empty_top_cluster(self, rng):
        rgb = rng.integers(0, 256, (3, 3, 3)).astype(np.uint8)
        frames = render_occlusion_series(rgb, [np.array([], dtype=np.int64)], 1)
        assert frames[0].tobytes() == rgb.tobytes()

    def test_cumulative_and_darkening(self, rng):
        rgb = rng.integers(1, 256, (4, 4, 3)).astype(np.uint8)
        frames = render_occlusion_series(rgb, [[0, 1], [5], [15]], 5)
        assert len(frames) == 5
        black = [set(np.flatnonzero(np.all(f == 0, axis=2).ravel())) for f in frames]
        assert all(a <= b for a, b in zip(black, black[1:]))
        lum = [int(f.astype(np.int64).sum()) for f in frames]
        assert lum == sorted(lum, reverse=True)

    def test_square_mode(self):
        rgb = np.full((4, 4, 3), 200, dtype=np.uint8)
        f = render_occlusion_series(rgb, [[5, 10]], 1, mode="square")[0]
        assert np.all(f[1:3, 1:3] == 0) and f[0, 0, 0] == 200

    def test_planted_patch_black_by_last_frame(self, rng):
        wmap = patch_weight_map(12, 12, (4, 4, 4), rng)
        model = planted_model(wmap, channels=3)
        raw = planted_image(rng, wmap, channels=3)
        h = normalize_heatmap(gradient_saliency(model, model.preprocess(raw), 1))
        frames = render_occlusion_series(raw_to_rgb(raw), select(h, SelectionConfig()), 10)
        last = frames[-1].reshape(-1, 3)
        assert np.all(last[np.flatnonzero(wmap.ravel() > 0)] == 0)


class TestHeatmapFile:
    def _heatmap(self, rng):
        raw = Heatmap(rng.normal(size=(3, 5)), "lrp-epsilon", 1, "img3", epsilon=0.01)
        return normalize_heatmap(raw)

    def test_roundtrip(self, tmp_path, rng):
        h = self._heatmap(rng)
        p = tmp_path / "h.pgm"
        write_heatmap(h, p)
        first = (p.read_bytes(), sidecar_path(p).read_bytes())
        again = read_heatmap(p)
        assert (again.method, again.target_class, again.image_id, again.epsilon) == ("lrp-epsilon", 1, "img3", 0.01)
        assert np.abs(again.values - h.values).max() <= 0.5 / 65535 + 1e-15
        q = tmp_path / "h2.pgm"
        write_heatmap(again, q)
        assert (q.read_bytes(), sidecar_path(q).read_bytes()) == first

    def test_header_and_endianness(self):
        h = Heatmap(np.array([[0.0, 1.0]]), "gradient", 0, normalized=True, norm_min=0.0, norm_max=1.0)
        assert heatmap_to_pgm_bytes(h) == b"P5\n2 1\n65535\n\x00\x00\xff\xff"

    def test_pgm_with_comment(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# hi\n2 1\n255\n\x00\xff")
        np.testing.assert_array_equal(read_heatmap(p).values, [[0.0, 1.0]])

    @pytest.mark.parametrize("buf", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1"])
    def test_malformed(self, tmp_path, buf):
        p = tmp_path / "bad.pgm"
        p.write_bytes(buf)
        with pytest.raises(FormatError):
            read_heatmap(p)

    def test_unnormalized_rejected(self):
        with pytest.raises(InputError):
            heatmap_to_pgm_bytes(Heatmap(np.zeros((1, 1)), "gradient", 0))


class TestMask:
    def test_roundtrip(self, tmp_path, rng):
        m = rng.integers(0, 4, (5, 6)).astype(np.uint8)
        p = tmp_path / "m.png"
        save_mask(m, p)
        np.testing.assert_array_equal(load_mask(p), m)
        q = tmp_path / "m2.png"
        save_mask(load_mask(p), q)
        assert q.read_bytes() == p.read_bytes()

    def test_out_of_set_values(self, tmp_path):
        p = tmp_path / "m.png"
        Image.fromarray(np.array([[0, 7]], dtype=np.uint8)).save(p)
        with pytest.raises(InputError, match="outside"):
            load_mask(p)

    def test_rgb_mask_rejected(self, tmp_path):
        p = tmp_path / "m.png"
        save_png(np.zeros((2, 2, 3), dtype=np.uint8), p)
        with pytest.raises(InputError, match="grayscale"):
            load_mask(p)


class TestManifest:
    def test_roundtrip_and_resolution(self, tmp_path):
        rows = [ManifestRow("a", "a.png", 0, 40), ManifestRow("b", "sub/b.png", 1, 400, "b_mask.png")]
        p = tmp_path / "m.csv"
        write_manifest(rows, p)
        got = read_manifest(p)
        assert got[1].path == str(tmp_path / "sub/b.png")
        assert got[1].annotation == str(tmp_path / "b_mask.png")
        assert got[0].annotation is None
        assert p.read_text().splitlines()[0] == "image_id,path,label,magnification,annotation"

    @pytest.mark.parametrize(
        "body,err",
        [
            ("image_id,path,label,magnification\na,a.png,0,50\n", InputError),
            ("image_id,path,label,magnification\na,a.png,0,40\na,b.png,1,40\n", InputError),
            ("image_id,path,label,magnification\na,a.png,x,40\n", InputError),
            ("id,path\na,a.png\n", FormatError),
        ],
    )
    def test_invalid(self, tmp_path, body, err):
        p = tmp_path / "m.csv"
        p.write_text(body)
        with pytest.raises(err):
            read_manifest(p)

    def test_breakhis_name(self):
        info = parse_breakhis_name("SOB-M-DC-14-16716-40-01011")
        assert info["tumor_class"] == "M" and info["magnification"] == 40
        assert info["tumor_type"] == "DC" and info["slide"] == "16716"
        assert parse_breakhis_name("SOB_B_TA-14-3411F-200-001.png")["magnification"] == 200

    @pytest.mark.parametrize("name", ["IMG_0001.png", "SOB_M_XX-14-1-40-1.png", "SOB_M_DC-14-1-50-1.png"])
    def test_breakhis_bad_names(self, name):
        with pytest.raises(InputError):
            parse_breakhis_name(name)

    def test_manifest_from_dir(self, tmp_path):
        for name in ("SOB_B_A-14-22549AB-40-001.png", "SOB_M_LC-14-12204-100-002.png"):
            save_png(np.zeros((2, 2, 3), np.uint8), tmp_path / name)
        rows = manifest_from_breakhis_dir(tmp_path)
        assert [(r.label, r.magnification) for r in rows] == [(0, 40), (1, 100)]
