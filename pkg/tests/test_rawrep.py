import numpy as np
import numpy.testing as npt
import pytest

from rawbench.isp import CfaMosaic, CfaPattern, IspError, LinearImage
from rawbench.nn.gradcheck import check_layer, numerical_gradient, relative_error
from rawbench.rawrep import (BcaFrontend, BcaFuse, Pack, PackedQuads, bca_frontend, bca_fuse, pack,
                             pack_array, unpack, unpack_array)

from .oracles import pack_oracle


def zero_gates(fuse: BcaFuse):
    for _, p in fuse.named_params():
        p.data[...] = 0.0


class TestPack:
    def test_shape(self):
        p = pack(CfaMosaic(np.zeros((40, 40))))
        assert p.values.shape == (20, 20, 4)

    def test_single_quad(self):
        p = pack(CfaMosaic(np.array([[1, 2], [3, 4]])))
        npt.assert_array_equal(p.values[0, 0], [1, 2, 3, 4])

    def test_channel_colors(self):
        assert pack(CfaMosaic(np.zeros((2, 2)), CfaPattern.RGGB)).channel_colors == ("R", "G", "G", "B")
        assert pack(CfaMosaic(np.zeros((2, 2)), CfaPattern.GBRG)).channel_colors == ("G", "B", "R", "G")

    def test_matches_loop_oracle(self):
        m = np.random.default_rng(0).integers(0, 65535, size=(16, 16))
        npt.assert_array_equal(pack_array(m), pack_oracle(m))

    def test_unpack_quad(self):
        out = unpack(PackedQuads(np.array([[[1.0, 2.0, 3.0, 4.0]]])))
        npt.assert_array_equal(out.values, [[1, 2], [3, 4]])

    def test_bijection_both_ways(self):
        rng = np.random.default_rng(1)
        m = rng.integers(0, 65535, size=(16, 16)).astype(np.uint16)
        npt.assert_array_equal(unpack_array(pack_array(m)), m)
        p = rng.random((3, 4, 5, 7))
        npt.assert_array_equal(pack_array(unpack_array(p)), p)

    def test_linear_image_keeps_pattern(self):
        p = pack(LinearImage(np.zeros((4, 4))), CfaPattern.BGGR)
        assert p.pattern is CfaPattern.BGGR and unpack(p).values.shape == (4, 4)

    def test_odd_size_rejected(self):
        with pytest.raises(IspError):
            pack_array(np.zeros((3, 4)))

    def test_layer_gradient(self):
        rng = np.random.default_rng(2)
        errs = check_layer(Pack(), rng.standard_normal((2, 1, 4, 6)), rng)
        assert errs["input"] < 1e-8


class TestBcaFuse:
    def test_zero_gate_halves_inputs(self):
        rng = np.random.default_rng(3)
        fuse = BcaFuse(4, rng)
        zero_gates(fuse)
        s, c = rng.standard_normal((2, 4, 5, 5)), rng.standard_normal((2, 4, 5, 5))
        new_s, new_c = bca_fuse(s, c, fuse)
        assert np.array_equal(new_s, 0.5 * s) and np.array_equal(new_c, 0.5 * c)

    def test_zero_spatial_stays_zero(self):
        rng = np.random.default_rng(4)
        fuse = BcaFuse(3, rng, gate_std=1.0)
        new_s, _ = bca_fuse(np.zeros((1, 3, 4, 4)), rng.standard_normal((1, 3, 4, 4)), fuse)
        assert not new_s.any()

    def test_scalar_gate(self):
        fuse = BcaFuse(1)
        zero_gates(fuse)
        fuse.children["gate_color"].params["weight"].data[...] = 1.0
        new_s, new_c = bca_fuse(np.full((1, 1, 1, 1), 2.0), np.full((1, 1, 1, 1), 1.0), fuse)
        # 2 * sigmoid(1); color gate reads spatial through a zero conv
        npt.assert_allclose(new_s.item(), 1.4621, atol=1e-4)
        assert new_c.item() == 0.5

    def test_gates_read_the_other_map(self):
        rng = np.random.default_rng(5)
        fuse = BcaFuse(2, rng, gate_std=1.0)
        s, c = rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 2, 3, 3))
        s2 = s + 1.0
        # changing spatial leaves new_spatial's gate alone: ratio new/old stays the same
        a, _ = bca_fuse(s, c, fuse)
        b, _ = bca_fuse(s2, c, fuse)
        npt.assert_allclose(a / s, b / s2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bca_fuse(np.zeros((1, 2, 3, 3)), np.zeros((1, 2, 4, 4)), BcaFuse(2))

    def test_gradient(self):
        rng = np.random.default_rng(6)
        fuse = BcaFuse(4, rng, gate_std=0.5)
        s, c = rng.standard_normal((2, 4, 4, 4)), rng.standard_normal((2, 4, 4, 4))
        rs, rc = rng.standard_normal(s.shape), rng.standard_normal(c.shape)

        def loss():
            a, b = fuse.forward_pair(s, c)
            return float(np.sum(a * rs) + np.sum(b * rc))

        fuse.zero_grad()
        loss()
        ds, dc = fuse.backward_pair(rs, rc)
        assert relative_error(ds, numerical_gradient(loss, s)) < 1e-6
        assert relative_error(dc, numerical_gradient(loss, c)) < 1e-6
        for name, p in fuse.named_params():
            assert relative_error(p.grad, numerical_gradient(loss, p.data)) < 1e-6, name


class TestBcaFrontend:
    def test_output_shape(self):
        fe = BcaFrontend(8, 12, np.random.default_rng(0))
        assert fe.forward(np.zeros((2, 1, 40, 40))).shape == (2, 12, 20, 20)

    def test_zero_gates_give_half_scaled_merge(self):
        rng = np.random.default_rng(7)
        fe = BcaFrontend(4, 5, rng)
        zero_gates(fe.children["fuse"])
        x = rng.random((2, 1, 8, 8))
        c = fe.children
        spatial = c["downscale"].forward(c["spatial_stem"].forward(x))
        color = c["color_stem"].forward(c["pack"].forward(x))
        expected = c["merge"].forward(np.concatenate([0.5 * spatial, 0.5 * color], axis=1))
        npt.assert_array_equal(fe.forward(x), expected)

    def test_deterministic(self):
        m = CfaMosaic(np.random.default_rng(8).integers(0, 65535, size=(8, 8)))
        a = bca_frontend(m, BcaFrontend(4, 4, np.random.default_rng(1)))
        b = bca_frontend(m, BcaFrontend(4, 4, np.random.default_rng(1)))
        assert a.tobytes() == b.tobytes()

    def test_gradient(self):
        rng = np.random.default_rng(9)
        fe = BcaFrontend(3, 2, rng).astype(np.float64)
        errs = check_layer(fe, rng.random((2, 1, 4, 4)), rng)
        assert max(errs.values()) < 1e-4, errs
