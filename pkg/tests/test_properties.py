import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rawbench import formats
from rawbench.datagen import split_counts
from rawbench.isp import CfaMosaic, CfaPattern, LinearImage, demosaic_bilinear, linearize, quantize
from rawbench.rawrep import pack_array, unpack_array

from .oracles import demosaic_oracle

patterns = st.sampled_from(list(CfaPattern))


@st.composite
def mosaics(draw, max_half=16):
    h, w = draw(st.integers(1, max_half)) * 2, draw(st.integers(1, max_half)) * 2
    depth = draw(st.sampled_from([10, 12, 14, 16]))
    top = (1 << depth) - 1
    black = draw(st.integers(0, top // 4))
    white = draw(st.integers(black + 1, top))
    samples = draw(hnp.arrays(np.uint16, (h, w), elements=st.integers(0, top)))
    return CfaMosaic(samples, draw(patterns), depth, black, white)


class TestProperties:
    @given(mosaics())
    def test_pack_bijection(self, m):
        assert np.array_equal(unpack_array(pack_array(m.samples)), m.samples)

    @given(mosaics())
    def test_linearize_range(self, m):
        v = linearize(m).values
        assert v.min() >= 0.0 and v.max() <= 1.0

    @given(mosaics(max_half=6))
    @settings(max_examples=50)
    def test_demosaic_oracle(self, m):
        v = linearize(m).values
        assert np.array_equal(demosaic_bilinear(LinearImage(v), m.pattern).values,
                              demosaic_oracle(v, m.pattern.name))

    @given(hnp.arrays(np.float64, (2, 3, 3), elements=st.floats(-2.0, 3.0)), st.sampled_from([8, 16]))
    def test_quantize_range(self, values, depth):
        px = quantize(LinearImage(values), depth).pixels
        assert px.min() >= 0 and px.max() <= (1 << depth) - 1

    @given(mosaics(max_half=4))
    def test_craw_round_trip(self, m):
        assert formats.decode_craw(formats.encode_craw(m)) == m

    @given(st.integers(10, 100_000))
    def test_split_counts(self, n):
        counts = split_counts(n)
        assert sum(counts) == n
        for c, ratio in zip(counts, (0.7, 0.2, 0.1)):
            assert abs(c - ratio * n) <= 1
