import numpy as np
import pytest

from purifyattack import adcore as ad
from purifyattack.chainckpt import StepSpec, forward_record, fullgraph_backward, peak_live_bytes, segmentwise_backward
from purifyattack.rng import Streams


def _mlp_step(seed: int, width: int, label: str | None):
    st = Streams(seed)
    w = st.normal("w", (width, width)) / np.sqrt(width)
    b = 0.1 * st.normal("b", (width,))

    def fn(x, z):
        h = ad.tanh(ad.badd(ad.matmul(x, w), b))
        return h if z is None else ad.add(h, ad.scale(z, 0.1))

    return StepSpec(fn, (label,) if label else (), f"mlp{seed}")


def random_chain(seed: int, length: int, width: int = 4):
    return [_mlp_step(seed * 1000 + i, width, f"chain{seed}/noise/{i}" if i % 2 == 0 else None)
            for i in range(length)]


def test_forward_record_examples():
    ident = StepSpec(lambda x, z: x)
    x0 = np.ones((2, 3))
    rec = forward_record([ident], x0)
    assert len(rec.samples) == 2 and np.array_equal(rec.samples[0], x0) and np.array_equal(rec.samples[1], x0)
    chain = random_chain(1, 8)
    rec = forward_record(chain, Streams(0).normal("x", (3, 4)), Streams(5))
    assert len(rec.samples) == 9
    for i, step in enumerate(chain):
        assert np.array_equal(step.run(rec.samples[i], rec.streams), rec.samples[i + 1])
    with pytest.raises(ValueError):
        forward_record([], x0)


def test_step_failure_names_index():
    bad = StepSpec(lambda x, z: ad.matmul(x, np.ones((7, 7))), (), "bad")
    with pytest.raises(RuntimeError, match="step 1"):
        forward_record([StepSpec(lambda x, z: x), bad], np.ones((2, 3)))


def test_identity_and_doubling_chains():
    seed = np.array([[1.0, -2.0]])
    ident = [StepSpec(lambda x, z: ad.scale(x, 1.0)) for _ in range(4)]
    rec = forward_record(ident, np.zeros((1, 2)))
    assert np.array_equal(segmentwise_backward(rec, seed), seed)
    assert np.array_equal(fullgraph_backward(rec, seed), seed)
    doubling = [StepSpec(lambda x, z: ad.scale(x, 2.0)) for _ in range(3)]
    rec = forward_record(doubling, np.ones((1, 2)))
    assert np.array_equal(segmentwise_backward(rec, seed), 8 * seed)


@pytest.mark.parametrize("seed", range(5))
def test_random_chain_bitwise_equivalence(seed):
    chain = random_chain(seed, 5 + seed)
    st = Streams(seed)
    rec = forward_record(chain, st.normal("x0", (3, 4)), st)
    g = st.normal("g", (3, 4))
    inject = {2: st.normal("i2", (3, 4)), 0: st.normal("i0", (3, 4)), len(chain): st.normal("iN", (3, 4))}
    for size in (1, 2, 3):
        assert np.array_equal(segmentwise_backward(rec, g, inject, segment_size=size),
                              fullgraph_backward(rec, g, inject))


def test_injection_equals_full_gradient_of_intermediate_loss():
    chain = random_chain(7, 4)
    st = Streams(7)
    x0 = st.normal("x0", (2, 4))
    rec = forward_record(chain, x0, st)
    target = st.normal("target", (2, 4))

    def total(x):
        r = forward_record(chain, x, st)
        return float(np.sum(r.samples[-1]) + np.sum((r.samples[2] - target) ** 2))

    g = segmentwise_backward(rec, np.ones((2, 4)), {2: lambda r: 2 * (r.samples[2] - target)})
    fd = ad.finite_diff_grad(total, x0)
    assert np.max(np.abs(g - fd)) < 1e-7


def test_injection_shape_error_names_step():
    rec = forward_record(random_chain(0, 3), np.ones((2, 4)), Streams(0))
    with pytest.raises(ad.ShapeError, match="step 1"):
        segmentwise_backward(rec, np.ones((2, 4)), {1: np.ones((3, 4))})
    with pytest.raises(IndexError):
        segmentwise_backward(rec, np.ones((2, 4)), {9: np.ones((2, 4))})


def test_memory_constancy_and_fullgraph_growth():
    peaks_seg, peaks_full = {}, {}
    for n in (8, 16, 32, 64):
        chain = [_mlp_step(i, 8, f"m/{i}") for i in range(n)]
        rec = forward_record(chain, np.ones((4, 8)), Streams(0))
        m_seg, m_full = ad.MemoryMeter(), ad.MemoryMeter()
        segmentwise_backward(rec, np.ones((4, 8)), meter=m_seg)
        fullgraph_backward(rec, np.ones((4, 8)), meter=m_full)
        assert m_seg.current == 0 and m_full.current == 0
        peaks_seg[n], peaks_full[n] = peak_live_bytes(m_seg), peak_live_bytes(m_full)
    assert peaks_seg[64] == peaks_seg[8]
    slope = (peaks_full[64] - peaks_full[8]) / 56
    assert slope >= peaks_full[8] / 8 * 0.99
    assert peak_live_bytes(ad.MemoryMeter()) == 0


def test_only_one_segment_tape_live():
    live = []
    meter = ad.MemoryMeter()

    class Spy(ad.MemoryMeter):
        def allocate(self, nbytes):
            super().allocate(nbytes)
            live.append(self.current)

    spy = Spy()
    chain = [_mlp_step(i, 4, None) for i in range(10)]
    rec = forward_record(chain, np.ones((2, 4)))
    segmentwise_backward(rec, np.ones((2, 4)), meter=spy)
    segmentwise_backward(forward_record(chain[:1], np.ones((2, 4))), np.ones((2, 4)), meter=meter)
    assert max(live) == meter.peak
