import numpy as np
import pytest
import torch

from vidharm.flow import FlowFormatError, read_flow, warp, write_flow

from oracles import bilinear_gather, central_difference


def test_zero_flow_is_exact_identity():
    rng = np.random.default_rng(0)
    frame = rng.random((9, 11, 3))
    out, inb = warp(frame, np.zeros((9, 11, 2)))
    assert np.array_equal(out, frame)
    assert inb.all()


def test_zero_flow_identity_tensor():
    frame = torch.rand(2, 3, 8, 8)
    out, inb = warp(frame, torch.zeros(2, 2, 8, 8))
    assert torch.equal(out, frame)
    assert bool((inb == 1).all())


def test_step_edge_shifts_right_under_negative_flow():
    frame = np.zeros((6, 8, 1))
    frame[:, 4:] = 1.0
    flow = np.zeros((6, 8, 2))
    flow[..., 0] = -1.0
    out, inb = warp(frame, flow)
    expected, _ = bilinear_gather(frame, flow)
    assert np.allclose(out, expected)
    assert np.array_equal(out[0, :, 0], [0, 0, 0, 0, 0, 1, 1, 1])
    assert not inb[:, 0].any() and inb[:, 1:].all()


@pytest.mark.parametrize("seed", range(5))
def test_matches_bruteforce_gather(seed):
    rng = np.random.default_rng(seed)
    frame = rng.random((16, 16, 3))
    flow = rng.uniform(-4, 4, size=(16, 16, 2))
    out, inb = warp(frame, flow)
    ref, ref_inb = bilinear_gather(frame, flow)
    assert np.max(np.abs(out - ref)) < 1e-6
    assert np.array_equal(inb, ref_inb)


def test_fully_outside_samples_are_zero_and_flagged():
    frame = np.ones((5, 5, 3))
    flow = np.full((5, 5, 2), 10.0)
    out, inb = warp(frame, flow)
    assert not out.any() and not inb.any()


def test_dim_mismatch_rejected():
    with pytest.raises(ValueError):
        warp(np.zeros((4, 4, 3)), np.zeros((4, 5, 2)))
    with pytest.raises(ValueError):
        warp(torch.zeros(1, 3, 4, 4), torch.zeros(1, 2, 4, 5))


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_gradient_wrt_frame_matches_finite_differences():
    rng = np.random.default_rng(3)
    frame = rng.random((1, 2, 8, 8))
    flow = torch.tensor(rng.uniform(-2, 2, (1, 2, 8, 8)))
    weights = torch.tensor(rng.random((1, 2, 8, 8)))

    def f(x):
        return float((warp(torch.tensor(x), flow)[0] * weights).sum())

    t = torch.tensor(frame, requires_grad=True)
    (warp(t, flow)[0] * weights).sum().backward()
    assert _rel_err(t.grad.numpy(), central_difference(f, frame)) < 1e-3


def test_gradient_wrt_flow_matches_finite_differences():
    rng = np.random.default_rng(4)
    frame = torch.tensor(rng.random((1, 3, 8, 8)))
    flow = rng.uniform(-2, 2, (1, 2, 8, 8))

    def f(x):
        return float(warp(frame, torch.tensor(x))[0].pow(2).sum())

    t = torch.tensor(flow, requires_grad=True)
    warp(frame, t)[0].pow(2).sum().backward()
    assert _rel_err(t.grad.numpy(), central_difference(f, flow)) < 1e-3


def test_flo_roundtrip_bitwise(tmp_path):
    flow = np.random.default_rng(0).normal(size=(8, 8, 2)).astype(np.float32)
    write_flow(tmp_path / "a.flo", flow)
    back = read_flow(tmp_path / "a.flo")
    assert back.dtype == np.float32 and np.array_equal(back, flow)


def test_flo_layout_is_middlebury(tmp_path):
    flow = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)
    write_flow(tmp_path / "a.flo", flow)
    raw = (tmp_path / "a.flo").read_bytes()
    assert np.frombuffer(raw[:4], "<f4")[0] == np.float32(202021.25)
    assert tuple(np.frombuffer(raw[4:12], "<i4")) == (3, 2)
    assert np.array_equal(np.frombuffer(raw[12:], "<f4"), flow.ravel())


def test_flo_bad_magic(tmp_path):
    p = tmp_path / "bad.flo"
    p.write_bytes(np.array([1.0], "<f4").tobytes() + np.array([1, 1], "<i4").tobytes() + b"\0" * 8)
    with pytest.raises(FlowFormatError):
        read_flow(p)


def test_flo_truncated(tmp_path):
    flow = np.zeros((4, 4, 2), np.float32)
    write_flow(tmp_path / "a.flo", flow)
    data = (tmp_path / "a.flo").read_bytes()
    (tmp_path / "t.flo").write_bytes(data[:-4])
    with pytest.raises(FlowFormatError):
        read_flow(tmp_path / "t.flo")


def test_empty_flow_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_flow(tmp_path / "e.flo", np.zeros((0, 0, 2), np.float32))
    p = tmp_path / "e2.flo"
    p.write_bytes(np.array([202021.25], "<f4").tobytes() + np.array([0, 0], "<i4").tobytes())
    with pytest.raises(FlowFormatError):
        read_flow(p)
