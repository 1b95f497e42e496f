import json
import math
import warnings

import numpy as np
import pytest
import torch

from vidharm.data import SampleStore
from vidharm.evaluation import (EvalReport, evaluate_split, format_table, harmonize_without_mask,
                                mask_iou, mse, pl_log_likelihood, plackett_luce, predict_mask,
                                psnr, read_ballots, temporal_error, write_report)
from vidharm.losses import regional_temporal_loss
from vidharm.networks import DiscriminatorConfig, GeneratorConfig, ModelBundle, generate

from oracles import pl_grid_search, pl_loglik

HANDCRAFTED = [["A", "B", "C"], ["B", "A", "C"], ["A", "C", "B"], ["C", "B", "A"], ["A", "B", "C"]]


def test_mse_psnr_closed_forms():
    a = np.random.default_rng(0).random((8, 8, 3)) * 0.8
    assert mse(a, a) == 0 and psnr(a, a) == math.inf
    assert mse(a, a + 0.1) == pytest.approx(0.01, abs=1e-12)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(ValueError):
        mse(a, a[:4])


def test_temporal_error_constant_video_is_zero():
    frame = torch.rand(1, 3, 8, 8)
    mask = torch.ones(1, 1, 8, 8)
    flows = [torch.zeros(1, 2, 8, 8)] * 3
    assert temporal_error([frame] * 4, [mask] * 4, flows) == 0.0


def test_temporal_error_two_frames_matches_direct_loss():
    from vidharm.flow import warp
    g = torch.Generator().manual_seed(0)
    o1, o2 = torch.rand(1, 3, 8, 8, generator=g), torch.rand(1, 3, 8, 8, generator=g)
    m = (torch.rand(1, 1, 8, 8, generator=g) > 0.5).float()
    flow = torch.rand(1, 2, 8, 8, generator=g) * 2 - 1
    warped, inb = warp(o1, flow)
    direct = regional_temporal_loss(o2, warped, m, inb).item()
    assert temporal_error([o1, o2], [m, m], [flow]) == pytest.approx(direct, abs=1e-12)


def test_temporal_error_length_checks():
    f = torch.zeros(1, 3, 4, 4)
    with pytest.raises(ValueError):
        temporal_error([f], [f], [])
    with pytest.raises(ValueError):
        temporal_error([f, f], [f], [torch.zeros(1, 2, 4, 4)])


class ConstantDisc(torch.nn.Module):
    multiple = 1

    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, frame):
        return torch.full_like(frame[:, :1], self.value)


class Doubler(torch.nn.Module):
    multiple = 1

    def forward(self, frame, mask):
        return torch.tanh(frame * 2)


def test_predict_mask_clamps():
    frame = torch.rand(1, 3, 4, 4)
    assert torch.equal(predict_mask(ConstantDisc(1.7), frame), torch.ones(1, 1, 4, 4))
    assert torch.equal(predict_mask(ConstantDisc(-0.3), frame), torch.zeros(1, 1, 4, 4))


def test_mask_free_with_empty_prediction_is_identity():
    frame = torch.rand(1, 3, 4, 4)
    assert torch.equal(harmonize_without_mask(Doubler(), ConstantDisc(-1.0), frame), frame)
    soft = predict_mask(ConstantDisc(0.3), frame)
    with torch.no_grad():
        assert torch.equal(harmonize_without_mask(Doubler(), ConstantDisc(0.3), frame),
                           generate(Doubler(), frame, soft))


def test_mask_iou():
    a = np.zeros((4, 4))
    a[:2] = 1
    assert mask_iou(a, a) == 1.0
    b = np.zeros((4, 4))
    b[1:3] = 1
    assert mask_iou(a * 0.7, b) == pytest.approx(1 / 3)
    assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


# ------------------------------------------------------------------ evaluate_split

def test_identity_baseline_matches_direct_metrics(tiny_manifest):
    rep = evaluate_split(None, tiny_manifest, "train", 32)
    store = SampleStore(tiny_manifest, "train", 32)
    errs = []
    for i in range(len(store)):
        raw = store.raw(i)
        errs += [mse(raw.comp_1, raw.gt_1), mse(raw.comp_2, raw.gt_2)]
    assert rep.mse == pytest.approx(np.mean(errs), rel=1e-5)
    assert rep.psnr == pytest.approx(10 * math.log10(1 / np.mean(errs)), abs=1e-3)
    assert rep.n == 4 and rep.label == "cut-and-paste"
    assert evaluate_split(None, tiny_manifest, "train", 32).to_dict() == rep.to_dict()


def test_model_evaluation_and_external_flows(tiny_manifest, tmp_path):
    bundle = ModelBundle.create(GeneratorConfig(base_channels=8, depth=3),
                                DiscriminatorConfig(base_channels=8, depth=3))
    from vidharm.flow import write_flow
    from vidharm.synthesis import split_entries
    for e in split_entries(tiny_manifest, "test"):
        write_flow(tmp_path / f"{e['id']}.flo", np.zeros((32, 32, 2), np.float32))
    rep = evaluate_split(bundle, tiny_manifest, "test", 32, flows_dir=tmp_path)
    assert rep.lt2 is not None and np.isfinite(rep.lt2) and np.isfinite(rep.psnr)
    free = evaluate_split(bundle, tiny_manifest, "test", 32, mask_free=True)
    assert np.isfinite(free.mse)
    with pytest.raises(FileNotFoundError):
        evaluate_split(bundle, tiny_manifest, "val", 32, flows_dir=tmp_path)


def test_report_files(tmp_path):
    reps = [EvalReport(psnr=math.inf, mse=0.0, lt1=0.0, n=1, label="perfect"),
            EvalReport(psnr=20.0, mse=0.01, lt1=0.002, lt2=0.003, n=1, label="model")]
    paths = write_report(reps, tmp_path)
    data = json.loads(paths["json"].read_text())
    assert data[0]["psnr"] == "inf" and data[1]["psnr"] == 20.0
    table = paths["table"].read_text()
    assert table.splitlines()[0].split() == ["Method", "PSNR", "MSE", "L_T1", "L_T2"]
    assert "inf" in table and "20.00" in table
    for k in ("summary_png", "per_sample_png"):
        assert paths[k].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert format_table(reps) == table


# ------------------------------------------------------------------ Plackett-Luce

def test_pl_matches_grid_search_oracle():
    res = plackett_luce(HANDCRAFTED)
    assert res.converged
    oracle = pl_grid_search(HANDCRAFTED, ["A", "B", "C"])
    for m in "ABC":
        assert abs(res.scores[m] - oracle[m]) < 1e-3
    assert abs(sum(res.scores.values())) < 1e-9


def test_pl_likelihood_matches_loop_oracle():
    rng = np.random.default_rng(0)
    worth = rng.random(3) + 0.1
    ranks = np.array([["ABC".index(c) for c in b] for b in HANDCRAFTED])
    theta = dict(zip("ABC", np.log(worth)))
    assert pl_log_likelihood(worth, ranks) == pytest.approx(pl_loglik(theta, HANDCRAFTED), abs=1e-12)


def test_pl_likelihood_monotone():
    rng = np.random.default_rng(1)
    ballots = [list(rng.permutation(list("ABCDE"))) for _ in range(30)]
    lls = plackett_luce(ballots).log_likelihoods
    assert all(b >= a - 1e-12 for a, b in zip(lls, lls[1:]))


def test_pl_unanimous_strictly_ordered():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = plackett_luce([["A", "B", "C"]] * 4, max_iter=2000)
    assert res.scores["A"] > res.scores["B"] > res.scores["C"]
    assert res.scores["C"] == -math.inf


def test_pl_never_winning_warns():
    with pytest.warns(UserWarning, match="never ranked above"):
        plackett_luce([["A", "B"]] * 3, max_iter=50)


def test_pl_permutation_equivariant():
    rng = np.random.default_rng(2)
    ballots = [list(rng.permutation(list("ABCD"))) for _ in range(20)]
    rename = {"A": "z", "B": "y", "C": "x", "D": "w"}
    a = plackett_luce(ballots).scores
    b = plackett_luce([[rename[m] for m in bal] for bal in ballots]).scores
    for m in "ABCD":
        assert a[m] == pytest.approx(b[rename[m]], abs=1e-9)


def test_pl_symmetric_two_methods():
    rng = np.random.default_rng(3)
    ballots = [["A", "B"] if rng.random() < 0.5 else ["B", "A"] for _ in range(20000)]
    s = plackett_luce(ballots).scores
    assert abs(s["A"]) < 0.05 and abs(s["B"]) < 0.05


def test_pl_validation():
    with pytest.raises(ValueError):
        plackett_luce([])
    with pytest.raises(ValueError):
        plackett_luce([["A", "A", "B"]])
    with pytest.raises(ValueError):
        plackett_luce([["A", "B"], ["A", "C"]])


def test_read_ballots(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("rank1,rank2,rank3\nA, B ,C\n\nC,B,A\n")
    assert read_ballots(p) == [["A", "B", "C"], ["C", "B", "A"]]
