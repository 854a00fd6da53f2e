import math

import numpy as np
import pytest
import torch

from conftest import tiny_config
from udgan.checkpoint import (FORMAT, load_checkpoint, module_digest, payload_digest,
                              read_checkpoint, save_checkpoint, state_payload)
from udgan.errors import TrainingError
from udgan.mining import MinedPair
from udgan.networks import UDGANNet
from udgan.trainer import (LogRow, Step, check_finite, cosine_lr, epoch_lr, epoch_means,
                           make_alternating_schedule, pair_batches, read_log, run_stage1,
                           run_stage2, run_stage3, seed_everything, smoothed, write_log)


def test_cosine_lr_values():
    assert cosine_lr(0, 10, 2e-4) == 2e-4
    assert cosine_lr(5, 10, 2e-4) == pytest.approx(1e-4)
    assert cosine_lr(10, 10, 2e-4) == pytest.approx(0.0, abs=1e-20)
    assert cosine_lr(2.5, 10, 1.0) == pytest.approx(0.5 * (1 + math.cos(math.pi / 4)))
    for bad in [(11, 10, 1.0), (-1, 10, 1.0), (0, 0, 1.0)]:
        with pytest.raises(ValueError):
            cosine_lr(*bad)


def test_epoch_lr_anneals_to_zero_on_final_epoch():
    lrs = [epoch_lr(e, 100, 1.5e-4) for e in range(100)]
    assert lrs[0] == 1.5e-4
    assert lrs[-1] < 1e-6 * 1.5e-4
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert epoch_lr(0, 1, 3.0) == 3.0


def test_alternating_schedule():
    assert make_alternating_schedule(2, 2) == [Step("S", 0), Step("T", 0), Step("S", 1), Step("T", 1)]
    steps = make_alternating_schedule(3, 1)
    assert [s.domain for s in steps] == ["S", "T"] * 3
    assert [s.batch for s in steps if s.domain == "T"] == [0, 0, 0]
    with pytest.raises(ValueError):
        make_alternating_schedule(0, 2)


def test_pair_batches_keep_pairs_together():
    pairs = [MinedPair(i, (i + 1) % 7, False, 0.1) for i in range(7)]
    batches = pair_batches(pairs, 4, torch.Generator().manual_seed(0))
    assert [len(b) for b in batches] == [4, 4, 4, 2]
    seen = sorted(int(b[i]) for b in batches for i in range(0, len(b), 2))
    assert seen == list(range(7))
    for b in batches:
        for q, m in zip(b[0::2], b[1::2]):
            assert m == (q + 1) % 7
    with pytest.raises(ValueError):
        pair_batches(pairs, 3, torch.Generator())


def test_log_round_trip_and_summaries(tmp_path):
    rows = [LogRow(2, e, "T", loss_rec=v, loss_kl=0.5, lr=1e-3) for e, v in
            [(0, 3.0), (0, 1.0), (1, 1.5), (2, 0.1)]]
    write_log(tmp_path / "m.csv", rows)
    assert read_log(tmp_path / "m.csv") == rows
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == \
        "stage,epoch,step_domain,loss_id,loss_rec,loss_kl,loss_adv_g,loss_adv_d,lr"
    assert epoch_means(rows, "loss_rec") == [2.0, 1.5, 0.1]
    assert epoch_means(rows, "loss_id") == []
    assert smoothed([1, 2, 3, 4], window=2) == [1.0, 1.5, 2.5, 3.5]


def test_check_finite():
    lin = torch.nn.Linear(2, 2)
    check_finite(lin, "ok")
    with torch.no_grad():
        lin.weight[0, 0] = float("nan")
    with pytest.raises(TrainingError, match="weight"):
        check_finite(lin, "here")


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    from udgan.data import ManifestDataset
    from udgan.synthetic import SyntheticSpec, make_synthetic
    root = tmp_path_factory.mktemp("staged")
    cfg = tiny_config()
    src = make_synthetic(SyntheticSpec(4, 6, (16, 8), seed=1), root / "src")
    tgt = make_synthetic(SyntheticSpec(4, 6, (16, 8), seed=2, domain="target"), root / "tgt")
    source = ManifestDataset(src.manifest, "train", cfg.image_size)
    target = ManifestDataset(tgt.manifest, "train", cfg.image_size)

    seed_everything(cfg.seed)
    net = UDGANNet(cfg, 4)
    initial = module_digest(net.trunk, net.identity_head)
    r1 = run_stage1(cfg, source, 4, net=net, trace=True)
    after1 = module_digest(*r1.net.identity_modules())
    r2 = run_stage2(cfg, r1.net, target, trace=True)
    after2 = module_digest(*r2.net.identity_modules())
    r3 = run_stage3(cfg, r2.net, source, target, r2.pairs, trace=True)
    return dict(cfg=cfg, source=source, target=target, initial=initial, r1=r1, r2=r2, r3=r3,
                after1=after1, after2=after2, root=root)


def test_stage1_warmup_freezes_encoder(staged):
    r1 = staged["r1"]
    assert r1.checksums == [staged["initial"]]
    assert module_digest(r1.net.trunk, r1.net.identity_head) != staged["initial"]
    assert set(r1.trace) == {"S:id"}
    assert {r.step_domain for r in r1.rows} == {"S"}
    assert 0.0 <= r1.train_accuracy <= 1.0


def test_stage2_keeps_identity_encoder_frozen(staged):
    r2 = staged["r2"]
    assert len(r2.checksums) == staged["cfg"].stage2.epochs + 1
    assert set(r2.checksums) == {staged["after1"]}
    assert staged["after2"] == staged["after1"]
    assert len(r2.pairs) == len(staged["target"])
    assert r2.mining_report.total_queries == len(staged["target"])
    assert r2.trace and r2.trace[0::2] == ["T:D"] * (len(r2.trace) // 2)
    assert r2.trace[1::2] == ["T:G"] * (len(r2.trace) // 2)
    assert all(r.loss_rec is not None and r.loss_adv_d is not None for r in r2.rows)


def test_stage3_alternates_and_updates_encoder(staged):
    r3 = staged["r3"]
    domains = [r.step_domain for r in r3.rows]
    assert domains == ["S", "T"] * (len(domains) // 2)
    steps = [t for t in r3.trace]
    for i in range(0, len(steps), 3):
        assert steps[i:i + 3] == ["S:id", "T:D", "T:G"]
    assert module_digest(*r3.net.identity_modules()) != staged["after2"]


def test_stage_prerequisites(staged):
    cfg = staged["cfg"]
    with pytest.raises(TrainingError):
        run_stage3(cfg, staged["r3"].net, staged["source"], staged["target"], [])
    with pytest.raises(TrainingError):
        run_stage1(cfg, staged["source"], 1)


def test_stage1_is_deterministic_and_resumable(staged, tmp_path):
    cfg, source = staged["cfg"], staged["source"]
    full = payload_digest(state_payload(run_stage1(cfg, source, 4).net))
    assert payload_digest(state_payload(run_stage1(cfg, source, 4).net)) == full

    partial = tmp_path / "stage1.partial.ckpt"
    short = tiny_config()
    short.stage1.epochs = 1
    run_stage1(short, source, 4, resume_path=partial)
    assert read_checkpoint(partial)["extra"]["epoch"] == 1
    resumed = run_stage1(cfg, source, 4, resume_path=partial)
    assert payload_digest(state_payload(resumed.net)) == full
    assert len(resumed.rows) == len(run_stage1(cfg, source, 4).rows)


def test_checkpoint_round_trip(staged, tmp_path):
    net = staged["r3"].net
    path = tmp_path / "stage3.ckpt"
    save_checkpoint(path, net, staged["cfg"], 3, {"classes": [1, 2, 3, 4]})
    blob = read_checkpoint(path)
    assert blob["format"] == FORMAT and blob["stage"] == 3
    loaded, cfg, stage, extra = load_checkpoint(path)
    assert stage == 3 and extra["classes"] == [1, 2, 3, 4]
    assert cfg == staged["cfg"]
    assert payload_digest(state_payload(loaded)) == payload_digest(state_payload(net))
    x = torch.stack([staged["target"][i][0] for i in range(4)])
    net.eval(), loaded.eval()
    with torch.no_grad():
        assert torch.equal(net.identity_head(net.trunk(x)), loaded.identity_head(loaded.trunk(x)))


def test_corrupt_checkpoint_rejected(tmp_path):
    bad = tmp_path / "bad.ckpt"
    torch.save({"format": "something-else"}, bad)
    with pytest.raises(TrainingError):
        read_checkpoint(bad)
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(TrainingError):
        read_checkpoint(bad)


def test_schedule_is_seed_stable():
    g1, g2 = torch.Generator().manual_seed(5), torch.Generator().manual_seed(5)
    pairs = [MinedPair(i, i, True, 0.0) for i in range(10)]
    a = pair_batches(pairs, 4, g1)
    b = pair_batches(pairs, 4, g2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
