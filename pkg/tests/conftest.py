import pytest
import torch

from udgan.config import ModelConfig, Stage1Config, Stage2Config, Stage3Config, TrainConfig
from udgan.data import ManifestDataset
from udgan.synthetic import SyntheticSpec, make_synthetic

torch.set_num_threads(1)

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome for the terminal summary."""
    def record(number, name, ok, detail=""):
        _ACCEPTANCE.append((number, name, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {name}"
                                    + (f" -- {detail}" if detail else ""))


def tiny_config(**overrides):
    """Smallest config that exercises every module; 16x8 images."""
    cfg = TrainConfig(
        image_size=(16, 8),
        model=ModelConfig(latent_dim=8, trunk_channels=(4, 8, 8), gen_blocks=2,
                          gen_base_channels=16, gen_dropout=0.0, disc_blocks=2,
                          disc_base_channels=8),
        stage1=Stage1Config(epochs=2, batch_size=8, lr=1e-3, warmup_epochs=1),
        stage2=Stage2Config(epochs=2, batch_size=8, lr=1e-3),
        stage3=Stage3Config(epochs=1, source_batch_size=8, target_batch_size=8, lr=1e-3),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_domains(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    src = make_synthetic(SyntheticSpec(4, 6, (16, 8), seed=1), root / "src")
    tgt = make_synthetic(SyntheticSpec(4, 6, (16, 8), seed=2, domain="target", id_offset=50),
                         root / "tgt")
    return root, src, tgt


@pytest.fixture
def tiny_sets(tiny_domains):
    _, src, tgt = tiny_domains
    cfg = tiny_config()
    return (ManifestDataset(src.manifest, "train", cfg.image_size),
            ManifestDataset(tgt.manifest, "train", cfg.image_size),
            src.manifest.num_classes)
