import numpy as np
import pytest

from spalmtl.backbone import BackboneConfig
from spalmtl.model import MtlModel
from spalmtl.synthdata import GeneratorSpec, SynthTaskSpec, gen_synthetic_suite
from spalmtl.tasks import TaskSpec


TINY = BackboneConfig(num_layers=2, model_dim=8, num_heads=2, ff_dim=16,
                      vocab_size=128, max_seq_len=16)


def fd_gradient(f, arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. arr, in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        lp = f()
        flat[i] = old - eps
        lm = f()
        flat[i] = old
        gflat[i] = (lp - lm) / (2 * eps)
    return g


def grads_close(fd: np.ndarray, g: np.ndarray, rtol: float = 1e-4,
                atol: float = 1e-9) -> bool:
    return bool(np.all(np.abs(fd - g) <= atol + rtol * np.maximum(np.abs(fd), np.abs(g))))


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_model():
    spec = TaskSpec(id="clf", kind="seq_classification", metric="accuracy",
                    num_classes=3, batch_size=4)
    model = MtlModel.build(TINY, [spec], spal_hidden=4, seed=7,
                           freeze_backbone=True)
    return model, spec


def two_task_suite(seed=0, kind="seq_classification", sizes=(24, 8, 8),
                   rho=1.0, num_classes=2, batch_size=4):
    tasks = tuple(
        SynthTaskSpec(tid, kind, sizes, rho, num_classes=num_classes,
                      batch_size=batch_size)
        for tid in ("alpha", "beta"))
    gen = GeneratorSpec(tasks=tasks, vocab_size=96, seq_len=(6, 8),
                        latent_dim=3, bins=6, seed=seed)
    return gen_synthetic_suite(gen)
