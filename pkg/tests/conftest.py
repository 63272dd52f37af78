import numpy as np
import pytest

from pointr.model import ModelConfig


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        n_input=64,
        n_proxies=8,
        n_queries=6,
        embed_dim=24,
        n_heads=4,
        enc_depth=2,
        dec_depth=2,
        k_dgcnn=8,
        k_geo=4,
        fold_grid=2,
        fold_hidden=16,
        query_hidden=32,
        pos_hidden=16,
        extractor_channels=(4, 8, 8, 8, 16),
    )
    base.update(overrides)
    return ModelConfig(**base)


def distinct_cloud(rng, n):
    """Random points on the unit sphere; pairwise distances are almost surely distinct."""
    v = rng.normal(size=(n, 3))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled by test_acceptance, printed once at the end
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
