import time

import numpy as np
import pytest

from isvos.metrics import sequence_eval
from isvos.pipeline import ISVOS, ModelConfig, run_inference, train_toy
from isvos.synthvid import SceneSpec, generate_sequence

TINY = dict(image_size=32, c_h=8, c_k=4, c_v=8, c_d=8, c_eps=8, num_queries=4, num_layers=3)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


@pytest.fixture(scope="session")
def overfit():
    """The default-configuration overfit run, shared across test modules."""
    cfg = ModelConfig()
    seq = generate_sequence(SceneSpec(seed=cfg.seed, num_objects=2, num_frames=8, image_size=cfg.image_size))
    model = ISVOS(cfg)
    t0 = time.perf_counter()
    result = train_toy(model, [seq], cfg, steps=500)
    seconds = time.perf_counter() - t0
    preds, report = run_inference(model, seq)
    score = sequence_eval(preds, seq.masks)
    return dict(config=cfg, sequence=seq, model=model, result=result, seconds=seconds,
                preds=preds, report=report, score=score)


def masks_equal(a, b):
    return len(a) == len(b) and all(np.asarray(x).tobytes() == np.asarray(y).tobytes() for x, y in zip(a, b))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
