import json
import random
from pathlib import Path

import pytest

from capforge.gateway import CaptionerPool, reference_mock_pool

RAW_WORDS = ["a", "dog", "on", "the", "grassy", "field", "with", "red", "ball", "near", "old", "barn", "sunny", "day"]


def make_fixture(root: Path, n: int = 12, seed: int = 0, missing: tuple[int, ...] = ()) -> Path:
    """Annotation file with ``n`` images; raw captions average 15 tokens."""
    rng = random.Random(seed)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(n):
        ref = f"images/img_{i:03d}.jpg"
        if i not in missing:
            (root / ref).write_bytes(bytes(rng.randrange(256) for _ in range(64)))
        words = [rng.choice(RAW_WORDS) for _ in range(14)]
        lines.append(json.dumps({"image": ref, "caption": " ".join(words) + "."}))
    path = root / "annotations.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def fixture12(tmp_path):
    return make_fixture(tmp_path / "data")


@pytest.fixture
def mock_pool():
    with CaptionerPool(reference_mock_pool(seed=0)) as pool:
        yield pool


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
