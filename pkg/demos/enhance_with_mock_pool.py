"""
Enhancing an annotation file with a pool of captioners
======================================================

Every image gets one caption per pool member. Here the pool is the
deterministic mock backend, so the script runs offline; pointing the
endpoints at real chat-completions servers only changes the config.
"""

import json
import random
import tempfile
from pathlib import Path

from capforge import dataset as ds
from capforge.gateway import CaptionerPool, reference_mock_pool
from capforge.orchestrator import run_pipeline
from capforge.shear import ShearPolicy

root = Path(tempfile.mkdtemp(prefix="capforge-demo-"))
rng = random.Random(0)

# a tiny dataset: 8 fake images with short raw captions
(root / "images").mkdir()
lines = []
for i in range(8):
    ref = f"images/{i:02d}.jpg"
    (root / ref).write_bytes(rng.randbytes(32))
    lines.append(json.dumps({"image": ref, "caption": f"a photo of thing number {i}."}))
(root / "ann.jsonl").write_text("\n".join(lines) + "\n")

# four mock captioners, each with its own verbal habits
with CaptionerPool(reference_mock_pool(seed=0)) as pool:
    manifest, report = run_pipeline(
        root / "ann.jsonl", root / "run", root / "enhanced.jsonl", pool,
        ShearPolicy(max_tokens=30), shard_count=3, workers=2,
    )

print(manifest.entry_count, "entries, pool", manifest.pool_ids)
print(report.captions_generated, "captions generated")

first = next(ds.read_enhanced(root / "enhanced.jsonl"))
print("raw:", first.caption)
for g in first.generated:
    print(f"  {g.model_id:10s} ({g.raw_token_count:2d} tokens raw) {g.text}")
