"""
What do the captioners say?
===========================

Length, word frequency and image-text similarity over an enhanced
dataset. Each captioner's pet words float straight to the top.
"""

import json
import random
import tempfile
from pathlib import Path

from capforge import dataset as ds
from capforge.gateway import CaptionerPool, reference_mock_pool
from capforge.orchestrator import run_pipeline
from capforge.shear import ShearPolicy
from capforge.stats import DeterministicHasher, length_stats, similarity_distribution, word_frequency

root = Path(tempfile.mkdtemp(prefix="capforge-stats-"))
rng = random.Random(1)
(root / "images").mkdir()
words = ["a", "dog", "cat", "on", "the", "red", "sofa", "in", "park", "sunny"]
with (root / "ann.jsonl").open("w") as fh:
    for i in range(100):
        ref = f"images/{i:03d}.jpg"
        (root / ref).write_bytes(rng.randbytes(48))
        fh.write(json.dumps({"image": ref, "caption": " ".join(rng.choices(words, k=9)) + "."}) + "\n")

with CaptionerPool(reference_mock_pool(seed=0, target_tokens=60)) as pool:
    run_pipeline(root / "ann.jsonl", root / "run", root / "enhanced.jsonl", pool, ShearPolicy(max_tokens=30))
entries = list(ds.read_enhanced(root / "enhanced.jsonl"))

# mean length per source, before and after shearing
lengths = length_stats(entries)
for source, acc in lengths.sources.items():
    pre = lengths.pre_shear.get(source)
    print(f"{source:10s} mean {acc.mean:5.1f}" + (f"  (pre-shear {pre.mean:.1f})" if pre else ""))

# top words, stopwords removed
table = word_frequency(entries, top_n=5)
for source, top in table.sources.items():
    print(source, top)

# cosine similarity with a hashing embedder (swap in a real service for real numbers)
emb = DeterministicHasher(dimension=64, seed=0)
dist = similarity_distribution(entries, emb, lambda e: (root / e.image_ref).read_bytes(), pairing="all_generated")
print(f"similarity mean {dist.mean:.3f} over {dist.samples.size} pairs")
