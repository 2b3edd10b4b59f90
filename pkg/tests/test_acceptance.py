"""Acceptance suite: one test per headline criterion.

Each test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary (see conftest.py). Run on its own with

    pytest tests/test_acceptance.py
"""

import contextlib
import json
import random
import threading
import time

import numpy as np
from scipy.stats import binomtest

from capforge import dataset as ds
from capforge.errors import InconsistentPool
from capforge.gateway import MOCK_STYLES, CaptionerPool, reference_mock_pool
from capforge.orchestrator import merge_shards, plan_shards, process_shard, run_pipeline
from capforge.shear import Fallback, ShearPolicy, shear_caption
from capforge.stats import DeterministicHasher, LengthStats, WordCounts, length_stats, similarity_distribution, word_frequency
from capforge.toyclip import (
    SyntheticCorpusConfig,
    TrainConfig,
    ViewPolicy,
    contrastive_loss,
    eval_retrieval,
    make_corpus,
    report_from_similarity,
    train,
)

from conftest import make_fixture
from oracles import brute_force_cosine, brute_force_report, hand_tokens, shortest_clause, softmax_ce_loss

RESULTS: list[str] = []
_lock = threading.Lock()


@contextlib.contextmanager
def criterion(name):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        with _lock:
            RESULTS.append(f"FAIL  {name}  ({time.perf_counter() - start:.2f}s)")
        raise
    with _lock:
        RESULTS.append(f"PASS  {name}  ({time.perf_counter() - start:.2f}s)")


def unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ---------------------------------------------------------------------------


def _oracle_truncate(text, t):
    """Prefix of text ending after its t-th hand token."""
    pos = 0
    for tok in hand_tokens(text)[:t]:
        pos = text.index(tok, pos) + len(tok)
    return text[:pos]


def _random_caption(rng):
    alphabet = ["a", "cat", "sits", "on", "mat", "it's", "x", "dog", "ran", "blue", "sky"]
    seps = [" ", " ", " ", "  ", "\t", "\n"]
    puncts = [".", ",", "!", "?", ";", ". ", "..."]
    parts = []
    for _ in range(rng.randint(0, 25)):
        r = rng.random()
        if r < 0.7:
            parts.append(rng.choice(alphabet))
        elif r < 0.9:
            parts.append(rng.choice(puncts))
        else:
            parts.append(rng.choice(["é", "日本", "ß", "42"]))
        parts.append(rng.choice(seps) if rng.random() < 0.8 else "")
    return "".join(parts)


LITERALS = [
    ("A cat sits on a mat. It also wears a", 30, "A cat sits on a mat."),
    ("Hi. A long second sentence follows here.", 30, "Hi. A long second sentence follows here."),
    ("a cat.", 30, "a cat."),
]


def test_shear_rule_suite():
    with criterion("shear rule suite: 1000 strings x policy grid, literal cases, < 5 s"):
        start = time.perf_counter()
        for text, t, expected in LITERALS:
            assert shear_caption(text, ShearPolicy(max_tokens=t)).text == expected
        ninety = " ".join(["The image shows a dog running on a sandy beach near the blue sea."] * 6)
        assert len(hand_tokens(ninety)) == 90
        assert len(hand_tokens(shear_caption(ninety, ShearPolicy(max_tokens=30)).text)) <= 30
        assert shear_caption("no terminator at all", ShearPolicy()).used_fallback

        rng = random.Random(2024)
        texts = [_random_caption(rng) for _ in range(1000)]
        grid = [
            ShearPolicy(max_tokens=t, min_clause_chars=m, clause_terminators=frozenset(term))
            for t in (1, 5, 15, 30)
            for m in (0, 5, 10)
            for term in (".", ".!?")
        ]
        for policy in grid:
            for text in texts:
                out = shear_caption(text, policy).text
                assert len(hand_tokens(out)) <= policy.max_tokens
                clause = shortest_clause(_oracle_truncate(text, policy.max_tokens), policy.min_clause_chars,
                                         set(policy.clause_terminators))
                if clause is not None:
                    assert out == clause
                    assert out[-1] in policy.clause_terminators and len(out.strip()) > policy.min_clause_chars
                assert shear_caption(out, policy).text == out
                assert " ".join(text.split()).startswith(" ".join(out.split()))
        assert time.perf_counter() - start < 5.0


def _numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def _rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def test_gradient_check():
    with criterion("gradient check: 100 instances, max relative error < 1e-4, < 10 s"):
        start = time.perf_counter()
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            n, d = int(rng.integers(2, 9)), int(rng.integers(2, 17))
            a, b = unit_rows(rng.standard_normal((n, d))), unit_rows(rng.standard_normal((n, d)))
            tau = float(rng.uniform(0.05, 1.0))
            out = contrastive_loss(a, b, tau)
            worst = max(worst, _rel_err(out.grad_img, _numeric_grad(lambda: contrastive_loss(a, b, tau).loss, a)))
            worst = max(worst, _rel_err(out.grad_txt, _numeric_grad(lambda: contrastive_loss(a, b, tau).loss, b)))
        print(f"worst relative error {worst:.2e}")
        assert worst < 1e-4
        assert time.perf_counter() - start < 10.0


def test_loss_oracle_values():
    with criterion("loss oracles: N=1 is 0, uniform N=4 is ln 4, 2x2 identity matches hand softmax"):
        v = unit_rows(np.array([[0.2, 0.5, -0.1]]))
        assert contrastive_loss(v, v).loss == 0.0
        same = np.tile([[0.0, 1.0]], (4, 1))
        assert abs(contrastive_loss(same, same).loss - np.log(4)) < 1e-9
        eye = np.eye(2)
        hand = -np.log(np.e / (np.e + 1.0))
        assert abs(softmax_ce_loss(eye.tolist(), 1.0) - hand) < 1e-12
        assert abs(contrastive_loss(eye, eye, 1.0).loss - hand) < 1e-9


def test_retrieval_metric_oracle():
    with criterion("retrieval oracle: 50 matrices equal brute-force full sort, R@1 <= R@5 <= R@10"):
        rng = np.random.default_rng(11)
        for trial in range(50):
            m = int(rng.integers(1, 80))
            sim = rng.standard_normal((m, m))
            if trial % 4 == 0:
                sim = np.round(sim, 1)
            for direction, mat in (("i2t", sim), ("t2i", sim.T)):
                r = report_from_similarity(sim, direction)
                o = brute_force_report(mat.tolist())
                assert (r.r1, r.r5, r.r10, r.mdr) == (o["r1"], o["r5"], o["r10"], o["mdr"])
                assert r.r1 <= r.r5 <= r.r10


def test_multiview_benefit():
    with criterion("multi-view benefit: MV4 > MV1 > raw-only over 10 paired seeds, sign test p < 0.05, < 5 min"):
        start = time.perf_counter()
        r1 = {0: [], 1: [], 4: []}
        for seed in range(10):
            corpus = make_corpus(SyntheticCorpusConfig(seed=seed))
            for views in r1:
                params = train(corpus.train, TrainConfig(seed=seed), ViewPolicy(views)).params
                r1[views].append(eval_retrieval(params, corpus.eval, "i2t").r1)
        means = {k: float(np.mean(v)) for k, v in r1.items()}
        print(f"mean I2T R@1: raw-only {means[0]:.1f}, multi:1 {means[1]:.1f}, multi:4 {means[4]:.1f}")
        assert means[4] > means[1] > means[0]
        for hi, lo in ((4, 1), (1, 0)):
            diffs = [a - b for a, b in zip(r1[hi], r1[lo]) if a != b]
            wins = sum(d > 0 for d in diffs)
            p = binomtest(wins, len(diffs), 0.5, alternative="greater").pvalue
            print(f"multi:{hi} vs {'multi:' + str(lo) if lo else 'raw-only'}: {wins}/{len(diffs)} wins, p={p:.2g}")
            assert p < 0.05
        assert time.perf_counter() - start < 300


class _Crash(Exception):
    pass


class _CrashingPool:
    def __init__(self, pool, after):
        self.pool, self.left, self.model_ids = pool, after, pool.model_ids

    def caption_multiview(self, image_bytes, mime):
        if self.left == 0:
            raise _Crash()
        self.left -= 1
        return self.pool.caption_multiview(image_bytes, mime)


def test_pipeline_determinism_and_resume(tmp_path):
    with criterion("pipeline determinism and resume: byte-identical runs, crash+resume equals clean, < 30 s"):
        start = time.perf_counter()
        ann = make_fixture(tmp_path / "data", n=12)
        policy = ShearPolicy(max_tokens=30)
        outs = []
        for name in ("a", "b"):
            with CaptionerPool(reference_mock_pool(seed=0)) as pool:
                run_pipeline(ann, tmp_path / name, tmp_path / name / "enhanced.jsonl", pool, policy,
                             shard_count=3, created_at="2024-01-01T00:00:00Z")
            out = tmp_path / name / "enhanced.jsonl"
            outs.append(out.read_bytes() + ds.manifest_path(out).read_bytes())
        assert outs[0] == outs[1]

        run = tmp_path / "crashy"
        with CaptionerPool(reference_mock_pool(seed=0)) as pool:
            try:
                run_pipeline(ann, run, run / "enhanced.jsonl", _CrashingPool(pool, 6), policy, shard_count=3,
                             created_at="2024-01-01T00:00:00Z")
            except _Crash:
                pass
            else:
                raise AssertionError("crash was not injected")
            # a half-written record after the last checkpoint
            with (run / "shard_1.jsonl").open("ab") as fh:
                fh.write(b'{"caption": "torn')
            run_pipeline(ann, run, run / "enhanced.jsonl", pool, policy, shard_count=3, resume=True,
                         created_at="2024-01-01T00:00:00Z")
        out = run / "enhanced.jsonl"
        assert out.read_bytes() + ds.manifest_path(out).read_bytes() == outs[0]
        assert time.perf_counter() - start < 30


def test_dataset_shape(tmp_path):
    with criterion("dataset shape: 1 raw + K generated per image, manifest matches lines, mixed policies rejected"):
        ann = make_fixture(tmp_path / "data", n=12, missing=(5,))
        members = reference_mock_pool(seed=0)
        with CaptionerPool(members) as pool:
            manifest, report = run_pipeline(ann, tmp_path / "run", tmp_path / "out.jsonl", pool, ShearPolicy(max_tokens=30),
                                            shard_count=2)
            raw = {a.image_id: a.caption for a in ds.read_annotations(ann)}
            entries = list(ds.read_enhanced(tmp_path / "out.jsonl"))
            assert len(entries) == 11
            for e in entries:
                assert len(e.captions()) == 1 + len(members)
                assert e.caption == raw[e.image_id]
                assert list(e.pool_ids) == [ep.model_id for ep, _ in members]
            assert manifest.entry_count == ds.count_lines(tmp_path / "out.jsonl") == ds.read_manifest(tmp_path / "out.jsonl").entry_count
            assert report.images_enhanced == 11 and report.dropped_lines == [6]

            mixed = tmp_path / "mixed"
            plan = plan_shards(ann, 2)
            process_shard(plan, 0, ann, mixed, pool, ShearPolicy(max_tokens=30))
            process_shard(plan, 1, ann, mixed, pool, ShearPolicy(max_tokens=20, fallback=Fallback.HARD_TRUNCATE))
        try:
            merge_shards(mixed, 2, tmp_path / "mixed.jsonl")
        except InconsistentPool:
            pass
        else:
            raise AssertionError("mixed shear policies were merged")
        assert not (tmp_path / "mixed.jsonl").exists()


def _stats_corpus(n, seed=0):
    from capforge.dataset import EnhancedEntry, GeneratedCaption

    rng = random.Random(seed)
    vocab = ["dog", "cat", "tree", "the", "a", "blue", "sky", "runs", ".", ",", "man's"]
    out = []
    for i in range(n):
        gens = tuple(GeneratedCaption(" ".join(rng.choices(vocab, k=rng.randint(1, 25))), m, True, rng.randint(1, 90))
                     for m in ("m1", "m2", "m3"))
        out.append(EnhancedEntry(f"i{i}", f"{i}.jpg", " ".join(rng.choices(vocab, k=rng.randint(1, 25))), gens))
    return out


def test_stats_partition_invariance(tmp_path):
    with criterion("stats partition invariance for 1/2/7 partitions, similarity mean within 1e-9 of brute force"):
        entries = _stats_corpus(500)
        expected_len = length_stats(entries).to_dict()
        expected_words = word_frequency(entries, top_n=200).to_dict()
        for parts in (1, 2, 7):
            bounds = np.linspace(0, len(entries), parts + 1).astype(int)
            lengths, words = LengthStats(), WordCounts()
            for a, b in zip(bounds[:-1], bounds[1:]):
                lengths.merge(LengthStats().update(entries[a:b]))
                words.merge(WordCounts().update(entries[a:b]))
            assert json.dumps(lengths.to_dict(), sort_keys=True) == json.dumps(expected_len, sort_keys=True)
            assert words.table(200).to_dict() == expected_words

        hasher = DeterministicHasher(dimension=48, seed=5)
        image = {e.image_id: f"pixels-{e.image_id}".encode() for e in entries}
        dist = similarity_distribution(entries, hasher, lambda e: image[e.image_id], "all_generated")
        sims = []
        for e in entries:
            iv = hasher.embed_images([image[e.image_id]])[0].tolist()
            sims += [brute_force_cosine(iv, hasher.embed_texts([g.text])[0].tolist()) for g in e.generated]
        assert abs(dist.mean - sum(sims) / len(sims)) < 1e-9


def test_mock_style_bias(tmp_path):
    with criterion("mock style bias: each model's top-5 words are its injected style vocabulary (500 images)"):
        ann = make_fixture(tmp_path / "data", n=500)
        with CaptionerPool(reference_mock_pool(seed=0)) as pool:
            run_pipeline(ann, tmp_path / "run", tmp_path / "out.jsonl", pool, ShearPolicy(max_tokens=30), shard_count=4,
                         workers=4)
        entries = list(ds.read_enhanced(tmp_path / "out.jsonl"))
        assert len(entries) == 500
        table = word_frequency(entries, top_n=5)
        for model_id, (style, _template) in MOCK_STYLES.items():
            # every template carries each style word once, and the kept first sentence is the template
            expected = sorted((w, 500) for w in style)
            assert table.sources[model_id] == expected, (model_id, table.sources[model_id])


if __name__ == "__main__":
    import sys

    import pytest

    sys.exit(pytest.main([__file__, "-q"]))
