import json
import random

import httpx
import numpy as np
import pytest

from capforge import dataset as ds
from capforge.dataset import AnnotationEntry, EnhancedEntry, GeneratedCaption
from capforge.errors import DimensionMismatch, EmptyCorpus, ProviderUnavailable
from capforge.gateway import CaptionerEndpoint, CaptionerPool, GenerationConfig, MOCK_STYLES, reference_mock_pool
from capforge.orchestrator import run_pipeline
from capforge.shear import ShearPolicy
from capforge.stats import (
    STOPWORDS,
    DeterministicHasher,
    HttpEmbeddingService,
    LengthStats,
    WordCounts,
    cosine_rows,
    export_wordcloud_counts,
    length_stats,
    read_wordcloud_counts,
    similarity_distribution,
    word_frequency,
)

from conftest import make_fixture
from oracles import brute_force_cosine, hand_tokens


def raw(*captions):
    return [AnnotationEntry(f"i{k}", f"{k}.jpg", c) for k, c in enumerate(captions)]


def test_length_stats_raw():
    s = length_stats(raw("a b", "a b c d"))
    src = s.sources["raw"]
    assert src.count == 2 and src.mean == 3.0
    assert sum(src.histogram) == 2


def test_length_stats_empty():
    with pytest.raises(EmptyCorpus):
        length_stats([])


def test_length_histogram_clamps_long_captions():
    s = length_stats(raw(" ".join(["w"] * 250)))
    assert s.sources["raw"].histogram[-1] == 1
    assert s.sources["raw"].max == 250


def test_length_mean_matches_oracle_on_large_corpus():
    rng = random.Random(3)
    words = ["cat", "sat", ".", ",", "it's", "mat"]
    caps = [" ".join(rng.choice(words) for _ in range(rng.randint(1, 60))) for _ in range(10_000)]
    s = length_stats(raw(*caps))
    oracle = sum(len(hand_tokens(c)) for c in caps) / len(caps)
    assert abs(s.sources["raw"].mean - oracle) < 1e-9
    assert sum(s.sources["raw"].histogram) == 10_000


def test_length_contrast_raw_vs_long_model(tmp_path):
    # raw captions are 15 tokens; one mock model writes 90 tokens before shearing
    ann = make_fixture(tmp_path / "data", n=20)
    members = [
        (CaptionerEndpoint("minigpt4", mock_target_tokens=90), GenerationConfig(max_new_tokens=90, seed=0)),
        (CaptionerEndpoint("otter"), GenerationConfig(seed=0)),
    ]
    with CaptionerPool(members) as pool:
        run_pipeline(ann, tmp_path / "run", tmp_path / "out.jsonl", pool, ShearPolicy(max_tokens=30))
    s = length_stats(ds.read_enhanced(tmp_path / "out.jsonl"))
    assert s.sources["raw"].mean == 15.0
    assert s.pre_shear["minigpt4"].mean == 90.0
    assert s.sources["minigpt4"].mean <= 30


def test_word_frequency_with_stopwords():
    t = word_frequency(raw("the cat", "the cat and dog"), top_n=10, stopwords={"the", "and"})
    assert t.sources["raw"] == [("cat", 2), ("dog", 1)]


def test_word_frequency_no_stopwords():
    assert word_frequency(raw("a a b"), top_n=5, stopwords=()).sources["raw"] == [("a", 2), ("b", 1)]


def test_word_frequency_lowercases_and_ties_lexicographic():
    t = word_frequency(raw("Zebra apple", "zebra Apple mango"), top_n=5, stopwords=())
    assert t.sources["raw"] == [("apple", 2), ("zebra", 2), ("mango", 1)]


def test_word_frequency_lexicon_filter():
    t = word_frequency(raw("red dog runs", "dog sleeps"), top_n=5, stopwords=(), lexicon={"dog"})
    assert t.sources["raw"] == [("dog", 2)]


def test_top_n_validation():
    with pytest.raises(ValueError):
        word_frequency(raw("a"), top_n=0)


def _enhanced_corpus(n, seed=0):
    rng = random.Random(seed)
    vocab = ["dog", "cat", "tree", "the", "a", "blue", "sky", "runs", "."]
    out = []
    for i in range(n):
        gens = tuple(
            GeneratedCaption(" ".join(rng.choice(vocab) for _ in range(rng.randint(1, 20))), m, True, rng.randint(1, 90))
            for m in ("m1", "m2")
        )
        out.append(EnhancedEntry(f"i{i}", f"{i}.jpg", " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 20))), gens))
    return out


@pytest.mark.parametrize("parts", [1, 2, 7])
def test_partition_invariance(parts):
    entries = _enhanced_corpus(300)
    single_len = length_stats(entries).to_dict()
    single_words = word_frequency(entries, top_n=100).to_dict()
    bounds = np.linspace(0, len(entries), parts + 1).astype(int)
    lengths, words = LengthStats(), WordCounts()
    for a, b in zip(bounds[:-1], bounds[1:]):
        lengths.merge(LengthStats().update(entries[a:b]))
        words.merge(WordCounts().update(entries[a:b]))
    assert lengths.to_dict() == single_len
    assert words.table(100).to_dict() == single_words


def test_style_words_dominate_each_model(tmp_path):
    ann = make_fixture(tmp_path / "data", n=60)
    with CaptionerPool(reference_mock_pool(seed=0)) as pool:
        run_pipeline(ann, tmp_path / "run", tmp_path / "out.jsonl", pool, ShearPolicy(max_tokens=30))
    entries = list(ds.read_enhanced(tmp_path / "out.jsonl"))
    table = word_frequency(entries, top_n=5)
    for model_id, (style, _) in MOCK_STYLES.items():
        assert {w for w, _ in table.sources[model_id]} == set(style)
        # every sheared caption keeps its first sentence, so each style word occurs once per image
        assert all(n == len(entries) for _, n in table.sources[model_id])
    # the style words are not stopwords, and no two models share one
    all_style = [w for style, _ in MOCK_STYLES.values() for w in style]
    assert len(set(all_style)) == len(all_style)
    assert not set(all_style) & STOPWORDS


def test_wordcloud_export_round_trip(tmp_path):
    t = word_frequency(raw("cat cat dog", "bird"), top_n=10, stopwords=())
    (path,) = export_wordcloud_counts(t, tmp_path / "wc")
    assert path.read_text().splitlines() == ["word,count", "cat,2", "bird,1", "dog,1"]
    assert read_wordcloud_counts(path) == t.sources["raw"]


def test_wordcloud_export_stable(tmp_path):
    t = word_frequency(raw("b a c"), top_n=10, stopwords=())
    p1 = export_wordcloud_counts(t, tmp_path / "x")[0].read_bytes()
    p2 = export_wordcloud_counts(t, tmp_path / "y")[0].read_bytes()
    assert p1 == p2 == b"word,count\na,1\nb,1\nc,1\n"


class FixedProvider:
    kind = "fixed"

    def __init__(self, img, txt):
        self.img, self.txt = np.asarray(img, float), np.asarray(txt, float)
        self.dimension = self.img.shape[1]

    def embed_images(self, images):
        return self.img[: len(images)]

    def embed_texts(self, texts):
        return self.txt[: len(texts)]


def test_similarity_identical_vectors():
    v = np.random.default_rng(0).standard_normal((3, 8))
    d = similarity_distribution(raw("a", "b", "c"), FixedProvider(v, v), lambda e: b"x")
    assert np.allclose(d.samples, 1.0) and abs(d.mean - 1.0) < 1e-12


def test_similarity_orthogonal_vectors():
    img = np.eye(4)[:2]
    txt = np.eye(4)[2:]
    d = similarity_distribution(raw("a", "b"), FixedProvider(img, txt), lambda e: b"x")
    assert np.allclose(d.samples, 0.0)


def test_similarity_dimension_mismatch():
    p = FixedProvider(np.ones((2, 4)), np.ones((2, 4)))
    p.dimension = 5
    with pytest.raises(DimensionMismatch):
        similarity_distribution(raw("a", "b"), p, lambda e: b"x")


def test_hasher_similarity_matches_brute_force(tmp_path):
    rng = random.Random(5)
    vocab = ["dog", "beach", "red", "ball", "sky", "tree", "man", "hat"]
    entries = [
        EnhancedEntry(f"i{i}", f"{i}.jpg", " ".join(rng.choices(vocab, k=6)),
                      (GeneratedCaption(" ".join(rng.choices(vocab, k=5)), "m", True, 5),))
        for i in range(100)
    ]
    images = {e.image_id: f"image-{e.image_id}".encode() for e in entries}
    hasher = DeterministicHasher(dimension=32, seed=1)
    for pairing, pick in (("raw_only", lambda e: [e.caption]), ("all_generated", lambda e: [g.text for g in e.generated])):
        dist = similarity_distribution(entries, hasher, lambda e: images[e.image_id], pairing,
                                       export_path=tmp_path / f"{pairing}.jsonl")
        sims = []
        for e in entries:
            iv = hasher.embed_images([images[e.image_id]])[0].tolist()
            for text in pick(e):
                sims.append(brute_force_cosine(iv, hasher.embed_texts([text])[0].tolist()))
        assert abs(dist.mean - sum(sims) / len(sims)) < 1e-9
        assert sum(dist.histogram) == len(sims) == dist.samples.size
        assert np.all(np.abs(dist.samples) <= 1 + 1e-9)
    recs = [json.loads(line) for line in (tmp_path / "raw_only.jsonl").read_text().splitlines()]
    assert {r["kind"] for r in recs} == {"image", "text"}
    assert len(recs) == 200 and len(recs[0]["vector"]) == 32


def test_cosine_bounds_random():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((500, 5)) * 1e6
    b = a * 3.0
    s = cosine_rows(a, b)
    assert np.all(s <= 1.0) and np.all(s >= -1.0)
    assert np.allclose(s, 1.0)
    assert cosine_rows(np.zeros((1, 3)), np.ones((1, 3)))[0] == 0.0


def test_http_embedding_service():
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append(body)
        return httpx.Response(200, json={"embeddings": [[1.0, 0.0, 0.0]] * len(body["inputs"])})

    svc = HttpEmbeddingService("http://emb.test/embed", 3, transport=httpx.MockTransport(handler))
    out = svc.embed_texts(["a", "b"])
    assert out.shape == (2, 3)
    assert seen[0] == {"inputs": ["a", "b"]}
    img = svc.embed_images([b"\x00\x01"])
    assert seen[1]["inputs"][0].startswith("data:")
    assert img.shape == (1, 3)


def test_http_embedding_errors():
    bad_dim = HttpEmbeddingService("http://e.test", 4, transport=httpx.MockTransport(lambda r: httpx.Response(200, json=[[1.0, 2.0]])))
    with pytest.raises(DimensionMismatch):
        bad_dim.embed_texts(["a"])
    down = HttpEmbeddingService("http://e.test", 4, transport=httpx.MockTransport(lambda r: httpx.Response(503)))
    with pytest.raises(ProviderUnavailable):
        down.embed_texts(["a"])
