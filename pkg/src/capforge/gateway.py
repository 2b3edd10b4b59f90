"""Caption endpoints: an OpenAI-compatible chat client and a deterministic mock.

Every endpoint in a pool is queried with the same single-turn prompt and the
image attached as a base64 data URI. Failures are retried per ``RetryPolicy``;
the number of concurrent requests per endpoint is capped by a semaphore that
is shared by all workers using the same :class:`CaptionerPool`.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import httpx

from .errors import CapforgeError
from .shear import count_tokens, truncate_to_tokens

log = logging.getLogger(__name__)

DEFAULT_PROMPT = "Describe the <image> in English:"


class Protocol(str, enum.Enum):
    OPENAI_COMPAT = "openai_compat"
    MOCK = "mock"


class GatewayError(CapforgeError):
    kind = "GatewayError"
    retryable = False

    def __init__(self, message: str = "", attempts: int = 0):
        super().__init__(message or self.kind)
        self.attempts = attempts


class CaptionTimeout(GatewayError):
    kind = "Timeout"
    retryable = True


class RateLimited(GatewayError):
    kind = "RateLimited"
    retryable = True

    def __init__(self, message: str = "", attempts: int = 0, retry_after: float | None = None):
        super().__init__(message, attempts)
        self.retry_after = retry_after


class HttpStatus(GatewayError):
    kind = "HttpStatus"

    def __init__(self, code: int, retryable: bool, message: str = "", attempts: int = 0):
        super().__init__(message or f"HTTP {code}", attempts)
        self.code = code
        self.retryable = retryable


class TransportFailure(GatewayError):
    kind = "TransportFailure"
    retryable = True


class MalformedResponse(GatewayError):
    kind = "MalformedResponse"


class EmptyCaption(GatewayError):
    kind = "EmptyCaption"
    retryable = True


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: float = 500.0
    backoff_jitter_fraction: float = 0.1
    retryable_statuses: frozenset[int] = frozenset({429, 500, 502, 503, 504})

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        object.__setattr__(self, "retryable_statuses", frozenset(self.retryable_statuses))

    def delay(self, attempt: int, rng: random.Random) -> float:
        """Seconds to wait after failed attempt number ``attempt`` (1-based)."""
        base = self.backoff_base_ms / 1000.0 * 2 ** (attempt - 1)
        jitter = self.backoff_jitter_fraction * (2 * rng.random() - 1)
        return max(0.0, base * (1 + jitter))


@dataclass(frozen=True)
class GenerationConfig:
    prompt_template: str = DEFAULT_PROMPT
    max_new_tokens: int = 30
    num_beams: int = 1
    do_sample: bool = False
    temperature: float | None = None
    top_p: float | None = None
    min_new_tokens: int | None = None
    repetition_penalty: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.num_beams < 1:
            raise ValueError("num_beams must be >= 1")


# Per-model settings used for the four captioners in the reference setup.
# num_beams / min_new_tokens / repetition_penalty travel as metadata only.
REFERENCE_GENERATION_CONFIGS: dict[str, GenerationConfig] = {
    "minigpt4": GenerationConfig(
        max_new_tokens=30, num_beams=1, do_sample=True, top_p=0.3, temperature=1.0, repetition_penalty=1.0
    ),
    "otter": GenerationConfig(max_new_tokens=30, num_beams=1),
    "qwen-vl": GenerationConfig(max_new_tokens=30, num_beams=1, do_sample=False, min_new_tokens=8),
    "llava-1.5": GenerationConfig(max_new_tokens=30, num_beams=1, do_sample=True, temperature=0.2),
}


@dataclass(frozen=True)
class CaptionerEndpoint:
    model_id: str
    base_url: str = ""
    auth_env_var: str = ""
    protocol: Protocol = Protocol.MOCK
    timeout_ms: float = 60_000
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    # mock only: length (in tokens) the mock aims for before the token cap
    mock_target_tokens: int = 24

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.protocol is Protocol.OPENAI_COMPAT and not self.base_url:
            raise ValueError(f"endpoint {self.model_id!r} needs a base_url")


@dataclass(frozen=True)
class CaptionResult:
    text: str
    attempts: int


def build_request_body(model_id: str, genconfig: GenerationConfig, image_bytes: bytes, image_mime: str) -> dict:
    data_uri = f"data:{image_mime};base64,{base64.b64encode(image_bytes).decode('ascii')}"
    body = {
        "model": model_id,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": genconfig.prompt_template},
                    {"type": "image_url", "image_url": {"url": data_uri}},
                ],
            }
        ],
        "max_tokens": genconfig.max_new_tokens,
    }
    if genconfig.do_sample:
        if genconfig.temperature is not None:
            body["temperature"] = genconfig.temperature
        if genconfig.top_p is not None:
            body["top_p"] = genconfig.top_p
    else:
        body["temperature"] = 0.0
    if genconfig.seed is not None:
        body["seed"] = genconfig.seed
    return body


def parse_response(payload) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse("response has no choices[0].message.content") from None
    if isinstance(content, list):
        # some servers return content parts even for plain text
        try:
            content = "".join(p["text"] for p in content if p.get("type") == "text")
        except (KeyError, TypeError, AttributeError):
            raise MalformedResponse("unrecognized content parts") from None
    if content is None:
        content = ""
    if not isinstance(content, str):
        raise MalformedResponse(f"content is {type(content).__name__}, expected str")
    return content.strip()


def _retry_after(response: httpx.Response) -> float | None:
    value = response.headers.get("retry-after")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# mock backend

CONTENT_NOUNS = (
    "dog", "cat", "horse", "bicycle", "car", "boat", "tree", "flower", "mountain", "river",
    "beach", "street", "building", "bridge", "table", "chair", "window", "kitchen", "garden", "field",
    "sky", "cloud", "lake", "forest", "road", "train", "bird", "child", "woman", "man",
    "ball", "book", "cup", "plate", "lamp", "sofa", "fence", "wall", "door", "bench",
    "umbrella", "hat", "shirt", "guitar", "phone", "laptop", "clock", "boat", "kite", "pizza",
)
CONTENT_NOUNS = tuple(dict.fromkeys(CONTENT_NOUNS))

# Each template uses its model's five style words exactly once; {0} {1} {2}
# are content nouns.
MOCK_STYLES: dict[str, tuple[tuple[str, ...], str]] = {
    "minigpt4": (
        ("image", "shows", "scene", "features", "overall"),
        "The image shows a {0} and a {1}, and the scene features a {2} overall.",
    ),
    "otter": (
        ("picture", "depicts", "captured", "moment", "setting"),
        "This picture depicts a {0} captured in the moment with a {1} and a {2} in the setting.",
    ),
    "qwen-vl": (
        ("photo", "displays", "visible", "background", "foreground"),
        "The photo displays a {0} visible in the foreground with a {1} and a {2} in the background.",
    ),
    "llava-1.5": (
        ("located", "positioned", "surrounded", "various", "situated"),
        "A {0} is located by a {1}, positioned and surrounded by various {2} situated there.",
    ),
}

_STYLE_BANK = (
    "vivid", "displayed", "presented", "arranged", "illustrated", "rendered", "composition", "framed",
    "highlighted", "portrayed", "observed", "featured", "atmosphere", "landscape", "detailed", "remarkable",
)

# Filler sentences only add stopwords and content nouns, so they never compete
# with the style vocabulary in word-frequency tables.
_FILLERS = (
    "There is a {0} and a {1} here.",
    "It is by the {0} with a {1} on it.",
    "Some {0} and {1} are there too.",
    "A {0} is over the {1} too.",
)


def mock_style(model_id: str) -> tuple[tuple[str, ...], str]:
    """Style words and first-sentence template for a mock model id."""
    if model_id in MOCK_STYLES:
        return MOCK_STYLES[model_id]
    h = int.from_bytes(hashlib.sha256(model_id.encode("utf-8")).digest()[:8], "big")
    rng = random.Random(h)
    words = tuple(rng.sample(_STYLE_BANK, 5))
    template = f"A {words[0]} {words[1]} {{0}} {words[2]} with {{1}}, {words[3]} {words[4]} {{2}}."
    return words, template


def image_digest(image_bytes: bytes) -> str:
    return hashlib.sha256(image_bytes).hexdigest()


def mock_caption(model_id: str, seed: int, digest: str, target_tokens: int, max_new_tokens: int) -> str:
    """Deterministic caption as a pure function of (model_id, seed, digest).

    The text is extended with filler sentences until it reaches
    ``target_tokens`` and then cut to ``max_new_tokens`` tokens, which is how
    a real model stopping at its token budget behaves.
    """
    key = hashlib.sha256(f"{model_id}\x00{seed}\x00{digest}".encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(key[:8], "big"))
    _, template = mock_style(model_id)
    parts = [template.format(*rng.sample(CONTENT_NOUNS, 3))]
    n = count_tokens(parts[0])
    while n < target_tokens:
        s = rng.choice(_FILLERS).format(*rng.sample(CONTENT_NOUNS, 2))
        parts.append(s)
        n += count_tokens(s)
    return truncate_to_tokens(" ".join(parts), max_new_tokens).strip()


# ---------------------------------------------------------------------------
# client


class Captioner:
    """One endpoint with its in-flight limit and retry loop."""

    def __init__(
        self,
        endpoint: CaptionerEndpoint,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self._sem = threading.BoundedSemaphore(endpoint.max_in_flight)
        self._sleep = sleep
        self._rng = random.Random()
        self._client: httpx.Client | None = None
        if endpoint.protocol is Protocol.OPENAI_COMPAT:
            self._client = httpx.Client(
                base_url=endpoint.base_url.rstrip("/"),
                timeout=endpoint.timeout_ms / 1000.0,
                transport=transport,
            )

    def close(self) -> None:
        if self._client is not None:
            self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _headers(self) -> dict[str, str]:
        env = self.endpoint.auth_env_var
        token = os.environ.get(env) if env else None
        return {"Authorization": f"Bearer {token}"} if token else {}

    def _attempt(self, genconfig: GenerationConfig, image_bytes: bytes, image_mime: str) -> str:
        ep = self.endpoint
        if ep.protocol is Protocol.MOCK:
            return mock_caption(
                ep.model_id, genconfig.seed or 0, image_digest(image_bytes), ep.mock_target_tokens, genconfig.max_new_tokens
            )
        body = build_request_body(ep.model_id, genconfig, image_bytes, image_mime)
        try:
            resp = self._client.post("/v1/chat/completions", json=body, headers=self._headers())
        except httpx.TimeoutException as exc:
            raise CaptionTimeout(f"{ep.model_id}: {exc!r}") from None
        except httpx.TransportError as exc:
            raise TransportFailure(f"{ep.model_id}: {exc!r}") from None
        if resp.status_code == 429:
            raise RateLimited(f"{ep.model_id}: rate limited", retry_after=_retry_after(resp))
        if resp.status_code >= 400:
            raise HttpStatus(resp.status_code, resp.status_code in ep.retry.retryable_statuses)
        try:
            payload = resp.json()
        except ValueError:
            raise MalformedResponse(f"{ep.model_id}: body is not JSON") from None
        return parse_response(payload)

    def caption(self, genconfig: GenerationConfig, image_bytes: bytes, image_mime: str = "image/jpeg") -> CaptionResult:
        if not image_bytes:
            raise ValueError("image_bytes must be non-empty")
        policy = self.endpoint.retry
        attempt = 0
        while True:
            attempt += 1
            try:
                with self._sem:
                    text = self._attempt(genconfig, image_bytes, image_mime)
                if not text:
                    raise EmptyCaption(f"{self.endpoint.model_id}: empty caption")
                return CaptionResult(text, attempt)
            except GatewayError as exc:
                exc.attempts = attempt
                if not exc.retryable or attempt >= policy.max_attempts:
                    raise
                delay = policy.delay(attempt, self._rng)
                if isinstance(exc, RateLimited) and exc.retry_after is not None:
                    delay = exc.retry_after
                log.debug("%s attempt %d failed (%s), retrying in %.2fs", self.endpoint.model_id, attempt, exc.kind, delay)
                self._sleep(delay)


def caption_image(
    endpoint: CaptionerEndpoint,
    genconfig: GenerationConfig,
    image_bytes: bytes,
    image_mime: str = "image/jpeg",
    **kwargs,
) -> str:
    with Captioner(endpoint, **kwargs) as c:
        return c.caption(genconfig, image_bytes, image_mime).text


class CaptionerPool:
    """Ordered pool of (endpoint, generation config) pairs."""

    def __init__(
        self,
        members: Sequence[tuple[CaptionerEndpoint, GenerationConfig]],
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not members:
            raise ValueError("pool must be non-empty")
        ids = [ep.model_id for ep, _ in members]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate model_id in pool: {ids}")
        self.members = [(Captioner(ep, transport=transport, sleep=sleep), gc) for ep, gc in members]
        self._executor = ThreadPoolExecutor(max_workers=max(1, sum(ep.max_in_flight for ep, _ in members)))

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(c.endpoint.model_id for c, _ in self.members)

    def __len__(self) -> int:
        return len(self.members)

    def caption_multiview(self, image_bytes: bytes, image_mime: str = "image/jpeg") -> list[CaptionResult | GatewayError]:
        """One result per pool member in pool order; failures occupy their slot."""

        def run(member):
            captioner, gc = member
            try:
                return captioner.caption(gc, image_bytes, image_mime)
            except GatewayError as exc:
                return exc

        if len(self.members) == 1:
            return [run(self.members[0])]
        return list(self._executor.map(run, self.members))

    def close(self) -> None:
        self._executor.shutdown(wait=True)
        for c, _ in self.members:
            c.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def caption_multiview(
    pool: Sequence[tuple[CaptionerEndpoint, GenerationConfig]],
    image_bytes: bytes,
    image_mime: str = "image/jpeg",
    **kwargs,
) -> list[CaptionResult | GatewayError]:
    with CaptionerPool(pool, **kwargs) as p:
        return p.caption_multiview(image_bytes, image_mime)


def reference_mock_pool(seed: int | None = 0, target_tokens: int = 24) -> list[tuple[CaptionerEndpoint, GenerationConfig]]:
    """Four mock endpoints named after the reference captioners."""
    return [
        (CaptionerEndpoint(model_id=mid, protocol=Protocol.MOCK, mock_target_tokens=target_tokens), replace(gc, seed=seed))
        for mid, gc in REFERENCE_GENERATION_CONFIGS.items()
    ]
