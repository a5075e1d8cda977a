"""Few-shot prompt assembly and completion sampling from a black-box model.

Two samplers share one interface: :class:`HttpTeacher` speaks the de-facto
standard text-completion HTTP protocol (``POST {base_url}/completions``),
and :class:`MockTeacher` is a fully deterministic scripted double for tests
and offline runs. Both return completions indexed by sample slot and
truncated at the first stop sequence.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import httpx

from . import mwp_lang
from .seeds import substream_rng

logger = logging.getLogger(__name__)

DEFAULT_STOP_SEQUENCES = ("\n\n", "\n#")


class TeacherError(Exception):
    pass


class EndpointUnreachable(TeacherError):
    pass


class AuthFailure(TeacherError):
    pass


class MalformedResponse(TeacherError):
    pass


class UnknownExampleId(TeacherError):
    pass


# --------------------------------------------------------------------------
# Prompt types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FewShotExample:
    """One seed pair: a question and a known-good program for it."""

    question: str
    program: str

    def __post_init__(self):
        mwp_lang.parse_program(self.program)  # must be in-language
        object.__setattr__(self, "program", self.program.rstrip("\n"))


@dataclass(frozen=True)
class FewShotPrompt:
    examples: tuple[FewShotExample, ...]

    def __post_init__(self):
        if not self.examples:
            raise ValueError("a few-shot prompt needs at least one example")


def render_prompt(prompt: FewShotPrompt, question: str) -> str:
    """Render seed examples plus the new question into completion-prompt text.

    Each block is ``# {question}\\n{program}`` with exactly one blank line
    between blocks; the new question ends the prompt as a bare comment line,
    leaving the model to complete the program.
    """
    if not question:
        raise ValueError("question must be non-empty")
    blocks = [f"# {ex.question}\n{ex.program}\n\n" for ex in prompt.examples]
    return "".join(blocks) + f"# {question}\n"


def render_zero_shot(question: str) -> str:
    """The bare question block, for models fine-tuned on this format."""
    if not question:
        raise ValueError("question must be non-empty")
    return f"# {question}\n"


# --------------------------------------------------------------------------
# Sampling configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingConfig:
    """How many completions to draw and how.

    Greedy decoding is temperature-0 single-sample mode, so ``greedy=True``
    requires ``num_samples == 1``; stochastic sampling requires a strictly
    positive temperature.
    """

    temperature: float = 0.6
    num_samples: int = 100
    max_tokens: int = 256
    stop_sequences: tuple[str, ...] = DEFAULT_STOP_SEQUENCES
    greedy: bool = False

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.greedy and self.num_samples != 1:
            raise ValueError("greedy decoding samples exactly once")
        if not self.greedy and self.temperature <= 0:
            raise ValueError("temperature must be > 0 unless greedy")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def effective_temperature(self) -> float:
        return 0.0 if self.greedy else self.temperature


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 5
    base_backoff: float = 0.5
    backoff_multiplier: float = 2.0


@dataclass(frozen=True)
class TeacherEndpoint:
    base_url: str
    model_id: str
    auth_token_env: str = "TEACHER_API_KEY"
    max_in_flight: int = 4
    retry_policy: RetryPolicy = field(default_factory=RetryPolicy)
    max_samples_per_request: int = 20
    timeout: float = 30.0

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_samples_per_request < 1:
            raise ValueError("max_samples_per_request must be >= 1")


def truncate_at_stop(text: str, stop_sequences: Sequence[str]) -> str:
    """Cut the text at the earliest occurrence of any stop sequence."""
    cut = len(text)
    for stop in stop_sequences:
        idx = text.find(stop)
        if idx != -1:
            cut = min(cut, idx)
    return text[:cut]


class CompletionSampler(Protocol):
    """Anything that can draw completions for one example."""

    model_id: str

    def sample(
        self, example_id: str, prompt_text: str, config: SamplingConfig
    ) -> list[str]: ...


# --------------------------------------------------------------------------
# HTTP sampler
# --------------------------------------------------------------------------

_RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class HttpTeacher:
    """Samples completions over HTTP with retries and bounded concurrency.

    Requests carry ``{model, prompt, temperature, n, max_tokens, stop}`` and
    the response must hold ``choices[].text``. Transient failures (HTTP 429,
    5xx, timeouts) are retried with exponential backoff; at most
    ``max_in_flight`` requests are outstanding at a time. The auth token is
    read from the environment variable named by the endpoint, never stored.
    """

    def __init__(
        self,
        endpoint: TeacherEndpoint,
        transport: Optional[httpx.BaseTransport] = None,
        audit_path: Optional[Union[str, Path]] = None,
    ):
        self.endpoint = endpoint
        self.model_id = endpoint.model_id
        self._client = httpx.Client(
            transport=transport, timeout=endpoint.timeout
        )
        # Client-wide bound, so concurrent sample() calls share the budget.
        self._in_flight = threading.BoundedSemaphore(endpoint.max_in_flight)
        self._audit_path = Path(audit_path) if audit_path else None
        self._audit_lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "HttpTeacher":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def sample(
        self, example_id: str, prompt_text: str, config: SamplingConfig
    ) -> list[str]:
        """Return exactly ``config.num_samples`` completions, in slot order.

        The request is split at the endpoint's per-request sample cap and the
        chunks run concurrently; results are reassembled by slot, so arrival
        order never shows through.
        """
        chunks: list[tuple[int, int]] = []
        start = 0
        while start < config.num_samples:
            size = min(self.endpoint.max_samples_per_request, config.num_samples - start)
            chunks.append((start, size))
            start += size
        results: list[Optional[list[str]]] = [None] * len(chunks)
        if len(chunks) == 1:
            results[0] = self._request(prompt_text, config, chunks[0][1], example_id)
        else:
            with ThreadPoolExecutor(max_workers=self.endpoint.max_in_flight) as pool:
                futures = {
                    pool.submit(self._request, prompt_text, config, size, example_id): i
                    for i, (_, size) in enumerate(chunks)
                }
                for future, i in futures.items():
                    results[i] = future.result()
        completions: list[str] = []
        for texts in results:
            assert texts is not None
            completions.extend(texts)
        return [truncate_at_stop(t, config.stop_sequences) for t in completions]

    # -- internals ---------------------------------------------------------

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.endpoint.auth_token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _request(
        self, prompt_text: str, config: SamplingConfig, n: int, example_id: str
    ) -> list[str]:
        body = {
            "model": self.endpoint.model_id,
            "prompt": prompt_text,
            "temperature": config.effective_temperature,
            "n": n,
            "max_tokens": config.max_tokens,
            "stop": list(config.stop_sequences),
        }
        url = self.endpoint.base_url.rstrip("/") + "/completions"
        policy = self.endpoint.retry_policy
        last_error = "no attempt made"
        for attempt in range(policy.max_retries + 1):
            if attempt > 0:
                time.sleep(policy.base_backoff * policy.backoff_multiplier ** (attempt - 1))
            self._audit("request", example_id=example_id, url=url, body=body, attempt=attempt)
            try:
                with self._in_flight:
                    response = self._client.post(url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.warning("attempt %d failed for %s: %s", attempt, url, last_error)
                continue
            if response.status_code in (401, 403):
                self._audit("error", example_id=example_id, status=response.status_code)
                raise AuthFailure(
                    f"endpoint rejected credentials from ${self.endpoint.auth_token_env} "
                    f"(HTTP {response.status_code})"
                )
            if response.status_code in _RETRYABLE_STATUSES:
                last_error = f"HTTP {response.status_code}"
                logger.warning("attempt %d got %s from %s", attempt, last_error, url)
                continue
            if response.status_code != 200:
                self._audit("error", example_id=example_id, status=response.status_code)
                raise MalformedResponse(
                    f"unexpected HTTP {response.status_code}: {response.text[:200]}"
                )
            texts = self._parse_choices(response, n)
            self._audit("response", example_id=example_id, texts=texts, attempt=attempt)
            return texts
        self._audit("error", example_id=example_id, detail=last_error)
        raise EndpointUnreachable(
            f"{url} unreachable after {policy.max_retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _parse_choices(response: httpx.Response, n: int) -> list[str]:
        try:
            data = response.json()
        except (json.JSONDecodeError, ValueError):
            raise MalformedResponse("response body is not JSON") from None
        choices = data.get("choices")
        if not isinstance(choices, list):
            raise MalformedResponse("response has no 'choices' list")
        texts = []
        for choice in choices:
            if not isinstance(choice, dict) or not isinstance(choice.get("text"), str):
                raise MalformedResponse("choice entries must carry a 'text' string")
            texts.append(choice["text"])
        if len(texts) != n:
            raise MalformedResponse(f"requested {n} completions, got {len(texts)}")
        return texts

    def _audit(self, event: str, **payload) -> None:
        if self._audit_path is None:
            return
        record = {"event": event, "ts": time.time(), **payload}
        with self._audit_lock:
            with open(self._audit_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def sample_completions(
    endpoint: TeacherEndpoint,
    rendered_prompt: str,
    config: SamplingConfig,
    transport: Optional[httpx.BaseTransport] = None,
) -> list[str]:
    """One-shot convenience wrapper around :class:`HttpTeacher`."""
    with HttpTeacher(endpoint, transport=transport) as teacher:
        return teacher.sample("adhoc", rendered_prompt, config)


# --------------------------------------------------------------------------
# Deterministic mock
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedTexts:
    """Scripted completions, cycled by sample slot."""

    texts: tuple[str, ...]

    def __post_init__(self):
        if not self.texts:
            raise ValueError("FixedTexts needs at least one text")


@dataclass(frozen=True)
class CoinFlip:
    """Emit the correct program with probability p, otherwise the decoy."""

    correct_program: str
    correct_probability: float
    decoy_program: str

    def __post_init__(self):
        if not 0.0 <= self.correct_probability <= 1.0:
            raise ValueError("correct_probability must be in [0, 1]")


GeneratorSpec = Union[FixedTexts, CoinFlip]


def as_generator_spec(obj: Union[GeneratorSpec, dict, Sequence[str]]) -> GeneratorSpec:
    """Coerce config-file shapes (a list of texts or a coin-flip object)."""
    if isinstance(obj, (FixedTexts, CoinFlip)):
        return obj
    if isinstance(obj, dict):
        if "texts" in obj:
            return FixedTexts(tuple(obj["texts"]))
        return CoinFlip(
            correct_program=obj["correct_program"],
            correct_probability=float(obj["correct_probability"]),
            decoy_program=obj["decoy_program"],
        )
    if isinstance(obj, (list, tuple)):
        return FixedTexts(tuple(obj))
    raise TypeError(f"cannot interpret {type(obj).__name__} as a generator spec")


class MockTeacher:
    """Deterministic scripted sampler keyed by example id.

    Every sample is a pure function of ``(seed, example_id, slot)``, so call
    order, concurrency, and request batching can never perturb the output.
    """

    def __init__(
        self,
        script: dict[str, Union[GeneratorSpec, dict, Sequence[str]]],
        seed: int,
        default: Optional[Union[GeneratorSpec, dict, Sequence[str]]] = None,
        model_id: str = "mock-teacher",
    ):
        self.script = {key: as_generator_spec(spec) for key, spec in script.items()}
        self.default = as_generator_spec(default) if default is not None else None
        self.seed = seed
        self.model_id = model_id

    def sample(
        self, example_id: str, prompt_text: str, config: SamplingConfig
    ) -> list[str]:
        spec = self.script.get(example_id, self.default)
        if spec is None:
            raise UnknownExampleId(f"no script for example {example_id!r}")
        texts = [
            self._one(spec, example_id, slot) for slot in range(config.num_samples)
        ]
        return [truncate_at_stop(t, config.stop_sequences) for t in texts]

    def _one(self, spec: GeneratorSpec, example_id: str, slot: int) -> str:
        if isinstance(spec, FixedTexts):
            return spec.texts[slot % len(spec.texts)]
        rng = substream_rng(self.seed, "mock", example_id, str(slot))
        if rng.random() < spec.correct_probability:
            return spec.correct_program
        return spec.decoy_program


def mock_teacher(
    script: dict[str, Union[GeneratorSpec, dict, Sequence[str]]],
    seed: int,
    default: Optional[Union[GeneratorSpec, dict, Sequence[str]]] = None,
    model_id: str = "mock-teacher",
) -> MockTeacher:
    """Build the scripted test double; see :class:`MockTeacher`."""
    return MockTeacher(script, seed, default=default, model_id=model_id)
