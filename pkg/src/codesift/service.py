"""FastAPI service exposing the request/response-shaped pipeline operations.

Endpoints wrap verification, program execution, prompt rendering, and
pass@k evaluation for multi-client use. The service can also serve a
scripted mock model behind the standard ``/completions`` contract, which
gives the HTTP sampler a real counterparty in tests and demos.

Long-running batch work (acquisition, expert iteration) stays in the CLI;
it is checkpointed local-file processing and gains nothing from an HTTP hop.
"""

from __future__ import annotations

import threading
from typing import Optional, Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__, evaluator, mwp_lang
from .dataset import DatasetError, SpecExample
from .seeds import substream_rng
from .teacher_client import (
    CoinFlip,
    FewShotExample,
    FewShotPrompt,
    FixedTexts,
    GeneratorSpec,
    as_generator_spec,
    render_prompt,
)
from .verifier import Tolerance, verify


class VerifyRequest(BaseModel):
    program: str
    answer: float
    atol: float = 1e-6
    rtol: float = 1e-6


class VerifyResponse(BaseModel):
    status: str
    produced_value: Optional[float] = None
    detail: str = ""


class ExecuteRequest(BaseModel):
    program: str


class ExecuteResponse(BaseModel):
    ok: bool
    value: Optional[float] = None
    error_category: Optional[str] = None
    detail: str = ""


class PromptExample(BaseModel):
    question: str
    program: str


class RenderPromptRequest(BaseModel):
    examples: list[PromptExample] = Field(min_length=1)
    question: str


class RenderPromptResponse(BaseModel):
    prompt: str


class PassAtKRequest(BaseModel):
    n: int
    c: int
    k: int


class PassAtKResponse(BaseModel):
    value: float


class DatasetRecord(BaseModel):
    id: str
    question: str
    answer: float


class EvaluateRequest(BaseModel):
    dataset: list[DatasetRecord]
    samples: dict[str, list[str]]
    k: list[int] = Field(default_factory=lambda: [1])
    estimator: str = "empirical"
    decode_mode: str = "unknown"
    atol: float = 1e-6
    rtol: float = 1e-6


class ExampleResult(BaseModel):
    example_id: str
    n_samples: int
    n_correct: int
    outcomes: list[str]


class EvaluateResponse(BaseModel):
    k_values: list[int]
    pass_at_k: dict[str, float]
    estimator: str
    decode_mode: str
    per_example: list[ExampleResult]


class CompletionRequest(BaseModel):
    model: str
    prompt: str
    temperature: float = 0.6
    n: int = 1
    max_tokens: int = 256
    stop: list[str] = Field(default_factory=list)


class CompletionChoice(BaseModel):
    text: str
    index: int


class CompletionResponse(BaseModel):
    model: str
    choices: list[CompletionChoice]


class ScriptedCompleter:
    """Backs ``/completions`` with a deterministic script keyed by question.

    The question is the last ``# ``-comment line of the prompt. Fixed-text
    specs cycle per request; coin-flip specs draw from a stream seeded by
    (seed, question, running counter), so repeated identical requests still
    vary while a fixed request sequence replays exactly.
    """

    def __init__(
        self,
        script: dict[str, Union[GeneratorSpec, dict, list]],
        seed: int = 0,
        default: Optional[Union[GeneratorSpec, dict, list]] = None,
    ):
        self.script = {q: as_generator_spec(s) for q, s in script.items()}
        self.default = as_generator_spec(default) if default is not None else None
        self.seed = seed
        self._lock = threading.Lock()
        self._served: dict[str, int] = {}

    @staticmethod
    def question_of(prompt_text: str) -> str:
        comments = [
            line[2:] for line in prompt_text.splitlines() if line.startswith("# ")
        ]
        return comments[-1] if comments else ""

    def complete(self, prompt_text: str, n: int) -> list[str]:
        question = self.question_of(prompt_text)
        spec = self.script.get(question, self.default)
        if spec is None:
            raise KeyError(f"no script for question {question!r}")
        with self._lock:
            start = self._served.get(question, 0)
            self._served[question] = start + n
        texts = []
        for i in range(n):
            slot = start + i
            if isinstance(spec, FixedTexts):
                texts.append(spec.texts[slot % len(spec.texts)])
            else:
                assert isinstance(spec, CoinFlip)
                rng = substream_rng(self.seed, "served", question, str(slot))
                texts.append(
                    spec.correct_program
                    if rng.random() < spec.correct_probability
                    else spec.decoy_program
                )
        return texts


def create_app(completer: Optional[ScriptedCompleter] = None) -> FastAPI:
    app = FastAPI(title="codesift", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/verify", response_model=VerifyResponse)
    def verify_program(request: VerifyRequest) -> VerifyResponse:
        outcome = verify(
            request.program,
            request.answer,
            Tolerance(atol=request.atol, rtol=request.rtol),
        )
        return VerifyResponse(
            status=outcome.status.value,
            produced_value=outcome.produced_value,
            detail=outcome.detail,
        )

    @app.post("/execute", response_model=ExecuteResponse)
    def execute_program(request: ExecuteRequest) -> ExecuteResponse:
        try:
            value = mwp_lang.evaluate(mwp_lang.parse_program(request.program))
        except mwp_lang.ParseError as exc:
            return ExecuteResponse(ok=False, error_category="parse_error", detail=str(exc))
        except mwp_lang.EvalError as exc:
            return ExecuteResponse(
                ok=False, error_category=type(exc).__name__, detail=str(exc)
            )
        return ExecuteResponse(ok=True, value=value)

    @app.post("/prompt/render", response_model=RenderPromptResponse)
    def render(request: RenderPromptRequest) -> RenderPromptResponse:
        try:
            prompt = FewShotPrompt(
                tuple(FewShotExample(e.question, e.program) for e in request.examples)
            )
            rendered = render_prompt(prompt, request.question)
        except (mwp_lang.ParseError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return RenderPromptResponse(prompt=rendered)

    @app.post("/metrics/pass-at-k", response_model=PassAtKResponse)
    def pass_at_k(request: PassAtKRequest) -> PassAtKResponse:
        try:
            value = evaluator.pass_at_k_unbiased(request.n, request.c, request.k)
        except evaluator.DomainError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return PassAtKResponse(value=value)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(request: EvaluateRequest) -> EvaluateResponse:
        try:
            dataset = [
                SpecExample(id=r.id, question=r.question, answer=r.answer)
                for r in request.dataset
            ]
        except DatasetError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        try:
            results = evaluator.evaluate_samples(
                request.samples, dataset, Tolerance(atol=request.atol, rtol=request.rtol)
            )
            report = evaluator.build_report(
                results, request.k, request.estimator, request.decode_mode
            )
        except evaluator.EvaluatorError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return EvaluateResponse(
            k_values=list(report.k_values),
            pass_at_k={str(k): v for k, v in report.pass_at_k.items()},
            estimator=report.estimator,
            decode_mode=report.decode_mode,
            per_example=[
                ExampleResult(
                    example_id=r.example_id,
                    n_samples=r.n_samples,
                    n_correct=r.n_correct,
                    outcomes=list(r.outcomes),
                )
                for r in report.per_example
            ],
        )

    @app.post("/completions", response_model=CompletionResponse)
    def completions(request: CompletionRequest) -> CompletionResponse:
        if completer is None:
            raise HTTPException(
                status_code=503, detail="no completion backend configured"
            )
        try:
            texts = completer.complete(request.prompt, request.n)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return CompletionResponse(
            model=request.model,
            choices=[CompletionChoice(text=t, index=i) for i, t in enumerate(texts)],
        )

    return app
