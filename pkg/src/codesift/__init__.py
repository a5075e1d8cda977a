"""codesift: sample candidate programs, sift them by execution, evaluate with pass@k.

The pipeline: ingest question/answer datasets, draw candidate programs from
a black-box completion endpoint, keep the ones whose execution reproduces
the expected answer, assemble them into knowledge sets for fine-tuning,
and score any model's samples with pass@k. An expert-iteration controller
drives the self-training baseline through the same pieces.
"""

__version__ = "0.1.0"

from .dataset import DatasetSplit, SpecExample, parse_record, split_dataset
from .evaluator import (
    EvalReport,
    ExampleEvalResult,
    evaluate_samples,
    pass_at_k_empirical,
    pass_at_k_unbiased,
)
from .knowledge import (
    CoverageReport,
    KnowledgeEntry,
    KnowledgeSet,
    acquire_knowledge,
    coverage,
    load_knowledge_set,
    save_knowledge_set,
)
from .mwp_lang import Program, evaluate, parse_program
from .teacher_client import (
    FewShotExample,
    FewShotPrompt,
    HttpTeacher,
    MockTeacher,
    SamplingConfig,
    TeacherEndpoint,
    mock_teacher,
    render_prompt,
)
from .verifier import Tolerance, VerificationOutcome, is_correct, verify

__all__ = [
    "__version__",
    "CoverageReport",
    "DatasetSplit",
    "EvalReport",
    "ExampleEvalResult",
    "FewShotExample",
    "FewShotPrompt",
    "HttpTeacher",
    "KnowledgeEntry",
    "KnowledgeSet",
    "MockTeacher",
    "Program",
    "SamplingConfig",
    "SpecExample",
    "TeacherEndpoint",
    "Tolerance",
    "VerificationOutcome",
    "acquire_knowledge",
    "coverage",
    "evaluate",
    "evaluate_samples",
    "is_correct",
    "load_knowledge_set",
    "mock_teacher",
    "parse_program",
    "parse_record",
    "pass_at_k_empirical",
    "pass_at_k_unbiased",
    "render_prompt",
    "save_knowledge_set",
    "split_dataset",
    "verify",
]
