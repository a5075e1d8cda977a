"""Command-line entry point for reproducible pipeline runs.

One JSON config document drives a run; flags override config keys and
config keys override defaults. All randomness flows from the single
top-level seed through named substreams, so reruns with the same config
byte-reproduce their outputs against deterministic endpoints.

Exit codes: 0 success, 1 usage, 2 invalid config, 3 endpoint failure,
4 invariant violation in inputs. ``verify`` exits 0 only for a correct
program (1 otherwise).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shlex
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, evaluator, expert_iter, knowledge
from .dataset import (
    DatasetError,
    load_dataset_jsonl,
    load_raw_jsonl,
    save_dataset_jsonl,
    split_dataset,
)
from .seeds import substream_seed
from .service import ScriptedCompleter, create_app
from .teacher_client import (
    FewShotExample,
    FewShotPrompt,
    HttpTeacher,
    MockTeacher,
    RetryPolicy,
    SamplingConfig,
    TeacherEndpoint,
    TeacherError,
    EndpointUnreachable,
    AuthFailure,
)
from .verifier import Tolerance, is_correct, verify
from . import mwp_lang

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_ENDPOINT = 3
EXIT_INVARIANT = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, message)


# --------------------------------------------------------------------------
# Config plumbing
# --------------------------------------------------------------------------

def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_CONFIG, f"config file not found: {path}")
    try:
        config = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"config is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise CliError(EXIT_CONFIG, "config must be a JSON object")
    return config


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _require_path(path_str: Optional[str], what: str) -> Path:
    if not path_str:
        raise CliError(EXIT_CONFIG, f"config does not name a {what}")
    path = Path(path_str)
    if not path.exists():
        raise CliError(EXIT_CONFIG, f"{what} not found: {path}")
    return path


def _load_prompt(path: Path) -> FewShotPrompt:
    examples = []
    try:
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            examples.append(FewShotExample(record["question"], record["program"]))
    except (json.JSONDecodeError, KeyError, mwp_lang.ParseError) as exc:
        raise CliError(EXIT_CONFIG, f"bad prompt file {path}: {exc}")
    if not examples:
        raise CliError(EXIT_CONFIG, f"prompt file {path} holds no examples")
    return FewShotPrompt(tuple(examples))


def _sampling_config(config: dict) -> SamplingConfig:
    section = config.get("sampling", {})
    try:
        return SamplingConfig(
            temperature=float(section.get("temperature", 0.6)),
            num_samples=int(section.get("num_samples", 100)),
            max_tokens=int(section.get("max_tokens", 256)),
            stop_sequences=tuple(section.get("stop_sequences", ["\n\n", "\n#"])),
            greedy=bool(section.get("greedy", False)),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad sampling settings: {exc}")


def _tolerance(config: dict) -> Tolerance:
    section = config.get("tolerance", {})
    return Tolerance(
        atol=float(section.get("atol", 1e-6)), rtol=float(section.get("rtol", 1e-6))
    )


def _build_teacher(config: dict, seed: int, audit_path: Optional[Path]):
    section = config.get("teacher")
    if not isinstance(section, dict) or "type" not in section:
        raise CliError(EXIT_CONFIG, "config needs a teacher object with a 'type'")
    kind = section["type"]
    if kind == "mock":
        return MockTeacher(
            script=section.get("script", {}),
            seed=int(section.get("seed", substream_seed(seed, "mock-teacher"))),
            default=section.get("default"),
            model_id=section.get("model_id", "mock-teacher"),
        )
    if kind == "http":
        try:
            retry = section.get("retry", {})
            endpoint = TeacherEndpoint(
                base_url=section["base_url"],
                model_id=section["model_id"],
                auth_token_env=section.get("auth_token_env", "TEACHER_API_KEY"),
                max_in_flight=int(section.get("max_in_flight", 4)),
                retry_policy=RetryPolicy(
                    max_retries=int(retry.get("max_retries", 5)),
                    base_backoff=float(retry.get("base_backoff", 0.5)),
                    backoff_multiplier=float(retry.get("backoff_multiplier", 2.0)),
                ),
                max_samples_per_request=int(section.get("max_samples_per_request", 20)),
                timeout=float(section.get("timeout", 30.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, f"bad teacher endpoint settings: {exc}")
        return HttpTeacher(endpoint, audit_path=audit_path)
    raise CliError(EXIT_CONFIG, f"unknown teacher type {kind!r}")


def _write_run_meta(out_dir: Path, command: str, config: dict, seed: int) -> None:
    meta = {
        "command": command,
        "config_hash": _config_hash(config),
        "seed": seed,
        "version": __version__,
    }
    (out_dir / "run-meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _split_for_run(examples, validation_size: int, seed: int):
    try:
        return split_dataset(examples, validation_size, substream_seed(seed, "split"))
    except DatasetError as exc:
        raise CliError(EXIT_CONFIG, str(exc))


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    in_path = _require_path(args.infile, "input file")
    examples = load_raw_jsonl(in_path)
    if not examples:
        raise CliError(EXIT_INVARIANT, f"no parsable records in {in_path}")
    save_dataset_jsonl(examples, args.out)
    split = _split_for_run(examples, args.validation_size, args.seed)
    manifest = {
        "seed": args.seed,
        "validation_size": args.validation_size,
        "train_ids": [ex.id for ex in split.train],
        "validation_ids": [ex.id for ex in split.validation],
    }
    manifest_path = Path(str(args.out) + ".split.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(
        f"ingested {len(examples)} examples -> {args.out} "
        f"(train {len(split.train)}, validation {len(split.validation)})"
    )
    return EXIT_OK


def cmd_acquire(args) -> int:
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    out_dir = Path(args.out_dir or config.get("out_dir") or "acquisition-run")
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = _require_path(config.get("dataset"), "dataset file")
    try:
        examples = load_dataset_jsonl(dataset_path)
    except DatasetError as exc:
        raise CliError(EXIT_INVARIANT, f"bad dataset: {exc}")
    include_validation = args.include_validation or bool(config.get("include_validation"))
    validation_size = int(config.get("validation_size", 500))
    if include_validation or validation_size == 0:
        targets = examples
    else:
        if validation_size > len(examples):
            raise CliError(
                EXIT_CONFIG,
                f"validation_size {validation_size} exceeds dataset size {len(examples)}",
            )
        targets = list(_split_for_run(examples, validation_size, seed).train)
    prompt = _load_prompt(_require_path(config.get("prompt"), "prompt file"))
    sampling = _sampling_config(config)
    tolerance = _tolerance(config)
    audit_path = out_dir / "teacher-audit.jsonl" if config.get("audit_log") else None
    teacher = _build_teacher(config, seed, audit_path)
    checkpoint_path = out_dir / "checkpoint.jsonl"
    try:
        ks, report = knowledge.acquire_knowledge(
            targets, teacher, prompt, sampling, seed, tolerance, checkpoint_path
        )
    except (EndpointUnreachable, AuthFailure) as exc:
        raise CliError(EXIT_ENDPOINT, str(exc))
    except TeacherError as exc:
        raise CliError(EXIT_ENDPOINT, str(exc))
    except knowledge.CheckpointMismatch as exc:
        raise CliError(EXIT_INVARIANT, str(exc))
    except knowledge.KnowledgeError as exc:
        raise CliError(EXIT_INVARIANT, str(exc))
    knowledge.save_knowledge_set(ks, out_dir / "knowledge.jsonl")
    _write_coverage(report, out_dir / "coverage.json")
    if args.keep_all_correct:
        _write_all_correct(targets, teacher, prompt, sampling, seed, tolerance,
                           checkpoint_path, ks.meta, out_dir / "all-correct.jsonl")
    _write_run_meta(out_dir, "acquire", config, seed)
    print(
        f"knowledge set: {len(ks)} entries; coverage {report.fraction:.4f} "
        f"({report.covered}/{report.total}) -> {out_dir}"
    )
    return EXIT_OK


def _write_coverage(report: knowledge.CoverageReport, path: Path) -> None:
    payload = {
        "covered": report.covered,
        "total": report.total,
        "fraction": report.fraction,
        "per_example": {
            example_id: {"num_samples": cov.num_samples, "num_correct": cov.num_correct}
            for example_id, cov in sorted(report.per_example.items())
        },
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_all_correct(targets, teacher, prompt, sampling, seed, tolerance,
                       checkpoint_path, meta, path: Path) -> None:
    # The checkpoint already holds every completion, so this replays without
    # touching the endpoint again.
    checkpoint = knowledge.AcquisitionCheckpoint(checkpoint_path, meta)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "meta", "note": "all correct samples",
                             "teacher_id": meta.teacher_id}, sort_keys=True) + "\n")
        for acq in knowledge.iter_acquisition(
            targets, teacher, prompt, sampling, seed, tolerance, checkpoint
        ):
            for slot in acq.correct_slots:
                fh.write(json.dumps({
                    "type": "entry",
                    "example_id": acq.example.id,
                    "question": acq.example.question,
                    "program": acq.completions[slot],
                    "answer": acq.example.answer,
                    "teacher_id": meta.teacher_id,
                    "sample_index": slot,
                    "produced_value": acq.outcomes[slot].produced_value,
                }, ensure_ascii=False, sort_keys=True) + "\n")


def cmd_verify(args) -> int:
    if args.program == "-":
        source = sys.stdin.read()
    else:
        source = _require_path(args.program, "program file").read_text(encoding="utf-8")
    if args.server:
        import httpx

        response = httpx.post(
            args.server.rstrip("/") + "/verify",
            json={"program": source, "answer": args.answer,
                  "atol": args.atol, "rtol": args.rtol},
            timeout=30.0,
        )
        if response.status_code != 200:
            raise CliError(EXIT_ENDPOINT, f"server returned HTTP {response.status_code}")
        payload = response.json()
        print(json.dumps(payload, sort_keys=True))
        return EXIT_OK if payload.get("status") == "correct" else 1
    outcome = verify(source, args.answer, Tolerance(atol=args.atol, rtol=args.rtol))
    print(json.dumps({
        "status": outcome.status.value,
        "produced_value": outcome.produced_value,
        "detail": outcome.detail,
    }, sort_keys=True))
    return EXIT_OK if is_correct(outcome) else 1


def cmd_eval(args) -> int:
    samples_path = _require_path(args.samples, "samples file")
    dataset_path = _require_path(args.dataset, "dataset file")
    try:
        meta, samples = evaluator.load_sample_file(samples_path)
    except evaluator.SampleFileError as exc:
        raise CliError(EXIT_INVARIANT, str(exc))
    try:
        dataset = load_dataset_jsonl(dataset_path)
    except DatasetError as exc:
        raise CliError(EXIT_INVARIANT, f"bad dataset: {exc}")
    try:
        k_values = [int(k) for k in args.k.split(",") if k]
    except ValueError:
        raise CliError(EXIT_USAGE, f"bad --k list: {args.k!r}")
    if not k_values:
        raise CliError(EXIT_USAGE, "--k needs at least one value")
    tolerance = Tolerance(atol=args.atol, rtol=args.rtol)
    try:
        results = evaluator.evaluate_samples(samples, dataset, tolerance)
        report = evaluator.build_report(
            results, k_values, args.estimator, evaluator.decode_mode_label(meta)
        )
    except evaluator.EvaluatorError as exc:
        raise CliError(EXIT_INVARIANT, str(exc))
    text = evaluator.report_to_json(report)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_expert_iter(args) -> int:
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    out_dir = Path(args.out_dir or config.get("out_dir") or "ei-run")
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = _require_path(config.get("dataset"), "dataset file")
    try:
        examples = load_dataset_jsonl(dataset_path)
    except DatasetError as exc:
        raise CliError(EXIT_INVARIANT, f"bad dataset: {exc}")
    prompt = _load_prompt(_require_path(config.get("prompt"), "prompt file"))
    tolerance = _tolerance(config)
    section = config.get("expert_iteration", {})
    try:
        ei_config = expert_iter.EIConfig(
            samples_per_example=int(section.get("samples_per_example", 100)),
            temperature=float(section.get("temperature", 0.6)),
            per_iteration_epochs=int(section.get("per_iteration_epochs", 4)),
            per_iteration_lr=float(section.get("per_iteration_lr", 5e-5)),
            final_training=dict(section.get("final_training", {})),
            max_iterations=int(section.get("max_iterations", 50)),
            resume_from_previous=bool(section.get("resume_from_previous", False)),
            resample_covered=bool(section.get("resample_covered", False)),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad expert_iteration settings: {exc}")
    trainer_cmd = shlex.split(args.trainer)
    if not trainer_cmd:
        raise CliError(EXIT_USAGE, "--trainer must name an executable")
    student = config.get("student")
    if not isinstance(student, dict) or "type" not in student:
        raise CliError(EXIT_CONFIG, "config needs a student object with a 'type'")
    if student["type"] == "mock":
        sampler = MockTeacher(
            script=student.get("script", {}),
            seed=int(student.get("seed", substream_seed(seed, "mock-teacher"))),
            default=student.get("default"),
            model_id=student.get("model_id", "mock-student"),
        )
        factory = lambda model_ref: sampler  # noqa: E731 - frozen across checkpoints
    elif student["type"] == "batch":
        factory = expert_iter.BatchStudentFactory(
            trainer_cmd, out_dir / "generate", examples, seed
        )
    elif student["type"] == "http":
        factory = expert_iter.HttpStudentFactory(student["base_url"])
    else:
        raise CliError(EXIT_CONFIG, f"unknown student type {student['type']!r}")
    trainer = expert_iter.ProcessTrainer(trainer_cmd, out_dir / "training")
    try:
        final_ref, state = expert_iter.run_expert_iteration(
            examples, prompt, trainer, factory, ei_config, seed, tolerance
        )
    except expert_iter.TrainerFailure as exc:
        raise CliError(EXIT_ENDPOINT, f"trainer failed: {exc}")
    except expert_iter.MaxIterationsExceeded as exc:
        knowledge.save_knowledge_set(exc.state.knowledge_set, out_dir / "knowledge.jsonl")
        raise CliError(EXIT_ENDPOINT, str(exc))
    except TeacherError as exc:
        raise CliError(EXIT_ENDPOINT, str(exc))
    knowledge.save_knowledge_set(state.knowledge_set, out_dir / "knowledge.jsonl")
    history = [
        {"iteration": h.iteration, "knowledge_size": h.knowledge_size,
         "new_entries": h.new_entries}
        for h in state.history
    ]
    (out_dir / "history.json").write_text(
        json.dumps({"history": history, "final_model": final_ref,
                    "iterations": state.iteration}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _write_run_meta(out_dir, "expert-iter", config, seed)
    print(
        f"stopped after iteration {state.iteration} with |K|={len(state.knowledge_set)}; "
        f"final model: {final_ref}"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    ks_path = _require_path(args.knowledge, "knowledge-set file")
    try:
        ks = knowledge.load_knowledge_set(ks_path)
    except knowledge.InvariantViolation as exc:
        raise CliError(EXIT_INVARIANT, str(exc))
    except knowledge.KnowledgeError as exc:
        raise CliError(EXIT_INVARIANT, str(exc))
    lines = [
        f"knowledge set      {ks_path}",
        f"entries            {len(ks)}",
        f"teacher            {ks.meta.teacher_id}",
        f"temperature        {ks.meta.temperature}",
        f"samples/example    {ks.meta.num_samples}",
        f"seed               {ks.meta.seed}",
        f"dataset fingerprint {ks.meta.dataset_fingerprint}",
    ]
    if ks.entries:
        sizes = sorted(len(e.program.splitlines()) for e in ks.entries)
        lines.append(f"program lines      min {sizes[0]} / median {sizes[len(sizes) // 2]} / max {sizes[-1]}")
    if args.coverage:
        payload = json.loads(Path(args.coverage).read_text(encoding="utf-8"))
        lines.append(
            f"coverage           {payload['fraction']:.4f} "
            f"({payload['covered']}/{payload['total']})"
        )
    print("\n".join(lines))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    completer = None
    if args.mock_teacher:
        payload = json.loads(_require_path(args.mock_teacher, "mock script").read_text())
        completer = ScriptedCompleter(
            script=payload.get("script", {}),
            seed=int(payload.get("seed", 0)),
            default=payload.get("default"),
        )
    app = create_app(completer)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="codesift", description=__doc__)
    parser.add_argument("--version", action="version", version=f"codesift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert raw question/answer JSONL to the canonical dataset")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--validation-size", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("acquire", help="sample a teacher and build a knowledge set")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--include-validation", action="store_true")
    p.add_argument("--keep-all-correct", action="store_true",
                   help="also write every correct sample (analysis only)")
    p.set_defaults(func=cmd_acquire)

    p = sub.add_parser("verify", help="check one program against an expected answer")
    p.add_argument("--program", required=True, help="path to program text, or - for stdin")
    p.add_argument("--answer", type=float, required=True)
    p.add_argument("--atol", type=float, default=1e-6)
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--server", default=None, help="verify through a running service instead")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="compute pass@k over a sample file")
    p.add_argument("--samples", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", default="1", help="comma-separated k values, e.g. 1,100")
    p.add_argument("--estimator", choices=("empirical", "unbiased"), default="empirical")
    p.add_argument("--atol", type=float, default=1e-6)
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("expert-iter", help="run the expert-iteration baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--trainer", required=True, help="trainer executable")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_expert_iter)

    p = sub.add_parser("report", help="summarize a knowledge-set file")
    p.add_argument("--knowledge", required=True)
    p.add_argument("--coverage", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--mock-teacher", default=None,
                   help="JSON script backing /completions")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
