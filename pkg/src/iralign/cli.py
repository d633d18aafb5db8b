"""Command-line pipeline driver.

Subcommands cover the full workflow: generate paired synthetic corpora,
validate dumps and build a vocabulary, run the two training stages (plus the
jointly-trained baseline), scan contracts for vulnerabilities, and produce
probe / grid / ablation / few-shot / metrics reports.

Every run writes a `manifest.json` beside its outputs recording the resolved
configuration, the seed, and a content hash of every input file, so any
artifact can be regenerated byte-identically. Usage problems exit with
status 2, pipeline failures with status 1; both print a one-line JSON error
object to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import evaluation, synth, training
from .alignment import KernelConfig
from .encoders import PROFILES
from .ir import IrError, parse_ir_dump, validate_function
from .model import (
    TASKS,
    CorruptCheckpoint,
    ModelBundle,
    VocabHashMismatch,
    model_hash,
    read_checkpoint,
    write_checkpoint,
)
from .preprocess import EmptyCorpus, Vocabulary, corpus_vocabulary
from .synth import EquivalencePair, SynthSpec
from .training import TrainConfig

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_USAGE = 2

# Module exceptions that indicate a broken run rather than a broken invocation.
_PIPELINE_ERRORS = (
    IrError,
    EmptyCorpus,
    CorruptCheckpoint,
    VocabHashMismatch,
    synth.InvalidSpec,
    synth.NoInjectionSite,
    training.SingleClassDataset,
    training.FrozenViolation,
    training.MissingClassifier,
    training.EmptyContract,
    training.InsufficientShots,
    training.NonFiniteLoss,
    evaluation.UnknownCategory,
    evaluation.SingleLanguage,
    evaluation.TooFewSamples,
    evaluation.ZeroVector,
    ValueError,
    RuntimeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so all errors funnel through one reporter."""

    def error(self, message):
        raise UsageError(message)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path_text: str) -> Path:
    path = Path(path_text)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, inputs: Sequence[Path],
                    outputs: Sequence[str]) -> None:
    config = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func",) and v is not None
    }
    manifest = {
        "subcommand": args.subcommand,
        "config": config,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": sorted(outputs),
        "format_version": 1,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"
    )


def _load_corpus(path: Path):
    return parse_ir_dump(path.read_text())


def _profile(args):
    return PROFILES[args.profile]


def _kernel(args) -> KernelConfig:
    base = KernelConfig()
    return KernelConfig(
        alpha=base.alpha if args.alpha is None else args.alpha,
        gamma=base.gamma if args.gamma is None else args.gamma,
    )


def _train_config(args, **overrides) -> TrainConfig:
    cfg = TrainConfig(seed=args.seed)
    fields = {}
    if getattr(args, "epochs", None) is not None:
        fields["max_epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        fields["batch_size"] = args.batch_size
    if getattr(args, "lam", None) is not None:
        fields["lam"] = args.lam
    fields.update(overrides)
    return dataclasses.replace(cfg, **fields) if fields else cfg


def _vocab_path(args) -> Path:
    if args.vocab is not None:
        return _require_file(args.vocab)
    sibling = _require_file(args.model).parent / "vocab.json"
    if not sibling.is_file():
        raise UsageError(
            f"no --vocab given and {sibling} does not exist"
        )
    return sibling


def _load_model(args, vocab: Vocabulary) -> ModelBundle:
    path = _require_file(args.model)
    return read_checkpoint(path, expect_vocab_hash=vocab.content_hash)


def _prepare(corpus, vocab, profile):
    return training.prepare_contracts(corpus, vocab, profile.max_len)


def _split_b(corpus, seed: int, eval_fraction: float = 0.3):
    """Deterministic align-train / held-out-eval split of the B corpus."""
    import numpy as np

    order = np.random.default_rng([seed, 97]).permutation(len(corpus))
    n_eval = max(1, int(round(eval_fraction * len(corpus))))
    eval_ids = set(int(i) for i in order[:n_eval])
    train = [c for i, c in enumerate(corpus) if i not in eval_ids]
    held = [c for i, c in enumerate(corpus) if i in eval_ids]
    return train, held


def _parse_shots(text: str) -> tuple[int, int]:
    try:
        safe_text, vuln_text = text.split(",")
        shots = (int(safe_text), int(vuln_text))
    except ValueError:
        raise UsageError(f"--shots wants 'S,V' (two integers), got {text!r}")
    if shots[0] < 0 or shots[1] < 0:
        raise UsageError("--shots counts must be nonnegative")
    return shots


def _scan_label(prob: float, task: str) -> str:
    return task if prob > 0.5 else "safe"


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_gen_synth(args) -> None:
    out = _out_dir(args)
    spec = SynthSpec(seed=args.seed, contracts_per_dialect=args.contracts)
    synth.write_corpus(spec, out)
    _write_manifest(out, args, [],
                    ["corpus_a.jsonl", "corpus_b.jsonl", "pairs.json"])


def cmd_ingest(args) -> None:
    out = _out_dir(args)
    paths = [_require_file(p) for p in args.input]
    corpora = [_load_corpus(p) for p in paths]
    summary = {"inputs": [], "violations": 0}
    merged = []
    for path, corpus in zip(paths, corpora):
        n_violations = 0
        for contract in corpus:
            for f in contract.functions:
                n_violations += len(validate_function(f))
        summary["inputs"].append({
            "path": str(path),
            "contracts": len(corpus),
            "functions": sum(len(c.functions) for c in corpus),
            "violations": n_violations,
        })
        summary["violations"] += n_violations
        merged.extend(corpus)
    vocab = corpus_vocabulary(merged)
    summary["vocab_size"] = vocab.size
    summary["vocab_hash"] = vocab.content_hash
    (out / "vocab.json").write_text(vocab.to_json() + "\n")
    evaluation.write_json_report(out / "ingest.json", summary)
    _write_manifest(out, args, paths, ["vocab.json", "ingest.json"])
    if summary["violations"]:
        raise RuntimeError(
            f"{summary['violations']} structural violations; see ingest.json"
        )


def cmd_train_align(args) -> None:
    out = _out_dir(args)
    path_a, path_b = (_require_file(p) for p in args.input)
    corpus_a, corpus_b = _load_corpus(path_a), _load_corpus(path_b)
    vocab = corpus_vocabulary(corpus_a + corpus_b)
    profile = _profile(args)
    pool_a = _prepare(corpus_a, vocab, profile)
    pool_b = _prepare(corpus_b, vocab, profile)
    bundle = training.train_alignment(
        pool_a, pool_b, vocab, profile, _train_config(args), _kernel(args)
    )
    (out / "vocab.json").write_text(vocab.to_json() + "\n")
    write_checkpoint(bundle, out / "aligned.ckpt")
    evaluation.write_json_report(out / "align.json", {
        "model_hash": model_hash(bundle),
        "val_mmd_trace": bundle.metadata.get("val_mmd_trace", []),
        "stopped_epoch": bundle.metadata.get("stopped_epoch"),
    })
    _write_manifest(out, args, [path_a, path_b],
                    ["aligned.ckpt", "vocab.json", "align.json"])


def cmd_train_classify(args) -> None:
    out = _out_dir(args)
    vocab = Vocabulary.from_json(_vocab_path(args).read_text())
    bundle = _load_model(args, vocab)
    path = _require_file(args.input[0])
    labeled = _prepare(_load_corpus(path), vocab, bundle.profile)
    tasks = [args.task] if args.task else list(TASKS)
    for task in tasks:
        bundle = training.train_classifier(
            labeled, bundle, task, _train_config(args)
        )
    write_checkpoint(bundle, out / "classified.ckpt")
    (out / "vocab.json").write_text(vocab.to_json() + "\n")
    evaluation.write_json_report(out / "classify.json", {
        "model_hash": model_hash(bundle),
        "tasks": sorted(bundle.classifiers),
    })
    _write_manifest(out, args, [path, _vocab_path(args), Path(args.model)],
                    ["classified.ckpt", "vocab.json", "classify.json"])


def cmd_train_joint(args) -> None:
    out = _out_dir(args)
    path_a, path_b = (_require_file(p) for p in args.input)
    corpus_a, corpus_b = _load_corpus(path_a), _load_corpus(path_b)
    vocab = corpus_vocabulary(corpus_a + corpus_b)
    profile = _profile(args)
    pool_a = _prepare(corpus_a, vocab, profile)
    pool_b = _prepare(corpus_b, vocab, profile)
    task = args.task or "re"
    bundle = training.train_joint_baseline(
        pool_a, pool_a, pool_b, vocab, profile, task,
        _train_config(args), _kernel(args),
    )
    (out / "vocab.json").write_text(vocab.to_json() + "\n")
    write_checkpoint(bundle, out / "joint.ckpt")
    evaluation.write_json_report(out / "joint.json", {
        "model_hash": model_hash(bundle),
        "task": task,
        "lambda": _train_config(args).lam,
    })
    _write_manifest(out, args, [path_a, path_b],
                    ["joint.ckpt", "vocab.json", "joint.json"])


def cmd_scan(args) -> None:
    out = _out_dir(args)
    vocab = Vocabulary.from_json(_vocab_path(args).read_text())
    bundle = _load_model(args, vocab)
    path = _require_file(args.input[0])
    corpus = _load_corpus(path)
    pool = _prepare(corpus, vocab, bundle.profile)
    tasks = [args.task] if args.task else sorted(bundle.classifiers)
    if not tasks:
        raise UsageError("checkpoint has no classification heads; run "
                         "train-classify first")
    fingerprint = model_hash(bundle)
    lines = []
    for data in pool:
        for task in tasks:
            prob, _ = training.predict_contract(data, bundle, task)
            lines.append(json.dumps({
                "contract_id": data.contract_id,
                "task": task,
                "prob": prob,
                "label": _scan_label(prob, task),
                "model_hash": fingerprint,
            }, sort_keys=True))
    (out / "scan.jsonl").write_text("\n".join(lines) + "\n")
    _write_manifest(out, args, [path, _vocab_path(args), Path(args.model)],
                    ["scan.jsonl"])


def _pairs_from_sidecar(sidecar: dict) -> list[EquivalencePair]:
    categories = sidecar.get("categories")
    if categories is None:
        raise UsageError("pairs file lacks per-function categories")
    out = []
    for fn_a, fn_b in sidecar["pairs"]:
        out.append(EquivalencePair(fn_a, fn_b,
                                   categories[fn_a.split(":", 1)[1]]))
    return out


def cmd_probe(args) -> None:
    out = _out_dir(args)
    vocab = Vocabulary.from_json(_vocab_path(args).read_text())
    after = _load_model(args, vocab)
    path_a, path_b, path_pairs = (_require_file(p) for p in args.input)
    corpus_a, corpus_b = _load_corpus(path_a), _load_corpus(path_b)
    sidecar = json.loads(path_pairs.read_text())
    pairs = synth.probe_pairs(corpus_a, corpus_b,
                              _pairs_from_sidecar(sidecar))
    profile = after.profile
    pool_a = _prepare(corpus_a, vocab, profile)
    pool_b = _prepare(corpus_b, vocab, profile)
    seed = int(after.metadata.get("seed", args.seed))
    before = training.train_alignment(
        pool_a, pool_b, vocab, profile,
        dataclasses.replace(TrainConfig(seed=seed), max_epochs=0),
    )
    report = evaluation.probe_report(
        before, after, pool_a, pool_b, pairs, vocab, seed=args.seed
    )
    evaluation.write_json_report(out / "probe.json", report)
    _write_manifest(out, args,
                    [path_a, path_b, path_pairs, _vocab_path(args),
                     Path(args.model)],
                    ["probe.json"])


def _load_split_pools(args, profile):
    path_a, path_b = (_require_file(p) for p in args.input)
    corpus_a, corpus_b = _load_corpus(path_a), _load_corpus(path_b)
    vocab = corpus_vocabulary(corpus_a + corpus_b)
    train_b, eval_b = _split_b(corpus_b, args.seed)
    return (
        [path_a, path_b], vocab,
        _prepare(corpus_a, vocab, profile),
        _prepare(train_b, vocab, profile),
        _prepare(eval_b, vocab, profile),
    )


def cmd_grid(args) -> None:
    out = _out_dir(args)
    profile = _profile(args)
    paths, vocab, pool_a, train_b, eval_b = _load_split_pools(args, profile)
    tasks = (args.task,) if args.task else ("re", "wr", "ut")
    alphas = (args.alpha,) if args.alpha is not None else evaluation.GRID_ALPHAS
    gammas = (args.gamma,) if args.gamma is not None else evaluation.GRID_GAMMAS
    rows = evaluation.grid_search(
        pool_a, eval_b, train_b, vocab, profile, _train_config(args),
        alphas=alphas, gammas=gammas, tasks=tasks,
    )
    columns = ["alpha", "gamma"] + [f"auc_{t}" for t in tasks] + ["auc_mean"]
    evaluation.write_csv_report(out / "grid.csv", rows, columns)
    evaluation.write_json_report(out / "grid.json", {"rows": rows})
    _write_manifest(out, args, paths, ["grid.csv", "grid.json"])


def cmd_ablate(args) -> None:
    out = _out_dir(args)
    profile = _profile(args)
    paths, vocab, pool_a, train_b, eval_b = _load_split_pools(args, profile)
    tasks = (args.task,) if args.task else ("re", "wr", "ut")
    result = evaluation.ablation_report(
        pool_a, eval_b, train_b, vocab, profile, _train_config(args),
        kernel=_kernel(args), tasks=tasks,
    )
    rows = evaluation.ablation_rows(result)
    evaluation.write_csv_report(out / "ablate.csv", rows,
                                evaluation.ABLATION_COLUMNS)
    evaluation.write_json_report(out / "ablate.json", {
        variant: {task: r.to_dict() for task, r in by_task.items()}
        for variant, by_task in result.items()
    })
    _write_manifest(out, args, paths, ["ablate.csv", "ablate.json"])


def cmd_fewshot(args) -> None:
    out = _out_dir(args)
    profile = _profile(args)
    paths, vocab, pool_a, train_b, eval_b = _load_split_pools(args, profile)
    task = args.task or "re"
    compositions = [_parse_shots(s) for s in (args.shots or ["0,0", "6,6", "0,8"])]
    cfg = _train_config(args)
    aligned = training.train_alignment(
        pool_a, train_b, vocab, profile, cfg, _kernel(args)
    )
    result = evaluation.fewshot_report(
        pool_a, train_b, eval_b, aligned, task, compositions, cfg
    )
    rows = evaluation.fewshot_rows(result)
    evaluation.write_csv_report(out / "fewshot.csv", rows,
                                evaluation.FEWSHOT_COLUMNS)
    evaluation.write_json_report(
        out / "fewshot.json",
        {key: r.to_dict() for key, r in result.items()},
    )
    _write_manifest(out, args, paths, ["fewshot.csv", "fewshot.json"])


def cmd_report(args) -> None:
    out = _out_dir(args)
    scan_path = _require_file(args.input[0])
    labels_path = _require_file(args.input[1])
    truth = {
        c.contract_id: (c.label.value if c.label is not None else "safe")
        for c in _load_corpus(labels_path)
    }
    by_task: dict[str, list[tuple[float, int]]] = {}
    fingerprints = set()
    for line in scan_path.read_text().splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        cid = entry["contract_id"]
        if cid not in truth:
            raise RuntimeError(f"scan mentions unknown contract {cid!r}")
        task = entry["task"]
        y = 1 if truth[cid] == task else 0
        by_task.setdefault(task, []).append((float(entry["prob"]), y))
        fingerprints.add(entry.get("model_hash", ""))
    if not by_task:
        raise RuntimeError("scan file has no entries")
    fingerprint = sorted(fingerprints)[0] if len(fingerprints) == 1 else ""
    reports = {
        task: evaluation.detection_metrics(scores, task=task,
                                           fingerprint=fingerprint)
        for task, scores in sorted(by_task.items())
    }
    evaluation.write_csv_report(out / "report.csv",
                                evaluation.metrics_rows(reports),
                                evaluation.METRICS_COLUMNS)
    evaluation.write_json_report(
        out / "report.json", {t: r.to_dict() for t, r in reports.items()}
    )
    _write_manifest(out, args, [scan_path, labels_path],
                    ["report.csv", "report.json"])


# ---------------------------------------------------------------------------
# parser assembly


def _add_common(sub, model: bool = False, kernel: bool = False,
                n_inputs: Optional[int] = None):
    if n_inputs:
        sub.add_argument("--input", nargs=n_inputs, required=True,
                         help="input file path(s)")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=7)
    sub.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    sub.add_argument("--task", choices=("re", "wr", "ut"), default=None)
    sub.add_argument("--threads", type=int, default=None)
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--batch-size", type=int, default=None)
    if model:
        sub.add_argument("--model", required=True, help="checkpoint path")
        sub.add_argument("--vocab", default=None,
                         help="vocabulary JSON (default: vocab.json beside "
                              "the checkpoint)")
    if kernel:
        sub.add_argument("--alpha", type=float, default=None)
        sub.add_argument("--gamma", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="iralign",
        description="Cross-dialect contract representation alignment "
                    "and zero-shot vulnerability scanning.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    s = subs.add_parser("gen-synth", help="generate a paired synthetic corpus")
    _add_common(s)
    s.add_argument("--contracts", type=int, default=120)
    s.set_defaults(func=cmd_gen_synth)

    s = subs.add_parser("ingest", help="validate dumps and build a vocabulary")
    _add_common(s, n_inputs="+")
    s.set_defaults(func=cmd_ingest)

    s = subs.add_parser("train-align",
                        help="stage 1: align the two dialects")
    _add_common(s, kernel=True, n_inputs=2)
    s.set_defaults(func=cmd_train_align)

    s = subs.add_parser("train-classify",
                        help="stage 2: frozen-encoder task heads")
    _add_common(s, model=True, n_inputs=1)
    s.set_defaults(func=cmd_train_classify)

    s = subs.add_parser("train-joint", help="jointly trained baseline")
    _add_common(s, kernel=True, n_inputs=2)
    s.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="alignment weight in the joint objective")
    s.set_defaults(func=cmd_train_joint)

    s = subs.add_parser("scan", help="score contracts with a trained model")
    _add_common(s, model=True, n_inputs=1)
    s.set_defaults(func=cmd_scan)

    s = subs.add_parser("probe",
                        help="pattern similarity / language probe / variance")
    _add_common(s, model=True, n_inputs=3)
    s.set_defaults(func=cmd_probe)

    s = subs.add_parser("grid", help="kernel hyperparameter sweep")
    _add_common(s, kernel=True, n_inputs=2)
    s.set_defaults(func=cmd_grid)

    s = subs.add_parser("ablate", help="encoder/alignment ablation table")
    _add_common(s, kernel=True, n_inputs=2)
    s.set_defaults(func=cmd_ablate)

    s = subs.add_parser("fewshot", help="few-shot composition sweep")
    _add_common(s, kernel=True, n_inputs=2)
    s.add_argument("--shots", action="append", default=None,
                   metavar="S,V", help="safe,vulnerable shot counts "
                                       "(repeatable)")
    s.set_defaults(func=cmd_fewshot)

    s = subs.add_parser("report", help="aggregate scan output into metrics")
    _add_common(s, n_inputs=2)
    s.set_defaults(func=cmd_report)

    return parser


def _emit_error(kind: str, exc: Exception) -> None:
    sys.stderr.write(json.dumps({
        "error": kind,
        "type": type(exc).__name__,
        "message": str(exc),
    }, sort_keys=True) + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit_error("usage", exc)
        return EXIT_USAGE
    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        args.func(args)
    except UsageError as exc:
        _emit_error("usage", exc)
        return EXIT_USAGE
    except _PIPELINE_ERRORS as exc:
        _emit_error("pipeline", exc)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
