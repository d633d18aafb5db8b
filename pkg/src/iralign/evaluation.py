"""Detection metrics, representation probes, and the sweep/ablation/few-shot
reporting harness.

The three probes ask, in order: do equivalent statement pairs move closer
(pattern cosines), does dialect identity become unpredictable (language
probe), and do features stay spread out (intra-class variance)?
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .alignment import FeatureBatch, KernelConfig
from .encoders import EncoderProfile
from .graphs import build_graph
from .ir import IrFunction
from .model import ModelBundle, VocabHashMismatch
from .preprocess import (
    PAD_ID,
    Vocabulary,
    encode_sequence,
    normalize_tokens,
    tokenize_function,
)
from .training import (
    ContractData,
    MissingClassifier,
    TrainConfig,
    _task_label,
    classifier_forward,
    contract_features,
    encode_all_functions,
    encode_function_batch,
    few_shot_augment,
    train_classifier,
    train_pipeline,
)


class ZeroVector(Exception):
    pass


class UnknownCategory(Exception):
    pass


class SingleLanguage(Exception):
    pass


class TooFewSamples(Exception):
    pass


PATTERN_CATEGORIES = (
    "balance update",
    "authorization check",
    "external call",
    "array push",
    "reentrancy pattern",
    "randomness condition",
)

GRID_ALPHAS = (0.6, 0.7, 0.8, 0.9)
GRID_GAMMAS = (0.001, 0.005, 0.01, 0.1)
ABLATION_VARIANTS = ("full", "seq-only", "hie-only", "no-alignment")

# Fixed CSV layouts for the report writers.
METRICS_COLUMNS = ("task", "tp", "fp", "tn", "fn", "fpr", "fnr", "auc", "f1",
                   "fingerprint")
GRID_COLUMNS = ("alpha", "gamma", "auc_re", "auc_wr", "auc_ut", "auc_mean")
ABLATION_COLUMNS = ("variant", "task", "fpr", "fnr", "auc", "fpr_plus_fnr")
FEWSHOT_COLUMNS = ("shots_safe", "shots_vuln", "task", "fpr", "fnr", "auc")


@dataclass(frozen=True)
class MetricsReport:
    task: str
    tp: int
    fp: int
    tn: int
    fn: int
    fpr: Optional[float]
    fnr: Optional[float]
    auc: Optional[float]
    f1: float
    fingerprint: str

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "task": self.task, "tp": self.tp, "fp": self.fp, "tn": self.tn,
            "fn": self.fn, "fpr": self.fpr, "fnr": self.fnr, "auc": self.auc,
            "f1": self.f1, "fingerprint": self.fingerprint,
        }


def detection_metrics(
    scores: Sequence[tuple[float, int]], task: str = "", fingerprint: str = ""
) -> MetricsReport:
    """Counts at the fixed 0.5 threshold plus rank-statistic AUC.

    AUC is the probability that a random positive outscores a random
    negative, ties counted one half; with a single class it is reported as
    None while the counts stand.
    """
    if not scores:
        raise ValueError("scores must be non-empty")
    probs = np.array([s[0] for s in scores], dtype=np.float64)
    truth = np.array([int(s[1]) for s in scores])
    pred = probs > 0.5
    tp = int(np.sum(pred & (truth == 1)))
    fp = int(np.sum(pred & (truth == 0)))
    tn = int(np.sum(~pred & (truth == 0)))
    fn = int(np.sum(~pred & (truth == 1)))
    fpr = fp / (fp + tn) if (fp + tn) > 0 else None
    fnr = fn / (fn + tp) if (fn + tp) > 0 else None
    f1_den = 2 * tp + fp + fn
    f1 = 2 * tp / f1_den if f1_den > 0 else 0.0
    pos = probs[truth == 1]
    neg = probs[truth == 0]
    if len(pos) == 0 or len(neg) == 0:
        auc = None
    else:
        wins = np.sum(pos[:, None] > neg[None, :])
        ties = np.sum(pos[:, None] == neg[None, :])
        auc = float((wins + 0.5 * ties) / (len(pos) * len(neg)))
    return MetricsReport(task, tp, fp, tn, fn, fpr, fnr, auc, f1, fingerprint)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def encode_functions(
    bundle: ModelBundle, funcs: Sequence[IrFunction], vocab: Vocabulary
) -> np.ndarray:
    """Fused features for bare functions (no ContractData wrapper)."""
    if vocab.content_hash != bundle.vocab_hash:
        raise VocabHashMismatch("bundle was built against a different vocabulary")
    max_len = bundle.profile.max_len
    rows, lengths, graph_list = [], [], []
    for f in funcs:
        enc = encode_sequence(normalize_tokens(tokenize_function(f)), vocab, max_len)
        rows.append(np.array(enc.ids, dtype=np.int64))
        lengths.append(enc.length)
        graph_list.append(build_graph(f))
    z = encode_function_batch(
        bundle, np.stack(rows), np.array(lengths, dtype=np.int64), graph_list
    )
    return np.array(z.data)


def pattern_similarity_report(
    pairs: Sequence[tuple[IrFunction, IrFunction, str]],
    before: ModelBundle,
    after: ModelBundle,
    vocab: Vocabulary,
) -> dict:
    """Mean cosine of equivalent statement pairs per semantic category,
    under the pre-alignment and post-alignment bundles."""
    for _, _, cat in pairs:
        if cat not in PATTERN_CATEGORIES:
            raise UnknownCategory(cat)
    if not pairs:
        return {"categories": {}}
    funcs_a = [p[0] for p in pairs]
    funcs_b = [p[1] for p in pairs]
    out: dict = {"categories": {}}
    z = {
        "before": (encode_functions(before, funcs_a, vocab),
                   encode_functions(before, funcs_b, vocab)),
        "after": (encode_functions(after, funcs_a, vocab),
                  encode_functions(after, funcs_b, vocab)),
    }
    for cat in PATTERN_CATEGORIES:
        idx = [i for i, p in enumerate(pairs) if p[2] == cat]
        if not idx:
            continue
        entry = {"n": len(idx)}
        for stage, (za, zb) in z.items():
            entry[stage] = float(
                np.mean([cosine_similarity(za[i], zb[i]) for i in idx])
            )
        out["categories"][cat] = entry
    return out


def language_probe(batches: Sequence[FeatureBatch], seed: int = 0) -> float:
    """Held-out accuracy of a logistic-regression dialect classifier.

    Trains by plain gradient descent on a per-language 80/20 split; high
    accuracy means features still betray their dialect, chance level means
    they do not.
    """
    langs = sorted({b.language for b in batches})
    if len(langs) < 2:
        raise SingleLanguage(f"need two languages, got {langs}")
    if len(langs) > 2:
        raise ValueError(f"probe is binary, got languages {langs}")
    X = np.concatenate([np.asarray(b.vectors, dtype=np.float64) for b in batches])
    y = np.concatenate(
        [np.full(len(b.vectors), langs.index(b.language)) for b in batches]
    ).astype(np.float64)

    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        perm = members[rng.permutation(len(members))]
        n_test = max(1, round(0.2 * len(members)))
        test_idx.extend(perm[:n_test])
        train_idx.extend(perm[n_test:])
    train_idx = np.array(sorted(train_idx))
    test_idx = np.array(sorted(test_idx))

    mu = X[train_idx].mean(axis=0)
    sd = X[train_idx].std(axis=0)
    sd[sd < 1e-6] = 1.0
    Xn = (X - mu) / sd
    Xn = np.concatenate([Xn, np.ones((len(Xn), 1))], axis=1)
    w = np.zeros(Xn.shape[1])
    Xtr, ytr = Xn[train_idx], y[train_idx]
    for _ in range(400):
        p = 1.0 / (1.0 + np.exp(-(Xtr @ w)))
        grad = Xtr.T @ (p - ytr) / len(ytr) + 1e-4 * w
        w -= 0.5 * grad
    pred = (Xn[test_idx] @ w) > 0
    return float(np.mean(pred == (y[test_idx] == 1)))


def intra_class_variance(batch) -> float:
    """Mean squared distance to the batch mean (trace of covariance)."""
    X = batch.vectors if isinstance(batch, FeatureBatch) else np.asarray(batch)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 rows, got shape {X.shape}")
    centered = X - X.mean(axis=0)
    return float(np.mean(np.sum(centered * centered, axis=1)))


def token_histogram_features(pool: Sequence[ContractData], vocab_size: int) -> np.ndarray:
    """Per-function normalized-token count vectors (PAD excluded)."""
    rows = []
    for c in pool:
        for fi in range(c.n_functions):
            ids = c.ids[fi][: c.lengths[fi]]
            counts = np.bincount(ids, minlength=vocab_size).astype(np.float64)
            counts[PAD_ID] = 0.0
            rows.append(counts)
    return np.stack(rows)


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def score_contracts(
    bundle: ModelBundle,
    pool: Sequence[ContractData],
    task: str,
    features: Optional[np.ndarray] = None,
) -> list[tuple[float, int]]:
    """(probability, true label) per contract for one task head."""
    if task not in bundle.classifiers:
        raise MissingClassifier(task)
    feats = contract_features(bundle, list(pool)) if features is None else features
    logits = np.asarray(
        classifier_forward(bundle.classifiers[task], feats).data, dtype=np.float64
    )
    probs = _np_sigmoid(logits)
    return [(float(p), _task_label(c, task)) for p, c in zip(probs, pool)]


def evaluate_tasks(
    bundle: ModelBundle,
    pool: Sequence[ContractData],
    tasks: Sequence[str] = ("re", "wr", "ut"),
    fingerprint: str = "",
) -> dict[str, MetricsReport]:
    feats = contract_features(bundle, list(pool))
    return {
        task: detection_metrics(
            score_contracts(bundle, pool, task, features=feats), task, fingerprint
        )
        for task in tasks
    }


def probe_report(
    bundle_before: ModelBundle,
    bundle_after: ModelBundle,
    poolA: Sequence[ContractData],
    poolB: Sequence[ContractData],
    pairs: Sequence[tuple[IrFunction, IrFunction, str]],
    vocab: Vocabulary,
    seed: int = 0,
) -> dict:
    """Full three-part probe: pattern cosines, language probe before/after,
    and per-dialect variance before/after with collapse ratios."""
    histA = token_histogram_features(poolA, vocab.size)
    histB = token_histogram_features(poolB, vocab.size)
    featA = encode_all_functions(bundle_after, list(poolA))
    featB = encode_all_functions(bundle_after, list(poolB))
    featA_pre = encode_all_functions(bundle_before, list(poolA))
    featB_pre = encode_all_functions(bundle_before, list(poolB))
    report = {
        "patterns": pattern_similarity_report(pairs, bundle_before, bundle_after, vocab),
        "language_probe": {
            "before": language_probe(
                [FeatureBatch(histA, "A"), FeatureBatch(histB, "B")], seed
            ),
            "after": language_probe(
                [FeatureBatch(featA, "A"), FeatureBatch(featB, "B")], seed
            ),
        },
        "variance": {},
    }
    for lang, pre, post in (("A", featA_pre, featA), ("B", featB_pre, featB)):
        v_pre = intra_class_variance(pre)
        v_post = intra_class_variance(post)
        report["variance"][lang] = {
            "before": v_pre,
            "after": v_post,
            "ratio": v_post / v_pre if v_pre > 0 else None,
        }
    return report


def grid_search(
    labeledA: list[ContractData],
    evalB: list[ContractData],
    corpusB_train: list[ContractData],
    vocab: Vocabulary,
    profile: EncoderProfile,
    cfg: TrainConfig,
    alphas: Sequence[float] = GRID_ALPHAS,
    gammas: Sequence[float] = GRID_GAMMAS,
    tasks: Sequence[str] = ("re", "wr", "ut"),
) -> list[dict]:
    """One full two-stage run per kernel setting; rows follow GRID_COLUMNS."""
    rows = []
    for alpha in alphas:
        for gamma in gammas:
            kernel = KernelConfig(alpha=alpha, gamma=gamma)
            bundle = train_pipeline(
                labeledA, corpusB_train, vocab, profile, cfg, kernel, tasks=tasks
            )
            reports = evaluate_tasks(bundle, evalB, tasks)
            row = {"alpha": alpha, "gamma": gamma}
            aucs = []
            for task in tasks:
                auc = reports[task].auc
                row[f"auc_{task}"] = auc
                if auc is not None:
                    aucs.append(auc)
            row["auc_mean"] = float(np.mean(aucs)) if aucs else None
            rows.append(row)
    return rows


def ablation_report(
    labeledA: list[ContractData],
    evalB: list[ContractData],
    corpusB_train: list[ContractData],
    vocab: Vocabulary,
    profile: EncoderProfile,
    cfg: TrainConfig,
    kernel: KernelConfig = KernelConfig(),
    tasks: Sequence[str] = ("re", "wr", "ut"),
) -> dict[str, dict[str, MetricsReport]]:
    """Encoder-view and no-alignment ablations against the full pipeline."""
    settings = {
        "full": dict(mode="full", align=True),
        "seq-only": dict(mode="seq", align=True),
        "hie-only": dict(mode="hie", align=True),
        "no-alignment": dict(mode="full", align=False),
    }
    out = {}
    for variant, kw in settings.items():
        bundle = train_pipeline(
            labeledA, corpusB_train, vocab, profile, cfg, kernel,
            tasks=tasks, **kw,
        )
        out[variant] = evaluate_tasks(bundle, evalB, tasks, fingerprint=variant)
    return out


def error_sum(reports: dict[str, MetricsReport]) -> float:
    """Aggregate FPR+FNR over tasks; the ablation/baseline comparison stat."""
    total = 0.0
    for r in reports.values():
        total += (r.fpr or 0.0) + (r.fnr or 0.0)
    return total


def fewshot_report(
    labeledA: list[ContractData],
    shotsB: list[ContractData],
    evalB: list[ContractData],
    aligned_bundle: ModelBundle,
    task: str,
    compositions: Sequence[tuple[int, int]],
    cfg: TrainConfig,
) -> dict[str, MetricsReport]:
    """Retrains the task head with target-dialect shots mixed in; keys are
    "S,V" composition strings, with (0,0) the zero-shot baseline."""
    out = {}
    for n_safe, n_vuln in compositions:
        augmented = few_shot_augment(
            labeledA, shotsB, (n_safe, n_vuln), task, seed=cfg.seed
        )
        bundle = train_classifier(augmented, aligned_bundle, task, cfg)
        scores = score_contracts(bundle, evalB, task)
        out[f"{n_safe},{n_vuln}"] = detection_metrics(
            scores, task, fingerprint=f"shots={n_safe},{n_vuln}"
        )
    return out


def write_json_report(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv_report(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def metrics_rows(reports: dict[str, MetricsReport]) -> list[dict]:
    return [reports[k].to_dict() for k in sorted(reports)]


def ablation_rows(result: dict[str, dict[str, MetricsReport]]) -> list[dict]:
    rows = []
    for variant in ABLATION_VARIANTS:
        if variant not in result:
            continue
        for task in sorted(result[variant]):
            r = result[variant][task]
            rows.append({
                "variant": variant, "task": task, "fpr": r.fpr, "fnr": r.fnr,
                "auc": r.auc,
                "fpr_plus_fnr": (r.fpr or 0.0) + (r.fnr or 0.0),
            })
    return rows


def fewshot_rows(result: dict[str, MetricsReport]) -> list[dict]:
    rows = []
    for key in sorted(result):
        n_safe, n_vuln = key.split(",")
        r = result[key]
        rows.append({
            "shots_safe": int(n_safe), "shots_vuln": int(n_vuln),
            "task": r.task, "fpr": r.fpr, "fnr": r.fnr, "auc": r.auc,
        })
    return rows
