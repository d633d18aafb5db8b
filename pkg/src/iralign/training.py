"""Two-stage training: unsupervised cross-dialect alignment, then per-task
classifiers over frozen encoders; plus the end-to-end joint baseline,
few-shot augmentation, contract scoring, and a finite-difference gradient
checker.

Every random draw flows from TrainConfig.seed, so identical configs yield
byte-identical bundles.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .alignment import KernelConfig, mmd_loss_tensor
from .encoders import (
    EncoderProfile,
    GraphBatch,
    fuse_features,
    hie_encode,
    init_hie_params,
    init_seq_params,
    seq_encode,
)
from .graphs import IrGraph, build_graph
from .ir import Contract, Label
from .model import (
    ClassifierParams,
    ModelBundle,
    init_classifier_params,
    tensors_bytes,
)
from .preprocess import (
    EmptyCorpus,
    Vocabulary,
    encode_sequence,
    normalize_tokens,
    tokenize_function,
    _raw_measures,
)


class SingleClassDataset(Exception):
    pass


class FrozenViolation(Exception):
    pass


class MissingClassifier(Exception):
    pass


class EmptyContract(Exception):
    pass


class InsufficientShots(Exception):
    pass


class NonFiniteLoss(Exception):
    """Carries the last finite-state bundle as .bundle."""

    def __init__(self, message: str, bundle: ModelBundle):
        super().__init__(message)
        self.bundle = bundle


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    optimizer: str = "adam"
    max_epochs: int = 60
    head_epochs: int = 400
    stage1_threshold: float = 0.2
    stage2_threshold: float = 0.5
    lam: float = 0.5
    curriculum_phases: int = 3
    seed: int = 0
    val_fraction: float = 0.1
    variance_floor_ratio: float = 0.5
    variance_floor_weight: float = 1.0

    def __post_init__(self):
        if self.batch_size % 2 != 0:
            raise ValueError("batch_size must be even")
        if self.stage1_threshold <= 0 or self.stage2_threshold <= 0:
            raise ValueError("stop thresholds must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.variance_floor_ratio < 0 or self.variance_floor_weight < 0:
            raise ValueError("variance floor settings must be nonnegative")
        if self.head_epochs < 0:
            raise ValueError("head_epochs must be nonnegative")


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, tensors: dict[str, ad.Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = dict(sorted(tensors.items()))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.tensors.items()}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        scale1 = 1.0 / (1.0 - b1**self.step_count)
        scale2 = 1.0 / (1.0 - b2**self.step_count)
        for name, t in self.tensors.items():
            g = t.grad
            if g is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            t.data = t.data - self.lr * (m * scale1) / (np.sqrt(v * scale2) + self.eps)


@dataclass
class ContractData:
    """A contract prepared for encoding: per-function id rows and graphs."""

    contract_id: str
    language: str
    label: Optional[Label]
    ids: np.ndarray  # (n_functions, max_len) int64
    lengths: np.ndarray  # (n_functions,) int64
    graphs: list[IrGraph]
    measures: tuple[float, float, float]  # ast depth, opcode count, size

    @property
    def n_functions(self) -> int:
        return len(self.graphs)


def prepare_contract(c: Contract, vocab: Vocabulary, max_len: int) -> ContractData:
    if not c.functions:
        raise EmptyContract(c.contract_id)
    rows = []
    lengths = []
    graph_list = []
    for f in c.functions:
        seq = normalize_tokens(tokenize_function(f))
        enc = encode_sequence(seq, vocab, max_len)
        rows.append(np.array(enc.ids, dtype=np.int64))
        lengths.append(enc.length)
        graph_list.append(build_graph(f))
    return ContractData(
        contract_id=c.contract_id,
        language=c.language.value,
        label=c.label,
        ids=np.stack(rows),
        lengths=np.array(lengths, dtype=np.int64),
        graphs=graph_list,
        measures=_raw_measures(c),
    )


def prepare_contracts(
    contracts: Sequence[Contract], vocab: Vocabulary, max_len: int
) -> list[ContractData]:
    return [prepare_contract(c, vocab, max_len) for c in contracts]


def _pack_rows(rows: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Trim a stacked id matrix to the longest real length in the batch."""
    return rows[:, : max(1, int(lengths.max()))]


def encode_function_batch(
    bundle: ModelBundle,
    rows: np.ndarray,
    lengths: np.ndarray,
    graph_list: Sequence[IrGraph],
) -> ad.Tensor:
    """Fused per-function features for one batch; views follow the bundle."""
    h_seq = None
    h_hie = None
    if bundle.seq is not None:
        h_seq = seq_encode(_pack_rows(rows, lengths), bundle.seq)
    if bundle.hie is not None:
        h_hie = hie_encode(GraphBatch.from_graphs(graph_list), bundle.hie)
    return fuse_features(h_seq, h_hie)


def _gather(pool: list[ContractData], picks: Sequence[tuple[int, int]]):
    rows = np.stack([pool[ci].ids[fi] for ci, fi in picks])
    lengths = np.array([pool[ci].lengths[fi] for ci, fi in picks])
    graph_list = [pool[ci].graphs[fi] for ci, fi in picks]
    return rows, lengths, graph_list


def encode_all_functions(bundle: ModelBundle, pool: list[ContractData],
                         batch_size: int = 64) -> np.ndarray:
    """Function-level features for every function in the pool, in order."""
    picks = [(ci, fi) for ci, c in enumerate(pool) for fi in range(c.n_functions)]
    outs = []
    for start in range(0, len(picks), batch_size):
        chunk = picks[start : start + batch_size]
        z = encode_function_batch(bundle, *_gather(pool, chunk))
        outs.append(np.array(z.data))
    return np.concatenate(outs, axis=0)


def contract_features(bundle: ModelBundle, pool: list[ContractData]) -> np.ndarray:
    """Per-contract feature: mean over the contract's function features."""
    feats = encode_all_functions(bundle, pool)
    out = np.zeros((len(pool), feats.shape[1]), dtype=feats.dtype)
    row = 0
    for i, c in enumerate(pool):
        out[i] = feats[row : row + c.n_functions].mean(axis=0)
        row += c.n_functions
    return out


def _pooled_rows_tensor(z: ad.Tensor, counts: Sequence[int]) -> ad.Tensor:
    """Tape-side analogue of contract_features: mean pooling over
    consecutive row blocks of per-function features."""
    seg = np.repeat(np.arange(len(counts)), counts)
    cvec = np.asarray(counts, dtype=z.dtype)
    return ad.segment_sum(z, seg, len(counts)) * (1.0 / cvec)[:, None]


def _snapshot(bundle: ModelBundle) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in bundle.all_tensors().items()}


def _restore(bundle: ModelBundle, snap: dict[str, np.ndarray]) -> None:
    for k, t in bundle.all_tensors().items():
        t.data = snap[k].copy()


def _sorted_by_complexity(pool: list[ContractData], all_data: list[ContractData]):
    """Curriculum order: z-normalized measures against the combined corpus."""
    rows = np.array([c.measures for c in all_data], dtype=np.float64)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std == 0] = np.inf  # constant measure contributes z = 0

    def score(c: ContractData) -> float:
        z = (np.array(c.measures) - mean) / std
        return float(z.mean())

    return sorted(pool, key=lambda c: (score(c), c.contract_id))


def validation_mmd(
    bundle: ModelBundle,
    valA: list[ContractData],
    valB: list[ContractData],
    kernel: KernelConfig,
) -> float:
    zA = encode_all_functions(bundle, valA)
    zB = encode_all_functions(bundle, valB)
    return mmd_loss_tensor(ad.Tensor(zA), ad.Tensor(zB), kernel).item()


def _batch_variance(z: ad.Tensor) -> ad.Tensor:
    """Mean squared distance of rows from their batch mean, on the tape."""
    centered = z - z.mean(axis=0, keepdims=True)
    return (centered**2).sum(axis=1).mean()


def _pool_variance(bundle: ModelBundle, pool: list[ContractData]) -> float:
    z = encode_all_functions(bundle, pool)
    return float(np.mean(np.sum((z - z.mean(axis=0)) ** 2, axis=1)))


def _length_ordered(pool: list[ContractData], take: int) -> list[tuple[int, int]]:
    """Function picks from the first `take` contracts, ordered by sequence
    length. Length is a language-agnostic difficulty proxy, so the same
    fractional position in each dialect's ordering holds a comparable mix
    of function shapes."""
    picks = [
        (ci, fi) for ci in range(take) for fi in range(pool[ci].n_functions)
    ]
    picks.sort(key=lambda p: (int(pool[p[0]].lengths[p[1]]), p[0], p[1]))
    return picks


def train_alignment(
    corpusA: list[ContractData],
    corpusB: list[ContractData],
    vocab: Vocabulary,
    profile: EncoderProfile,
    cfg: TrainConfig,
    kernel: KernelConfig = KernelConfig(),
    mode: str = "full",
) -> ModelBundle:
    """Stage 1: align the two dialects' feature distributions.

    Contracts are released in curriculum tranches (simplest first), and
    each step draws its two batches from the same fractional window of the
    per-dialect length ordering, so the discrepancy is minimized stratum
    by stratum rather than only in the global mean. A held-out split per
    dialect tracks validation MMD; when it falls under cfg.stage1_threshold
    the next tranche is released, and training stops once the full
    curriculum is aligned. mode selects the encoder views ("full", "seq",
    "hie") for ablations.
    """
    if not corpusA or not corpusB:
        raise EmptyCorpus("both dialect corpora must be non-empty")
    if mode not in ("full", "seq", "hie"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(cfg.seed)
    seq = init_seq_params(vocab.size, profile, rng) if mode != "hie" else None
    hie = init_hie_params(profile, rng) if mode != "seq" else None
    bundle = ModelBundle(
        profile=profile,
        seq=seq,
        hie=hie,
        classifiers={},
        vocab_hash=vocab.content_hash,
        metadata={"mode": mode, "seed": cfg.seed, "stage": "aligned"},
    )
    trace: list[float] = []
    bundle.metadata["val_mmd_trace"] = trace
    if cfg.max_epochs == 0:
        bundle.metadata["untrained"] = True
        return bundle

    permA = rng.permutation(len(corpusA))
    permB = rng.permutation(len(corpusB))
    n_valA = max(1, round(cfg.val_fraction * len(corpusA)))
    n_valB = max(1, round(cfg.val_fraction * len(corpusB)))
    valA = [corpusA[i] for i in permA[:n_valA]]
    valB = [corpusB[i] for i in permB[:n_valB]]
    trainA = [corpusA[i] for i in permA[n_valA:]] or valA
    trainB = [corpusB[i] for i in permB[n_valB:]] or valB

    combined = trainA + trainB
    orderedA = _sorted_by_complexity(trainA, combined)
    orderedB = _sorted_by_complexity(trainB, combined)

    opt = Adam(bundle.encoder_tensors(), lr=cfg.learning_rate)
    half = cfg.batch_size // 2
    phases = max(1, cfg.curriculum_phases)
    trace.append(validation_mmd(bundle, valA, valB, kernel))
    snap = _snapshot(bundle)
    # Anti-collapse floors: shrinking every feature to one point minimizes
    # the discrepancy trivially, so batches are penalized for dropping below
    # a fixed fraction of the initial per-dialect feature variance.
    floorA = cfg.variance_floor_ratio * _pool_variance(bundle, trainA)
    floorB = cfg.variance_floor_ratio * _pool_variance(bundle, trainB)
    floor_w = cfg.variance_floor_weight

    phase = 0
    for epoch in range(cfg.max_epochs):
        takeA = max(1, -(-len(orderedA) * (phase + 1) // phases))
        takeB = max(1, -(-len(orderedB) * (phase + 1) // phases))
        poolA = _length_ordered(orderedA, takeA)
        poolB = _length_ordered(orderedB, takeB)
        steps = min(len(poolA), len(poolB)) // half
        for step in range(max(1, steps)):
            # Both batches come from the same fractional window of the
            # length ordering, so the loss compares like with like instead
            # of whole-corpus averages; distribution matching then has to
            # close the gap within every difficulty stratum.
            f = float(rng.random())
            iA = int(f * (len(poolA) - half + 1)) if len(poolA) > half else 0
            iB = int(f * (len(poolB) - half + 1)) if len(poolB) > half else 0
            pickA = poolA[iA : iA + half]
            pickB = poolB[iB : iB + half]
            if len(pickA) < 2 or len(pickB) < 2:
                continue
            zA = encode_function_batch(bundle, *_gather(orderedA, pickA))
            zB = encode_function_batch(bundle, *_gather(orderedB, pickB))
            loss = mmd_loss_tensor(zA, zB, kernel)
            if floor_w > 0:
                hinge = (floorA - _batch_variance(zA)).relu() \
                    + (floorB - _batch_variance(zB)).relu()
                loss = loss + floor_w * hinge
            if not np.isfinite(loss.item()):
                _restore(bundle, snap)
                raise NonFiniteLoss(f"epoch {epoch}: loss {loss.item()}", bundle)
            opt.zero_grad()
            loss.backward()
            opt.step()
        val = validation_mmd(bundle, valA, valB, kernel)
        if not np.isfinite(val):
            _restore(bundle, snap)
            raise NonFiniteLoss(f"epoch {epoch}: validation MMD {val}", bundle)
        trace.append(val)
        snap = _snapshot(bundle)
        # Aligning the released tranches unlocks the next one; the run ends
        # only when the full curriculum sits under the threshold, so easy
        # early tranches cannot end training before the hard contracts.
        if val < cfg.stage1_threshold:
            if phase == phases - 1:
                bundle.metadata["stopped_epoch"] = epoch
                break
            phase += 1
    return bundle


def classifier_forward(
    clf: ClassifierParams,
    x,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ad.Tensor:
    """Logits for a (n, d) feature matrix; dropout only when train=True."""
    t = clf.tensors
    p = f"clf.{clf.task}"
    h = ad.as_tensor(x)
    h = (h @ t[f"{p}.h1.w"] + t[f"{p}.h1.b"]).relu()
    if train and clf.dropout > 0:
        keep = (rng.random(h.shape) >= clf.dropout) / (1.0 - clf.dropout)
        h = h * keep.astype(h.dtype)
    h = (h @ t[f"{p}.h2.w"] + t[f"{p}.h2.b"]).relu()
    if train and clf.dropout > 0:
        keep = (rng.random(h.shape) >= clf.dropout) / (1.0 - clf.dropout)
        h = h * keep.astype(h.dtype)
    return (h @ t[f"{p}.out.w"] + t[f"{p}.out.b"]).reshape(-1)


_TASK_SEED_OFFSET = {"re": 101, "wr": 102, "ut": 103}


def _task_label(c: ContractData, task: str) -> int:
    return int(c.label is not None and c.label.value == task)


def _balanced_batches(
    y: np.ndarray, batch_size: int, steps: int, rng: np.random.Generator
) -> Iterable[np.ndarray]:
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    half = batch_size // 2
    for _ in range(steps):
        yield np.concatenate(
            [rng.choice(pos, size=half, replace=True),
             rng.choice(neg, size=half, replace=True)]
        )


def train_classifier(
    labeled: list[ContractData],
    bundle: ModelBundle,
    task: str,
    cfg: TrainConfig,
) -> ModelBundle:
    """Stage 2: train one task head on frozen encoders.

    Encoder tensors are byte-compared before and after; any drift raises
    FrozenViolation. Returns a new bundle carrying the trained head.
    """
    y = np.array([_task_label(c, task) for c in labeled])
    if y.min() == y.max():
        raise SingleClassDataset(f"task {task}: only class {y[0]} present")
    before = tensors_bytes(bundle.encoder_tensors())
    X = contract_features(bundle, labeled)

    rng = np.random.default_rng(cfg.seed + _TASK_SEED_OFFSET[task])
    clf = init_classifier_params(task, X.shape[1], rng)
    opt = Adam(clf.tensors, lr=cfg.learning_rate)
    losses: list[float] = []
    for epoch in range(cfg.head_epochs):
        steps = max(1, len(labeled) // cfg.batch_size)
        epoch_losses = []
        for batch_idx in _balanced_batches(y, cfg.batch_size, steps, rng):
            logits = classifier_forward(clf, X[batch_idx], train=True, rng=rng)
            targets = y[batch_idx].astype(X.dtype)
            loss = ad.sigmoid_cross_entropy(logits, targets).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        losses.append(float(np.mean(epoch_losses)))
        if losses[-1] < cfg.stage2_threshold:
            break

    after = tensors_bytes(bundle.encoder_tensors())
    if before != after:
        raise FrozenViolation(f"encoder tensors changed while training {task}")
    out = replace(
        bundle,
        classifiers={**bundle.classifiers, task: clf},
        frozen=True,
        metadata={
            **bundle.metadata,
            f"clf_{task}_loss_trace": losses,
            "stage": "classified",
        },
    )
    return out


def train_joint_baseline(
    labeledA: list[ContractData],
    unlabeledA: list[ContractData],
    unlabeledB: list[ContractData],
    vocab: Vocabulary,
    profile: EncoderProfile,
    task: str,
    cfg: TrainConfig,
    kernel: KernelConfig = KernelConfig(),
    mode: str = "full",
) -> ModelBundle:
    """End-to-end baseline: classification loss plus cfg.lam times the
    alignment loss, updating encoders and head together (no freezing)."""
    y_all = np.array([_task_label(c, task) for c in labeledA])
    if y_all.min() == y_all.max():
        raise SingleClassDataset(f"task {task}: only class {y_all[0]} present")
    if not unlabeledA or not unlabeledB:
        raise EmptyCorpus("joint baseline needs unlabeled pools for both dialects")
    rng = np.random.default_rng(cfg.seed)
    seq = init_seq_params(vocab.size, profile, rng) if mode != "hie" else None
    hie = init_hie_params(profile, rng) if mode != "seq" else None
    bundle = ModelBundle(
        profile=profile,
        seq=seq,
        hie=hie,
        classifiers={},
        vocab_hash=vocab.content_hash,
        metadata={"mode": f"joint-{mode}", "seed": cfg.seed, "lam": cfg.lam},
    )
    clf = init_classifier_params(task, bundle.fused_dim(), rng)
    bundle.classifiers[task] = clf

    poolA = [(ci, fi) for ci, c in enumerate(unlabeledA) for fi in range(c.n_functions)]
    poolB = [(ci, fi) for ci, c in enumerate(unlabeledB) for fi in range(c.n_functions)]
    opt = Adam(bundle.all_tensors(), lr=cfg.learning_rate)
    half = cfg.batch_size // 2
    contracts_per_batch = max(2, min(len(labeledA), cfg.batch_size) // 2)
    losses: list[float] = []
    snap = _snapshot(bundle)
    for epoch in range(cfg.max_epochs):
        steps = max(1, len(labeledA) // cfg.batch_size)
        epoch_cls = []
        for batch_idx in _balanced_batches(y_all, 2 * contracts_per_batch, steps, rng):
            picks = [
                (ci, fi) for ci in batch_idx for fi in range(labeledA[ci].n_functions)
            ]
            z = encode_function_batch(bundle, *_gather(labeledA, picks))
            feats = _pooled_rows_tensor(
                z, [labeledA[ci].n_functions for ci in batch_idx]
            )
            logits = classifier_forward(clf, feats, train=True, rng=rng)
            targets = y_all[batch_idx].astype(z.dtype)
            loss = ad.sigmoid_cross_entropy(logits, targets).mean()
            epoch_cls.append(loss.item())
            if cfg.lam != 0.0:
                pickA = [poolA[i] for i in rng.choice(len(poolA), size=half)]
                pickB = [poolB[i] for i in rng.choice(len(poolB), size=half)]
                zA = encode_function_batch(bundle, *_gather(unlabeledA, pickA))
                zB = encode_function_batch(bundle, *_gather(unlabeledB, pickB))
                loss = loss + cfg.lam * mmd_loss_tensor(zA, zB, kernel)
            if not np.isfinite(loss.item()):
                _restore(bundle, snap)
                raise NonFiniteLoss(f"epoch {epoch}: loss {loss.item()}", bundle)
            opt.zero_grad()
            loss.backward()
            opt.step()
        losses.append(float(np.mean(epoch_cls)))
        snap = _snapshot(bundle)
        if losses[-1] < cfg.stage2_threshold:
            break
    bundle.metadata["clf_loss_trace"] = losses
    return bundle


def few_shot_augment(
    train: list[ContractData],
    shots: list[ContractData],
    composition: tuple[int, int],
    task: str,
    seed: int = 0,
) -> list[ContractData]:
    """Extend the labeled set with (n_safe, n_vulnerable) target contracts."""
    n_safe, n_vuln = composition
    safe_pool = [c for c in shots if c.label is Label.SAFE]
    vuln_pool = [c for c in shots if _task_label(c, task) == 1]
    if len(safe_pool) < n_safe or len(vuln_pool) < n_vuln:
        raise InsufficientShots(
            f"need {n_safe} safe / {n_vuln} vulnerable, "
            f"pool has {len(safe_pool)} / {len(vuln_pool)}"
        )
    rng = np.random.default_rng(seed)
    picked_safe = [safe_pool[i] for i in rng.choice(len(safe_pool), n_safe, replace=False)]
    picked_vuln = [vuln_pool[i] for i in rng.choice(len(vuln_pool), n_vuln, replace=False)]
    return list(train) + picked_safe + picked_vuln


def train_pipeline(
    labeledA: list[ContractData],
    corpusB: list[ContractData],
    vocab: Vocabulary,
    profile: EncoderProfile,
    cfg: TrainConfig,
    kernel: KernelConfig = KernelConfig(),
    mode: str = "full",
    align: bool = True,
    tasks: Sequence[str] = ("re", "wr", "ut"),
) -> ModelBundle:
    """Stage 1 on both dialects (skipped when align=False) followed by one
    frozen classifier head per task, trained on dialect-A labels only."""
    stage1_cfg = cfg if align else replace(cfg, max_epochs=0)
    bundle = train_alignment(
        labeledA, corpusB, vocab, profile, stage1_cfg, kernel, mode=mode
    )
    for task in tasks:
        bundle = train_classifier(labeledA, bundle, task, cfg)
    return bundle


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return float(e / (1.0 + e))


def predict_contract(
    c: ContractData, bundle: ModelBundle, task: str
) -> tuple[float, bool]:
    """Probability and 0.5-threshold label for one contract."""
    if task not in bundle.classifiers:
        raise MissingClassifier(task)
    if c.n_functions == 0:
        raise EmptyContract(c.contract_id)
    feats = contract_features(bundle, [c])
    logit = classifier_forward(bundle.classifiers[task], feats, train=False)
    prob = _sigmoid(float(logit.data[0]))
    return prob, prob > 0.5


def gradient_check(
    evaluator: Callable[[], ad.Tensor],
    tensors: dict[str, ad.Tensor],
    eps: float,
    n_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    The evaluator must rebuild its computation from the live tensor data on
    every call. Coordinates are subsampled across all tensors.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    loss = evaluator()
    for t in tensors.values():
        t.grad = None
    loss.backward()
    grads = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in tensors.items()
    }
    coords = [
        (name, idx)
        for name, t in sorted(tensors.items())
        for idx in range(t.data.size)
    ]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in picked]
    worst = 0.0
    for name, idx in coords:
        flat = tensors[name].data.reshape(-1)
        saved = flat[idx]
        flat[idx] = saved + eps
        hi = evaluator().item()
        flat[idx] = saved - eps
        lo = evaluator().item()
        flat[idx] = saved
        num = (hi - lo) / (2.0 * eps)
        ana = float(grads[name].reshape(-1)[idx])
        rel = abs(num - ana) / max(abs(num) + abs(ana), 1e-4)
        worst = max(worst, rel)
    return worst
