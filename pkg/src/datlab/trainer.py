"""Training loops for DAT, reDAT and the pooling / accent-specific baselines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from datlab import autodiff as ad
from datlab import theory
from datlab.datagen import Dataset
from datlab.nets import (
    DatModel,
    MlpSpec,
    build_dat_model,
    domain_loss,
    fit_classifier,
    forward_classifier,
    forward_generator,
    forward_task,
    predict_proba,
    task_loss,
)
from datlab.relabel import assign, kmeans_fit

METHODS = ("pool", "onehot_embed", "linear_embed", "dat", "redat_unsup", "redat_soft")
ADVERSARIAL = ("dat", "redat_unsup", "redat_soft")
ACCENT_SPECIFIC = {"onehot_embed": "onehot", "linear_embed": "linear"}


class TrainValidationError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    method: str = "dat"
    alpha: float = 0.03
    lam: float = 0.1
    lambda_warmup_steps: int | None = None  # None: one epoch
    batch_size: int = 64
    epochs: int = 120
    seed: int = 0
    k: int = 8
    embed_dim: int = 16
    generator_hidden: tuple[int, ...] = (32, 32)
    classifier_hidden: tuple[int, ...] = (32, 32)
    task_hidden: tuple[int, ...] = (32,)
    embedding_width: int = 4
    unseen_domain_id: int = 0
    probe_epochs: int = 30
    codebook_size: int = 32

    def __post_init__(self):
        for name in ("generator_hidden", "classifier_hidden", "task_hidden"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))

    def validate(self) -> None:
        if self.method not in METHODS:
            raise TrainValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.alpha > 0:
            raise TrainValidationError("alpha must be > 0")
        if self.lam < 0 or (self.method in ADVERSARIAL and not self.lam > 0):
            raise TrainValidationError("lam must be > 0 for adversarial methods and >= 0 otherwise")
        if self.lambda_warmup_steps is not None and self.lambda_warmup_steps < 0:
            raise TrainValidationError("lambda_warmup_steps must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainValidationError("batch_size and epochs must be >= 1")
        if self.method == "redat_unsup" and self.k < 2:
            raise TrainValidationError("k must be >= 2 for redat_unsup")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise TrainValidationError(f"unknown TrainConfig fields: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        for name in ("generator_hidden", "classifier_hidden", "task_hidden"):
            out[name] = list(out[name])
        return out


def lambda_schedule(step: int, lam: float, warmup_steps: int) -> float:
    """Linear ramp from 0 to ``lam`` over ``warmup_steps``, then constant."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return lam
    return lam * step / warmup_steps


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    domain_targets: np.ndarray  # hard int labels or soft rows
    domain_ids: np.ndarray  # hard ids fed to accent-specific task nets


def train_step_dat(model: DatModel, batch: Batch, alpha: float, lam_t: float) -> tuple[float, float]:
    """One SGD step of the three DAT update rules.

    G moves along -(dL_R/dG - lam_t dL_C/dG), C along -dL_C/dC and R along
    -dL_R/dR. A single backward pass over L_R + L_C realizes all three
    because the classifier branch reads z through a gradient reversal.
    """
    if len(batch.x) == 0:
        raise TrainValidationError("empty batch")
    z = forward_generator(model.generator, batch.x)
    p_task = forward_task(model.task_net, z, model.domain_feature_node(batch.domain_ids))
    p_dom = forward_classifier(model.domain_classifier, z, reverse=True, lam=lam_t)
    l_r = task_loss(p_task, batch.y)
    l_c = domain_loss(p_dom, batch.domain_targets)
    params = model.parameters()
    ad.zero_grad(params)
    ad.backward(ad.add(l_r, l_c))
    ad.sgd_step(params, alpha)
    return _exact(l_r, p_task, batch.y), _exact(l_c, p_dom, batch.domain_targets)


def _exact(loss, probs, targets) -> float:
    # a floored log hides an infinite loss; surface it so divergence is caught
    return math.inf if ad.hits_log_floor(probs, targets) else float(loss.value)


def train_step_task(model: DatModel, batch: Batch, alpha: float) -> float:
    """Task-loss-only step used by pooling and accent-specific baselines."""
    z = forward_generator(model.generator, batch.x)
    p_task = forward_task(model.task_net, z, model.domain_feature_node(batch.domain_ids))
    l_r = task_loss(p_task, batch.y)
    params = model.generator.parameters() + model.task_net.parameters()
    if model.domain_embedding is not None:
        params.append(model.domain_embedding)
    ad.zero_grad(params)
    ad.backward(l_r)
    ad.sgd_step(params, alpha)
    return _exact(l_r, p_task, batch.y)


@dataclass
class TrainTrace:
    task_losses: list[float] = field(default_factory=list)
    domain_losses: list[float] = field(default_factory=list)
    lambdas: list[float] = field(default_factory=list)
    domain_accuracy: float | None = None


@dataclass
class TrainedModel:
    model: DatModel
    method: str
    n_seen_domains: int
    unseen_domain_id: int = 0


def _domain_targets(config: TrainConfig, train_set: Dataset, soft_labels) -> tuple[np.ndarray, int]:
    if config.method == "redat_soft":
        soft = soft_labels if soft_labels is not None else train_set.soft
        if soft is None:
            raise TrainValidationError("redat_soft requires soft domain labels")
        soft = np.asarray(soft, dtype=np.float64)
        if soft.shape[0] != len(train_set) or np.any(np.abs(soft.sum(axis=1) - 1) > 1e-9):
            raise TrainValidationError("soft labels must be normalized rows aligned with the dataset")
        return soft, soft.shape[1]
    n = int(train_set.d.max()) + 1
    if config.method == "redat_unsup" and n != config.k:
        raise TrainValidationError(
            f"redat_unsup requires a dataset relabeled into k={config.k} classes, found {n}"
        )
    return train_set.d, n


def train(config: TrainConfig, train_set: Dataset, soft_labels=None) -> tuple[TrainedModel, TrainTrace]:
    config.validate()
    targets, n_domain_classes = _domain_targets(config, train_set, soft_labels)
    if n_domain_classes < 2:
        raise TrainValidationError("training data must contain at least two domain classes")
    n_seen = int(train_set.d.max()) + 1
    rng = np.random.default_rng(config.seed)
    model = build_dat_model(
        train_set.x.shape[1],
        n_domain_classes,
        int(train_set.y.max()) + 1,
        embed_dim=config.embed_dim,
        generator_hidden=config.generator_hidden,
        classifier_hidden=config.classifier_hidden,
        task_hidden=config.task_hidden,
        lam=config.lam,
        domain_feature=ACCENT_SPECIFIC.get(config.method, "none"),
        n_domain_inputs=n_seen,
        embedding_width=config.embedding_width,
        seed=int(rng.integers(2**63)),
    )
    m = len(train_set)
    steps_per_epoch = math.ceil(m / config.batch_size)
    warmup = steps_per_epoch if config.lambda_warmup_steps is None else config.lambda_warmup_steps
    trace = TrainTrace()
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(m)
        for start in range(0, m, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = Batch(train_set.x[idx], train_set.y[idx], targets[idx], train_set.d[idx])
            if config.method in ADVERSARIAL:
                lam_t = lambda_schedule(step, config.lam, warmup)
                l_r, l_c = train_step_dat(model, batch, config.alpha, lam_t)
                trace.lambdas.append(lam_t)
                trace.domain_losses.append(l_c)
            else:
                l_r = train_step_task(model, batch, config.alpha)
            trace.task_losses.append(l_r)
            if not math.isfinite(l_r) or (trace.domain_losses and not math.isfinite(trace.domain_losses[-1])):
                raise TrainingDiverged(f"non-finite loss at step {step} ({config.method}, seed {config.seed})")
            if not all(np.all(np.isfinite(p.value)) for p in model.parameters()):
                raise TrainingDiverged(f"non-finite parameters at step {step}")
            step += 1
    if config.method in ADVERSARIAL:
        z = forward_generator(model.generator, train_set.x)
        probs = forward_classifier(model.domain_classifier, z).value
        ref = targets if targets.ndim == 1 else targets.argmax(axis=1)
        trace.domain_accuracy = float(np.mean(probs.argmax(axis=1) == ref))
    return TrainedModel(model, config.method, n_seen, config.unseen_domain_id), trace


# --------------------------------------------------------------------------
# Evaluation


def embed(trained: TrainedModel | DatModel | None, x: np.ndarray) -> np.ndarray:
    """Generator outputs; ``None`` stands for the identity (raw features)."""
    if trained is None:
        return np.asarray(x, dtype=np.float64)
    model = trained.model if isinstance(trained, TrainedModel) else trained
    return forward_generator(model.generator, x).value


def predict_task(trained: TrainedModel, ds: Dataset) -> np.ndarray:
    model = trained.model
    ids = np.where(ds.d < trained.n_seen_domains, ds.d, trained.unseen_domain_id)
    z = forward_generator(model.generator, ds.x)
    probs = forward_task(model.task_net, z, model.domain_feature_node(ids)).value
    return probs.argmax(axis=1)


def domain_name(d: int, n_seen: int) -> str:
    return str(d) if d < n_seen else "unseen"


def evaluate(trained: TrainedModel, test_set: Dataset, predictions: np.ndarray | None = None) -> dict:
    """Task error per (domain, nativeness) cell plus a per-domain ``avg`` cell.

    Records whose domain id is at least the number of seen domains are
    reported under ``unseen``; accent-specific models receive the configured
    ``unseen_domain_id`` as their domain feature for them. Empty cells are
    omitted.
    """
    pred = predict_task(trained, test_set) if predictions is None else predictions
    wrong = pred != test_set.y
    out: dict[tuple[str, str], float] = {}
    for d in np.unique(test_set.d):
        name = domain_name(int(d), trained.n_seen_domains)
        in_dom = test_set.d == d
        for label, sel in (("native", in_dom & test_set.native), ("nonnative", in_dom & ~test_set.native)):
            if sel.any():
                out[(name, label)] = float(wrong[sel].mean())
        out[(name, "avg")] = float(wrong[in_dom].mean())
    return out


def domain_probe(trained, dataset: Dataset, seed: int = 0, epochs: int = 30, hidden=(32,),
                 labels: np.ndarray | None = None) -> float:
    """Held-out accuracy of a fresh classifier predicting domain from frozen embeddings."""
    z = embed(trained, dataset.x)
    y = dataset.d if labels is None else np.asarray(labels)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(z))
    half = len(z) // 2
    tr, te = perm[:half], perm[half:]
    mean, std = z[tr].mean(axis=0), z[tr].std(axis=0) + 1e-12
    zs = (z - mean) / std
    n = int(y.max()) + 1
    spec = MlpSpec((z.shape[1], *hidden, n), "tanh", "softmax")
    fit = fit_classifier(zs[tr], y[tr], spec, epochs=epochs, alpha=0.1, seed=seed)
    pred = predict_proba(fit.params, zs[te]).argmax(axis=1)
    return float(np.mean(pred == y[te]))


def embedding_jsd(trained, dataset: Dataset, codebook_size: int = 32, seed: int = 0) -> float:
    """Unnormalized JSD between per-domain histograms over a shared k-means codebook."""
    z = embed(trained, dataset.x)
    if len(z) < codebook_size:
        raise TrainValidationError(f"{len(z)} points cannot fill a codebook of {codebook_size}")
    codebook = kmeans_fit(z, codebook_size, seed=seed, n_restarts=3)
    codes = assign(z, codebook.centroids)
    hists = []
    for d in np.unique(dataset.d):
        counts = np.bincount(codes[dataset.d == d], minlength=codebook_size).astype(np.float64)
        hists.append(counts / counts.sum())
    return theory.jsd(hists)


# --------------------------------------------------------------------------
# Reports


@dataclass
class MetricsReport:
    method: str
    seed: int
    cells: list[dict]
    probe_acc: float
    emb_jsd: float
    config: dict
    final_task_loss: float
    final_domain_loss: float | None = None
    domain_train_accuracy: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricsReport":
        return cls(**raw)

    def raw_error(self, domain: str, nativeness: str) -> float | None:
        for c in self.cells:
            if c["domain"] == domain and c["nativeness"] == nativeness:
                return c["raw_error"]
        return None

    def normalize(self, reference_raw: float | None) -> None:
        for c in self.cells:
            if reference_raw is None or reference_raw == 0:
                c["normalized_error"] = None
            else:
                c["normalized_error"] = c["raw_error"] / reference_raw


REFERENCE_CELL = ("0", "native")
CSV_HEADER = "method,domain,nativeness,raw_error,normalized_error,probe_acc,emb_jsd,seed"


def run_method(config: TrainConfig, train_set: Dataset, test_seen: Dataset, test_unseen: Dataset,
               soft_labels=None) -> tuple[MetricsReport, TrainTrace]:
    """Train one method and measure errors, probe accuracy and embedding JSD."""
    trained, trace = train(config, train_set, soft_labels)
    # test sets keep their original labels; relabeling only affects training
    n_seen = int(test_seen.d.max()) + 1
    trained.n_seen_domains = n_seen
    test_all = Dataset(
        np.vstack([test_seen.x, test_unseen.x]),
        np.concatenate([test_seen.y, test_unseen.y]),
        np.concatenate([test_seen.d, np.maximum(test_unseen.d, n_seen)]),
        np.concatenate([test_seen.native, test_unseen.native]),
    )
    errors = evaluate(trained, test_all)
    order = [str(d) for d in range(n_seen)] + ["unseen"]
    cells = []
    for dom in order:
        for nat in ("native", "nonnative", "avg"):
            if (dom, nat) in errors:
                cells.append({"domain": dom, "nativeness": nat, "raw_error": errors[(dom, nat)],
                              "normalized_error": None})
    report = MetricsReport(
        method=config.method,
        seed=config.seed,
        cells=cells,
        probe_acc=domain_probe(trained, test_seen, seed=config.seed, epochs=config.probe_epochs),
        emb_jsd=embedding_jsd(trained, test_seen, config.codebook_size, seed=config.seed),
        config=config.to_dict(),
        final_task_loss=trace.task_losses[-1],
        final_domain_loss=trace.domain_losses[-1] if trace.domain_losses else None,
        domain_train_accuracy=trace.domain_accuracy,
    )
    return report, trace


def csv_rows(report: MetricsReport) -> list[str]:
    def fmt(v):
        return "" if v is None else repr(float(v))

    return [
        ",".join([report.method, c["domain"], c["nativeness"], fmt(c["raw_error"]),
                  fmt(c["normalized_error"]), fmt(report.probe_acc), fmt(report.emb_jsd), str(report.seed)])
        for c in report.cells
    ]
