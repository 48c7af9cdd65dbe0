"""Synthetic multi-domain classification data with an unseen held-out domain.

Task class ``t`` has a mean on a circle of radius 3 in the first two
coordinates. A domain rotates that plane and adds a fixed offset; a fraction
of its records ("non-native") get extra noise. Records are stored as
JSON lines with keys ``x, y, d, native`` and optionally ``soft``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

CLASS_RADIUS = 3.0


class DataValidationError(ValueError):
    pass


class DatasetParseError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


@dataclass(frozen=True)
class DomainSpec:
    rotation_angle: float
    offset: tuple[float, ...]
    noise_scale: float = 1.0
    nonnative_fraction: float = 0.2
    nonnative_extra_noise: float = 1.0

    def validate(self, d: int, where: str) -> None:
        if len(self.offset) != d:
            raise DataValidationError(f"{where}.offset has length {len(self.offset)}, expected d={d}")
        if not self.noise_scale > 0:
            raise DataValidationError(f"{where}.noise_scale must be > 0")
        if not 0.0 <= self.nonnative_fraction <= 1.0:
            raise DataValidationError(f"{where}.nonnative_fraction must lie in [0, 1], got {self.nonnative_fraction}")
        if not self.nonnative_extra_noise > 0:
            raise DataValidationError(f"{where}.nonnative_extra_noise must be > 0")


@dataclass(frozen=True)
class GenConfig:
    d: int
    T: int
    N_seen: int
    samples_per_domain: int
    seed: int
    domains: tuple[DomainSpec, ...]
    unseen: DomainSpec

    def validate(self) -> None:
        if self.d < 2:
            raise DataValidationError("d must be >= 2")
        if self.T < 2:
            raise DataValidationError("T must be >= 2")
        if self.N_seen < 2:
            raise DataValidationError("N_seen must be >= 2")
        if self.samples_per_domain < 10:
            raise DataValidationError("samples_per_domain must be >= 10")
        if len(self.domains) != self.N_seen:
            raise DataValidationError(f"domains lists {len(self.domains)} specs for N_seen={self.N_seen}")
        for i, dom in enumerate(self.domains):
            dom.validate(self.d, f"domains[{i}]")
        self.unseen.validate(self.d, "unseen")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, raw: dict) -> "GenConfig":
        try:
            domains = tuple(_domain_from_dict(x) for x in raw["domains"])
            cfg = cls(
                d=int(raw["d"]),
                T=int(raw["T"]),
                N_seen=int(raw["N_seen"]),
                samples_per_domain=int(raw["samples_per_domain"]),
                seed=int(raw["seed"]),
                domains=domains,
                unseen=_domain_from_dict(raw["unseen"]),
            )
        except KeyError as exc:
            raise DataValidationError(f"missing config field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DataValidationError):
                raise
            raise DataValidationError(f"malformed config: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "GenConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _domain_from_dict(raw: dict) -> DomainSpec:
    raw = dict(raw)
    raw["offset"] = tuple(float(v) for v in raw["offset"])
    return DomainSpec(**raw)


def default_config(seed: int = 0, samples_per_domain: int = 2000) -> GenConfig:
    """Three seen domains plus one unseen domain, d=16, T=4.

    Seen rotations are 0, 0.5, 1.0 rad and each seen domain shifts its own
    block of four nuisance coordinates (2-5, 6-9, 10-13) by 2. The unseen
    domain is rotated by 0.75 rad, between seen domains 1 and 2, and carries
    no nuisance offset, so it matches none of the seen domains' signatures.
    """
    d = 16

    def offset(block: int) -> tuple[float, ...]:
        v = [0.0] * d
        for c in range(2 + 4 * block, 6 + 4 * block):
            v[c] = 2.0
        return tuple(v)

    domains = tuple(DomainSpec(angle, offset(j)) for j, angle in enumerate((0.0, 0.5, 1.0)))
    unseen = DomainSpec(0.75, (0.0,) * d)
    return GenConfig(d=d, T=4, N_seen=3, samples_per_domain=samples_per_domain, seed=seed,
                     domains=domains, unseen=unseen)


@dataclass
class Dataset:
    """Column-oriented records: features, task label, domain label, nativeness."""

    x: np.ndarray
    y: np.ndarray
    d: np.ndarray
    native: np.ndarray
    soft: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.d = np.asarray(self.d, dtype=np.int64)
        self.native = np.asarray(self.native, dtype=bool)
        m = len(self.x)
        if self.x.ndim != 2 or any(len(a) != m for a in (self.y, self.d, self.native)):
            raise DataValidationError("dataset columns are misaligned")
        if not np.all(np.isfinite(self.x)):
            raise DataValidationError("features must be finite")
        if m and (self.y.min() < 0 or self.d.min() < 0):
            raise DataValidationError("labels must be nonnegative")
        if self.soft is not None:
            self.soft = np.asarray(self.soft, dtype=np.float64)
            if self.soft.shape[0] != m or self.soft.ndim != 2:
                raise DataValidationError("soft labels must be an [m x N] matrix")
            if np.any(self.soft < 0) or np.any(np.abs(self.soft.sum(axis=1) - 1.0) > 1e-9):
                raise DataValidationError("soft label rows must be normalized")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def n_domain_classes(self) -> int:
        if self.soft is not None:
            return self.soft.shape[1]
        return int(self.d.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.d[idx], self.native[idx],
                       None if self.soft is None else self.soft[idx])

    def with_domains(self, d: np.ndarray) -> "Dataset":
        return replace(self, d=np.asarray(d, dtype=np.int64).copy(), soft=None)

    def with_soft(self, soft: np.ndarray) -> "Dataset":
        return replace(self, soft=np.asarray(soft, dtype=np.float64).copy())

    def equals(self, other: "Dataset") -> bool:
        same = (np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and np.array_equal(self.d, other.d) and np.array_equal(self.native, other.native))
        if self.soft is None or other.soft is None:
            return same and self.soft is None and other.soft is None
        return same and np.array_equal(self.soft, other.soft)


def rotation(angle: float, d: int) -> np.ndarray:
    r = np.eye(d)
    c, s = math.cos(angle), math.sin(angle)
    r[:2, :2] = [[c, -s], [s, c]]
    return r


def class_means(T: int, d: int) -> np.ndarray:
    angles = 2 * np.pi * np.arange(T) / T
    mu = np.zeros((T, d))
    mu[:, 0] = CLASS_RADIUS * np.cos(angles)
    mu[:, 1] = CLASS_RADIUS * np.sin(angles)
    return mu


def _sample_domain(rng, cfg: GenConfig, spec: DomainSpec, label: int, m: int) -> Dataset:
    mu = class_means(cfg.T, cfg.d)
    y = rng.integers(cfg.T, size=m)
    nonnative = rng.random(m) < spec.nonnative_fraction
    eps = rng.normal(scale=spec.noise_scale, size=(m, cfg.d))
    extra = rng.normal(scale=spec.nonnative_extra_noise, size=(m, cfg.d))
    eps = eps + extra * nonnative[:, None]
    x = (mu[y] + eps) @ rotation(spec.rotation_angle, cfg.d).T + np.asarray(spec.offset)
    return Dataset(x, y, np.full(m, label), ~nonnative)


def _concat(parts: list[Dataset]) -> Dataset:
    return Dataset(
        np.vstack([p.x for p in parts]),
        np.concatenate([p.y for p in parts]),
        np.concatenate([p.d for p in parts]),
        np.concatenate([p.native for p in parts]),
    )


def generate(config: GenConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Return (train, test_seen, test_unseen); deterministic in ``config.seed``.

    Each seen domain is split 80/20 into train/test. The unseen domain gets
    ``samples_per_domain`` records, all in test_unseen, labelled ``N_seen``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    train, test = [], []
    for j, spec in enumerate(config.domains):
        ds = _sample_domain(rng, config, spec, j, config.samples_per_domain)
        n_train = int(round(0.8 * len(ds)))
        perm = rng.permutation(len(ds))
        train.append(ds.subset(np.sort(perm[:n_train])))
        test.append(ds.subset(np.sort(perm[n_train:])))
    unseen = _sample_domain(rng, config, config.unseen, config.N_seen, config.samples_per_domain)
    return _concat(train), _concat(test), unseen


def oracle_task_error(config: GenConfig, ds: Dataset) -> float:
    """Error of the nearest-class-mean rule given the true domain transform."""
    specs = list(config.domains) + [config.unseen]
    mu = class_means(config.T, config.d)[:, :2]
    wrong = 0
    for j in np.unique(ds.d):
        sel = ds.d == j
        spec = specs[j]
        x = (ds.x[sel] - np.asarray(spec.offset)) @ rotation(spec.rotation_angle, config.d)
        dist = ((x[:, None, :2] - mu[None]) ** 2).sum(axis=2)
        wrong += int(np.sum(dist.argmin(axis=1) != ds.y[sel]))
    return wrong / len(ds)


def linear_probe_accuracy(ds: Dataset, seed: int = 0, epochs: int = 20) -> float:
    """Held-out accuracy of a linear softmax domain classifier on raw features."""
    from datlab.nets import MlpSpec, fit_classifier, predict_proba

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    half = len(ds) // 2
    tr, te = perm[:half], perm[half:]
    mean, std = ds.x[tr].mean(axis=0), ds.x[tr].std(axis=0) + 1e-12
    xs = (ds.x - mean) / std
    n = int(ds.d.max()) + 1
    fit = fit_classifier(xs[tr], ds.d[tr], MlpSpec((ds.x.shape[1], n), output="softmax"),
                         epochs=epochs, alpha=0.1, seed=seed)
    pred = predict_proba(fit.params, xs[te]).argmax(axis=1)
    return float(np.mean(pred == ds.d[te]))


# --------------------------------------------------------------------------
# JSON-lines I/O


def dumps_dataset(ds: Dataset) -> str:
    lines = []
    for i in range(len(ds)):
        rec = {"x": ds.x[i].tolist(), "y": int(ds.y[i]), "d": int(ds.d[i]), "native": bool(ds.native[i])}
        if ds.soft is not None:
            rec["soft"] = ds.soft[i].tolist()
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds))


def read_dataset(path) -> Dataset:
    path = Path(path)
    xs, ys, ds_, natives, softs = [], [], [], [], []
    has_soft = None
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                raise DatasetParseError(path, line_no, "empty record")
            try:
                rec = json.loads(line)
                x = [float(v) for v in rec["x"]]
                y, d, native = rec["y"], rec["d"], rec["native"]
            except json.JSONDecodeError as exc:
                raise DatasetParseError(path, line_no, f"invalid JSON: {exc.msg}") from None
            except (KeyError, TypeError) as exc:
                raise DatasetParseError(path, line_no, f"missing or malformed field: {exc}") from None
            if not (isinstance(y, int) and isinstance(d, int) and isinstance(native, bool)):
                raise DatasetParseError(path, line_no, "y and d must be integers, native a boolean")
            if xs and len(x) != len(xs[0]):
                raise DatasetParseError(path, line_no, "feature width differs from first record")
            if has_soft is None:
                has_soft = "soft" in rec
            elif ("soft" in rec) != has_soft:
                raise DatasetParseError(path, line_no, "soft field must be present on all records or none")
            xs.append(x)
            ys.append(y)
            ds_.append(d)
            natives.append(native)
            if "soft" in rec:
                softs.append([float(v) for v in rec["soft"]])
    if not xs:
        raise DatasetParseError(path, 0, "no records")
    try:
        return Dataset(np.array(xs), np.array(ys), np.array(ds_), np.array(natives),
                       np.array(softs) if softs else None)
    except (DataValidationError, ValueError) as exc:
        raise DatasetParseError(path, 0, str(exc)) from None
