"""Command-line entry point: gen-data, relabel, train, verify-theory, compare.

Exit codes: 0 success, 2 validation, 3 I/O, 4 training divergence,
5 theory-verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from datlab import datagen, relabel, theory, trainer

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _fail(code: int, msg: str):
    raise CliError(code, msg)


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read {path}: {exc.strerror}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(EXIT_VALIDATION, f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})")


def _read_dataset(path) -> datagen.Dataset:
    try:
        return datagen.read_dataset(path)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read {path}: {exc.strerror}")
    except datagen.DatasetParseError as exc:
        _fail(EXIT_VALIDATION, str(exc))


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot write {path}: {exc.strerror}")


# --------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    if args.config:
        try:
            cfg = datagen.GenConfig.from_dict(_read_json(args.config))
        except datagen.DataValidationError as exc:
            _fail(EXIT_VALIDATION, f"config error: {exc}")
    else:
        cfg = datagen.default_config(seed=args.seed)
    train, test_seen, test_unseen = datagen.generate(cfg)
    out = Path(args.out)
    for name, ds in (("train", train), ("test_seen", test_seen), ("test_unseen", test_unseen)):
        _write_text(out / f"{name}.jsonl", datagen.dumps_dataset(ds))
    probe = datagen.linear_probe_accuracy(test_seen, seed=cfg.seed)
    oracle = datagen.oracle_task_error(cfg, test_seen)
    print(f"train={len(train)} test_seen={len(test_seen)} test_unseen={len(test_unseen)}")
    print(f"raw-feature domain probe accuracy={probe:.4f} ({'ok' if probe > 0.8 else 'BELOW 0.8'})")
    print(f"oracle task error (features + domain)={oracle:.4f} ({'ok' if oracle < 0.15 else 'ABOVE 0.15'})")
    return EXIT_OK


# --------------------------------------------------------------------------
# relabel


def cmd_relabel(args) -> int:
    ds = _read_dataset(args.data)
    if args.mode == "unsup" and not 1 <= args.k <= len(ds):
        _fail(EXIT_VALIDATION, f"--k must lie in [1, {len(ds)}], got {args.k}")
    clf = relabel.train_standalone_classifier(ds, epochs=args.epochs, seed=args.seed)
    sidecar: dict = {"mode": args.mode, "seed": args.seed}
    if args.mode == "unsup":
        emb = relabel.extract_embeddings(clf, ds)
        model = relabel.kmeans_fit(emb, args.k, seed=args.seed)
        out_ds = relabel.relabel_unsup(ds, model, emb)
        hist = np.bincount(out_ds.d, minlength=args.k)
        sidecar.update(
            k=args.k,
            inertia=model.inertia,
            silhouette=relabel.silhouette(emb, out_ds.d, seed=args.seed),
            label_histogram=hist.tolist(),
            agreement_with_original=relabel.best_permutation_agreement(out_ds.d, ds.d),
        )
    else:
        soft = relabel.make_soft_labels(clf, ds)
        out_ds = relabel.relabel_soft(ds, soft)
        sidecar.update(k=soft.shape[1], mean_max_soft=float(soft.max(axis=1).mean()))
    out = Path(args.out)
    _write_text(out, datagen.dumps_dataset(out_ds))
    _write_text(out.with_name(out.name + ".json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(json.dumps(sidecar, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# train


@dataclass
class ExperimentPlan:
    data_dir: Path
    runs: list[tuple[trainer.TrainConfig, Path]]
    seeds: list[int]
    out_dir: Path

    @classmethod
    def from_dict(cls, raw: dict, base: Path) -> "ExperimentPlan":
        try:
            data_dir = base / raw["data_dir"]
            out_dir = base / raw["out_dir"]
            seeds = [int(s) for s in raw["seeds"]]
            runs = []
            for entry in raw["methods"]:
                entry = dict(entry)
                train_path = entry.pop("train", None)
                path = base / train_path if train_path else data_dir / "train.jsonl"
                runs.append((trainer.TrainConfig.from_dict(entry), path))
        except KeyError as exc:
            _fail(EXIT_VALIDATION, f"plan is missing field {exc.args[0]!r}")
        except (TypeError, ValueError) as exc:
            _fail(EXIT_VALIDATION, f"plan error: {exc}")
        if not runs or not seeds:
            _fail(EXIT_VALIDATION, "plan needs at least one method and one seed")
        return cls(data_dir, runs, seeds, out_dir)


def _grid(plan: ExperimentPlan):
    """Runs in execution order: for each seed the reference method comes first."""
    ref_method = "pool" if any(c.method == "pool" for c, _ in plan.runs) else plan.runs[0][0].method
    ordered = sorted(plan.runs, key=lambda r: r[0].method != ref_method)
    for seed in plan.seeds:
        for cfg, path in ordered:
            yield ref_method, trainer.TrainConfig.from_dict({**cfg.to_dict(), "seed": seed}), path


def cmd_train(args) -> int:
    plan_path = Path(args.plan)
    plan = ExperimentPlan.from_dict(_read_json(plan_path), plan_path.parent)
    if plan.out_dir.exists() and any(plan.out_dir.iterdir()):
        _fail(EXIT_VALIDATION, f"output directory {plan.out_dir} is not empty; refusing to overwrite")
    test_seen = _read_dataset(plan.data_dir / "test_seen.jsonl")
    test_unseen = _read_dataset(plan.data_dir / "test_unseen.jsonl")
    cache: dict[Path, datagen.Dataset] = {}
    reference: dict[int, float | None] = {}
    rows = [trainer.CSV_HEADER]
    status = EXIT_OK
    for ref_method, cfg, path in _grid(plan):
        if path not in cache:
            cache[path] = _read_dataset(path)
        name = f"{cfg.method}_seed{cfg.seed}"
        try:
            report, _ = trainer.run_method(cfg, cache[path], test_seen, test_unseen)
        except trainer.TrainingDiverged as exc:
            print(f"{name}: diverged: {exc}", file=sys.stderr)
            status = EXIT_DIVERGED
            continue
        except trainer.TrainValidationError as exc:
            _fail(EXIT_VALIDATION, f"{name}: {exc}")
        if cfg.method == ref_method and cfg.seed not in reference:
            reference[cfg.seed] = report.raw_error(*trainer.REFERENCE_CELL)
        report.normalize(reference.get(cfg.seed))
        _write_text(plan.out_dir / f"{name}.json", json.dumps(report.to_dict(), indent=2) + "\n")
        rows.extend(trainer.csv_rows(report))
        print(f"{name}: probe_acc={report.probe_acc:.4f} emb_jsd={report.emb_jsd:.4f}")
    _write_text(plan.out_dir / "merged.csv", "\n".join(rows) + "\n")
    return status


# --------------------------------------------------------------------------
# verify-theory


def cmd_verify_theory(args) -> int:
    n, s = args.n, args.s
    if n < 2 or s < 2:
        _fail(EXIT_VALIDATION, "--n and --s must both be >= 2")
    rng = np.random.default_rng(args.seed)
    dists = theory.random_distributions(rng, n, s)
    _, inner_err = theory.verify_inner_max(dists, steps=args.steps)
    try:
        trace = theory.verify_minimax(n, s, seed=args.seed, steps=args.steps)
    except theory.OptimizationFailure as exc:
        print(f"minimax failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    target = -n * math.log(n)
    lines = ["step,value,jsd"] + [f"{t},{v!r},{j!r}" for t, (v, j) in enumerate(zip(trace.values, trace.jsds))]
    if args.out:
        _write_text(Path(args.out), "\n".join(lines) + "\n")
    ok = (inner_err < 1e-3 and trace.final_jsd < 1e-3 and abs(trace.final_value - target) < 1e-2
          and trace.max_pairwise_tv() < 0.02)
    print(f"inner-max sup error={inner_err:.3e}")
    print(f"final value={trace.final_value:.6f} target -n ln n={target:.6f}")
    print(f"final jsd={trace.final_jsd:.3e} max pairwise TV={trace.max_pairwise_tv():.3e}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


# --------------------------------------------------------------------------
# compare

REPORT_KEYS = {"method", "seed", "cells", "probe_acc", "emb_jsd", "config"}


def _load_report(path) -> trainer.MetricsReport:
    raw = _read_json(path)
    if not isinstance(raw, dict) or not REPORT_KEYS <= set(raw):
        _fail(EXIT_VALIDATION, f"{path}: not a metrics report")
    try:
        return trainer.MetricsReport.from_dict(raw)
    except TypeError as exc:
        _fail(EXIT_VALIDATION, f"{path}: {exc}")


def comparison_table(reports: list[trainer.MetricsReport]) -> str:
    columns = [(c["domain"], c["nativeness"]) for c in reports[0].cells]
    for r in reports[1:]:
        if [(c["domain"], c["nativeness"]) for c in r.cells] != columns:
            _fail(EXIT_VALIDATION, f"report for {r.method} seed {r.seed} has a different cell layout")
    columns = [c for c in columns if c[0] != "unseen" or c[1] == "avg"]
    use_norm = all(c["normalized_error"] is not None for r in reports for c in r.cells)
    key = "normalized_error" if use_norm else "raw_error"
    by_method: dict[str, list[trainer.MetricsReport]] = defaultdict(list)
    for r in reports:
        by_method[r.method].append(r)
    table = {}
    for method, rs in by_method.items():
        vals = []
        for dom, nat in columns:
            cell_vals = [c[key] for r in rs for c in r.cells if (c["domain"], c["nativeness"]) == (dom, nat)]
            vals.append(float(np.mean(cell_vals)))
        vals.append(float(np.mean([r.probe_acc for r in rs])))
        vals.append(float(np.mean([r.emb_jsd for r in rs])))
        table[method] = vals
    headers = [f"{d}/{n}" if d != "unseen" else "unseen" for d, n in columns] + ["probe", "emb_jsd"]
    best = [min(v[i] for v in table.values()) for i in range(len(headers))]
    width = max(12, max(len(m) for m in table) + 2)
    lines = [f"{key} (mean over seeds; * = best in column)",
             "method".ljust(width) + "".join(h.rjust(12) for h in headers)]
    for method, vals in table.items():
        cells = "".join((f"{v:.3f}" + ("*" if v == b else " ")).rjust(12) for v, b in zip(vals, best))
        lines.append(method.ljust(width) + cells)
    return "\n".join(lines)


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        _fail(EXIT_VALIDATION, "compare needs at least two report files")
    print(comparison_table([_load_report(p) for p in args.reports]))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="datlab", description=__doc__,
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    g = sub.add_parser("gen-data", help="generate synthetic train/test datasets", formatter_class=fmt)
    g.add_argument("--config", help="GenConfig JSON file; the built-in default config when omitted")
    g.add_argument("--seed", type=int, default=0, help="seed for the default config")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("relabel", help="relabel domains by k-means or soft labels", formatter_class=fmt)
    r.add_argument("--data", required=True, help="input JSONL dataset")
    r.add_argument("--mode", choices=("unsup", "soft"), default="unsup", help="hard k-means labels or soft labels")
    r.add_argument("--k", type=int, default=8, help="number of clusters (unsup)")
    r.add_argument("--seed", type=int, default=0, help="classifier and k-means seed")
    r.add_argument("--epochs", type=int, default=10, help="standalone classifier epochs")
    r.add_argument("--out", required=True, help="output JSONL; the sidecar goes to <out>.json")
    r.set_defaults(func=cmd_relabel)

    t = sub.add_parser("train", help="run an experiment plan", formatter_class=fmt)
    t.add_argument("--plan", required=True, help="ExperimentPlan JSON")
    t.add_argument("--jobs", type=int, default=1, help="concurrent runs (only 1 is supported)")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify-theory", help="numerically check the minimax/JSD equivalence",
                       formatter_class=fmt)
    v.add_argument("--n", type=int, default=3, help="number of domains")
    v.add_argument("--s", type=int, default=4, help="support size")
    v.add_argument("--seed", type=int, default=7, help="seed for the random distributions")
    v.add_argument("--steps", type=int, default=20_000, help="gradient steps for each check")
    v.add_argument("--out", help="CSV trace path (step,value,jsd)")
    v.set_defaults(func=cmd_verify_theory)

    c = sub.add_parser("compare", help="tabulate metrics reports", formatter_class=fmt)
    c.add_argument("reports", nargs="*", help="per-run report JSON files")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    if getattr(args, "jobs", 1) != 1:
        print("--jobs > 1 is not supported; runs execute sequentially", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
