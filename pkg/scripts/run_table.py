"""Desk-scale method comparison on the default synthetic data.

Trains every method for each seed and prints mean task error per cell,
domain-probe accuracy and embedding JSD. reDAT variants are relabeled from
a standalone domain classifier first.

    python3 scripts/run_table.py --seeds 0 1 2 3 4
"""

import argparse
import time

import numpy as np

from datlab import datagen, relabel, trainer


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--methods", nargs="+", default=list(trainer.METHODS))
    p.add_argument("--samples", type=int, default=2000, help="records per domain")
    p.add_argument("--k", type=int, default=8)
    args = p.parse_args()

    cfg = datagen.default_config(seed=0, samples_per_domain=args.samples)
    train, seen, unseen = datagen.generate(cfg)
    clf = relabel.train_standalone_classifier(train, seed=0)
    emb = relabel.extract_embeddings(clf, train)
    unsup = relabel.relabel_unsup(train, relabel.kmeans_fit(emb, args.k, seed=0), emb)
    soft = relabel.relabel_soft(train, relabel.make_soft_labels(clf, train))
    data_for = {"redat_unsup": unsup, "redat_soft": soft}

    rows = {}
    start = time.perf_counter()
    for method in args.methods:
        reports = []
        for seed in args.seeds:
            cfg_t = trainer.TrainConfig(method=method, seed=seed, k=args.k)
            rep, _ = trainer.run_method(cfg_t, data_for.get(method, train), seen, unseen)
            reports.append(rep)
        cells = [(c["domain"], c["nativeness"]) for c in reports[0].cells if c["nativeness"] == "avg"]
        errs = [np.mean([r.raw_error(*cell) for r in reports]) for cell in cells]
        rows[method] = errs + [np.mean([r.probe_acc for r in reports]), np.mean([r.emb_jsd for r in reports])]
        print(f"{method} done ({time.perf_counter() - start:.0f}s)", flush=True)

    header = [d if d == "unseen" else f"{d}/avg" for d, _ in cells] + ["probe", "emb_jsd"]
    print("method".ljust(14) + "".join(h.rjust(11) for h in header))
    for method, vals in rows.items():
        print(method.ljust(14) + "".join(f"{v:11.4f}" for v in vals))


if __name__ == "__main__":
    main()
