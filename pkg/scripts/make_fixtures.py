"""Regenerate the model and data fixtures under tests/data.

Needs xgboost (``pip install .[fixtures]``).  Inputs are the MASS copies of
the Pima Indians diabetes and Wisconsin breast-cancer biopsy data in
tests/data/raw.  Features are min-max scaled to [0, 1], rows shuffled with a
fixed seed, and the first 80% used for training.  Values are rounded to
float32, the precision XGBoost uses internally.

    python scripts/make_fixtures.py
"""

import csv
import json
from pathlib import Path

import numpy as np
import xgboost as xgb

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"
SEED = 2019


def read_pima():
    rows = []
    for name in ("Pima.tr.csv", "Pima.te.csv"):
        with open(DATA / "raw" / name) as fh:
            for rec in csv.DictReader(fh):
                feats = [float(rec[k]) for k in ("npreg", "glu", "bp", "skin", "bmi", "ped", "age")]
                rows.append((feats, 1 if rec["type"] == "Yes" else 0))
    return rows


def read_biopsy():
    rows = []
    with open(DATA / "raw" / "biopsy.csv") as fh:
        for rec in csv.DictReader(fh):
            vals = [rec[f"V{i}"] for i in range(1, 10)]
            if "NA" in vals:
                continue
            rows.append(([float(v) for v in vals], 1 if rec["class"] == "malignant" else 0))
    return rows


def normalize_shuffle(rows):
    X = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    lo, hi = X.min(axis=0), X.max(axis=0)
    X = (X - lo) / np.where(hi > lo, hi - lo, 1.0)
    # XGBoost compares float32 inputs; storing float32 values keeps the data
    # and the dumped thresholds consistent.
    X = X.astype(np.float32).astype(np.float64)
    perm = np.random.default_rng(SEED).permutation(len(y))
    return X[perm], y[perm]


def write_libsvm(path, X, y):
    with open(path, "w", newline="\n") as fh:
        for xi, yi in zip(X, y):
            feats = " ".join(f"{j + 1}:{v:.17g}" for j, v in enumerate(xi) if v != 0.0)
            fh.write(f"{yi} {feats}".rstrip() + "\n")


def train(name, rows, n_trees, depth):
    X, y = normalize_shuffle(rows)
    write_libsvm(DATA / f"{name}.libsvm", X, y)
    n_train = int(0.8 * len(y))
    dtrain = xgb.DMatrix(X[:n_train], label=y[:n_train])
    params = {
        "objective": "binary:logistic",
        "max_depth": depth,
        "eta": 0.3,
        "base_score": 0.5,
        "tree_method": "exact",
        "seed": SEED,
    }
    booster = xgb.train(params, dtrain, num_boost_round=n_trees)
    dump = [json.loads(t) for t in booster.get_dump(dump_format="json")]
    with open(DATA / f"{name}_xgb.json", "w", newline="\n") as fh:
        json.dump(dump, fh, indent=1)
    pred = booster.predict(xgb.DMatrix(X[n_train:])) > 0.5
    acc = float((pred == y[n_train:]).mean())
    meta = {"dataset": name, "rows": len(y), "train_rows": n_train, "dim": X.shape[1],
            "trees": n_trees, "max_depth": depth, "test_accuracy": acc}
    with open(DATA / f"{name}_meta.json", "w", newline="\n") as fh:
        json.dump(meta, fh, indent=1)
    print(meta)


if __name__ == "__main__":
    train("diabetes", read_pima(), 20, 5)
    train("breast_cancer", read_biopsy(), 4, 6)
