"""End-to-end run on the synthetic dengue-like series.

simulate -> fit (EM and NR) -> diagnose -> compare against an NB-ARMA and a
static ZINB alternative. Everything lands in ``--out``.

    python3 scripts/dengue_like_workflow.py --out runs/dengue_like
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from zinbarma.cli import main
from zinbarma.io import parse_model_config, write_json


def _variant(cfg_dict, name, **changes):
    d = json.loads(json.dumps(cfg_dict))
    d["name"] = name
    d.pop("true_params", None)
    d.pop("study", None)
    d.pop("simulate", None)
    for key, val in changes.items():
        if val is None:
            d.pop(key, None)
        else:
            d[key] = val
    return d


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="runs/dengue_like")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "series.csv"

    steps = [["simulate", "--config", "dengue_like", "--out", str(data), "--seed", str(args.seed)]]
    for method in ("em", "nr"):
        steps.append(["fit", "--data", str(data), "--config", "dengue_like", "--method", method,
                      "--report", str(out / f"fit_{method}.json"), "--seed", str(args.seed)])
    steps.append(["diagnose", "--report", str(out / "fit_em.json"), "--data", str(data),
                  "--out", str(out / "diagnostics"), "--seed", str(args.seed)])

    base = parse_model_config("dengue_like").source
    alternatives = {
        "nb_arma": _variant(base, "nb_arma", m_covariates=None),
        "zinb_static": _variant(base, "zinb_static", orders={"p1": 0, "q1": 0, "p2": 0, "q2": 0}),
    }
    paths = ["dengue_like"]
    for name, d in alternatives.items():
        write_json(out / f"{name}.json", d)
        paths.append(str(out / f"{name}.json"))
    steps.append(["compare", "--data", str(data), "--configs", ",".join(paths), "--out", str(out / "compare.csv")])

    for argv_ in steps:
        code = main(argv_)
        if code:
            print(f"step {argv_[0]} exited with {code}", file=sys.stderr)
            return code
    with open(out / "compare.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            print(f"{row['model']:>12}: AIC {float(row['aic']):9.3f}  BIC {float(row['bic']):9.3f}  "
                  f"MSE {float(row['mse']):7.3f}  MAD {float(row['mad']):6.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
