"""End-to-end CLI pipeline on a synthetic FRB catalog: simulate, fit, P_C.

A planted three-burst cluster is added to the simulated catalog before
fitting.  Uses the JSON configs in scripts/configs.

    python3 scripts/synthetic_pipeline.py --workdir results/pipeline
"""
import argparse
import json
import shutil
from pathlib import Path

import numpy as np

from kcontact.catalog import read_catalog, write_catalog
from kcontact.cli import main as cli
from kcontact.geometry import frb_domain

CONFIGS = Path(__file__).parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", default="results/pipeline")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    for name in ("simulate.json", "fit.json", "pc.json"):
        shutil.copy(CONFIGS / name, work / name)

    if cli(["simulate", "--config", str(work / "simulate.json")]) != 0:
        raise SystemExit("simulate failed")
    cat = read_catalog(work / "sim" / "catalog.tsv", frb_domain())
    # plant a cluster: three bursts sharing a sky position and DM
    base = np.array([150.0, 45.0, 600.0])
    offsets = np.array([[0.0, 0.0, 0.0], [0.05, -0.03, 0.8], [-0.04, 0.02, -0.5]])
    for j, off in enumerate(offsets):
        cat.ids.append(f"R{j}")
        cat.labels.append("planted")
        cat.position_noise.append(cat.position_noise[0])
    cat.observed = np.vstack([cat.observed, base + offsets])
    cat.dm_sigma = np.concatenate([cat.dm_sigma, [1.0, 1.0, 1.0]])
    write_catalog(work / "sim" / "catalog.tsv", cat)

    code = cli(["--workers", str(args.workers), "fit", "--config", str(work / "fit.json")])
    print(f"fit exit code {code}")
    cli(["pc", "--config", str(work / "pc.json")])
    print(json.dumps(json.loads((work / "pc" / "pc.json").read_text())["results"], indent=2))


if __name__ == "__main__":
    main()
