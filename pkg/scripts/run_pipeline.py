"""Run every CLI stage on one config and print the headline results.

    python scripts/run_pipeline.py configs/congestion.toml --out out/congestion
"""

import argparse
import json
import sys
from pathlib import Path

from disclosure_mfg.cli import main

STAGES = ("solve", "optimize", "encode", "simulate", "verify")


def run(config: str, out: str, workers: int, stages) -> int:
    for stage in stages:
        code = main([stage, "--config", config, "--out", out, "--workers", str(workers)])
        manifest = Path(out) / f"manifest_{stage}.json"
        if manifest.exists():
            doc = json.loads(manifest.read_text(encoding="utf-8"))
            print(f"{stage:9s} exit {code}  {doc['timings_seconds']['total']:7.1f}s  {json.dumps(doc['results'], sort_keys=True)}")
        if code != 0:
            print(f"{stage} failed with exit code {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default="out")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--stages", nargs="+", default=list(STAGES), choices=STAGES)
    a = ap.parse_args()
    sys.exit(run(a.config, a.out, a.workers, a.stages))
