"""Run the acceptance experiment once and record its results as the test fixture.

The acceptance suite repeats the same run and compares samples and metrics
byte for byte against this record (the determinism criterion).

    python scripts/record_acceptance.py [--config configs/acceptance.json] [--out DIR]
"""
import argparse
import json
import logging
from pathlib import Path
import sys
import time

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from difpath import _accel, pipeline  # noqa: E402
from difpath.config import load_config  # noqa: E402
from test_acceptance import FIXTURE, _digest  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "acceptance.json"))
    ap.add_argument("--out", default=None, help="also write samples and report.json here")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    cfg = load_config(a.config)
    t0 = time.process_time()
    report, _ = pipeline.run_toy_experiment(cfg, out_dir=a.out)
    cpu = time.process_time() - t0
    record = {
        "backend": _accel.backend(),
        "config": cfg.to_dict(),
        "digest": _digest(report),
        "sample_sha256": report["sample_sha256"],
        "cpu_seconds": cpu,
        "results": {k: report[k] for k in ("fid_real_vs_real", "fid_real_vs_untrained",
                                           "fid_by_size", "triplet_ordering",
                                           "classifier_test_accuracy")},
        "triplet_accuracy": {k: v["overall_accuracy"] for k, v in report["triplet"].items()},
    }
    FIXTURE.parent.mkdir(parents=True, exist_ok=True)
    FIXTURE.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(json.dumps(record["results"], indent=2))
    print(f"triplet {record['triplet_accuracy']}")
    print(f"{cpu / 60:.1f} CPU-minutes; fixture -> {FIXTURE}")


if __name__ == "__main__":
    main()
