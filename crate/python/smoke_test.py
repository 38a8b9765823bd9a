#!/usr/bin/env python3
"""Smoke test for the simfair extension module.

Builds (or reuses) the cdylib, imports it as `simfair`, and exercises the
main entry points at a small scenario scale. Run from the repo root:

    python3 python/smoke_test.py [--release]
"""

import argparse
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_module(release: bool) -> Path:
    profile = "release" if release else "debug"
    cmd = ["cargo", "build", "-p", "simfair-python"]
    if release:
        cmd.append("--release")
    subprocess.run(cmd, cwd=REPO, check=True)
    lib = REPO / "target" / profile / "libsimfair.so"
    if not lib.exists():  # macOS fallback
        lib = REPO / "target" / profile / "libsimfair.dylib"
    if not lib.exists():
        sys.exit(f"extension library not found under target/{profile}")
    stage = Path(tempfile.mkdtemp(prefix="simfair-py"))
    shutil.copy(lib, stage / "simfair.so")
    return stage


def approx(a, b, tol):
    return abs(a - b) <= tol


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--release", action="store_true")
    args = parser.parse_args()

    sys.path.insert(0, str(build_module(args.release)))
    import simfair

    print(f"simfair {simfair.__version__}")

    # Numeric primitives against known values.
    assert approx(simfair.exp_e1(1.0), 0.596347, 1e-6)
    assert approx(simfair.rate_upper_bound(1.0, 1.0), math.log2(math.e) * 0.596347, 1e-5)
    assert simfair.quantize_phase(1.9 * math.pi, 1) == 0.0
    proj = simfair.project_simplex([0.5, 0.7])
    assert approx(proj[0], 0.4, 1e-6) and approx(proj[1], 0.6, 1e-6)
    fair = simfair.fairness_indices([1.0, 3.0])
    assert approx(fair[0], 1.0 / 3.0, 1e-12)
    assert approx(fair[1], 0.8, 1e-12)
    assert approx(fair[2], 0.75, 1e-12)
    print("primitives ok")

    cfg = simfair.ScenarioConfig(users=2, elements=9, layers=2, power_dbm=10.0, bits=8, seed=7)
    print(cfg)

    icsi = simfair.optimize_icsi(cfg, seed=7)
    assert icsi["converged"]
    assert icsi["min_rate"] > 0.0
    assert len(icsi["rates"]) == 2
    assert len(icsi["power_watts"]) == 2
    assert approx(sum(icsi["power_watts"]), 0.01, 1e-9)  # 10 dBm budget
    assert icsi["fairness"]["jain"] > 0.9
    trace = icsi["objective_trace"]
    assert all(b >= a * (1.0 - 1e-8) for a, b in zip(trace, trace[1:]))
    rerun = simfair.optimize_icsi(cfg, seed=7)
    assert rerun["min_rate"] == icsi["min_rate"]
    print(f"icsi ok: min rate {icsi['min_rate']:.3f} bits/s/Hz in {icsi['iterations']} rounds")

    scfg = simfair.ScenarioConfig(users=2, elements=4, layers=2, power_dbm=-10.0, bits=3, seed=7)
    scsi = simfair.optimize_scsi(scfg, mc_draws=500, seed=7)
    assert scsi["rate_bound"] > 0.0
    assert scsi["mc_mean_min_rate"] <= scsi["rate_bound"] + scsi["mc_ci_half_width"]
    ztrace = scsi["objective_trace"]
    assert all(b <= a * (1.0 + 1e-8) for a, b in zip(ztrace, ztrace[1:]))
    print(f"scsi ok: bound {scsi['rate_bound']:.4f}, monte carlo {scsi['mc_mean_min_rate']:.4f}")

    # Config validation surfaces as ValueError.
    try:
        simfair.ScenarioConfig(users=2, elements=5, layers=2)
    except ValueError:
        pass
    else:
        sys.exit("expected ValueError for a non-square grid")
    print("smoke test passed")


if __name__ == "__main__":
    main()
