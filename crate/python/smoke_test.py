#!/usr/bin/env python3
"""Smoke test for the modcell_py extension module.

Builds nothing itself: run `cargo build -p modcell-py` first (or pass
--release and build in release mode). The script stages the cdylib under a
temp directory as `modcell_py.so` and exercises the main surface: fixtures,
validation, a full PCR run, a small color-picker loop, and a growth assay.
"""

import argparse
import importlib
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def stage_module(profile: str) -> None:
    built = REPO / "target" / profile / "libmodcell_py.so"
    if not built.is_file():
        sys.exit(f"{built} not found — run `cargo build -p modcell-py` first")
    staging = Path(tempfile.mkdtemp(prefix="modcell_py_"))
    shutil.copy2(built, staging / "modcell_py.so")
    sys.path.insert(0, str(staging))


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--release", action="store_true", help="use target/release")
    args = parser.parse_args()
    stage_module("release" if args.release else "debug")
    modcell = importlib.import_module("modcell_py")

    # Fixtures and validation.
    fixtures = modcell.fixtures()
    assert "pcr_workflow" in fixtures and "rpl_workcell" in fixtures
    report = modcell.validate(fixtures["pcr_workflow"], "rpl")
    assert report["ok"], report
    report = modcell.validate(fixtures["pcr_workflow"], "bio")
    codes = {f["code"] for f in report["findings"]}
    assert not report["ok"] and "UNDEFINED_MODULE" in codes, report
    print("validate: ok")

    # Well helpers and scoring.
    assert modcell.well_name(0) == "A1" and modcell.well_index("H12") == 95
    assert abs(modcell.color_score((85, 85, 85), (120, 120, 120)) - 3**0.5 * 35) < 1e-9
    print("helpers: ok")

    # A simulated lab over real REST sockets.
    lab = modcell.SimLab("rpl", seed=7, adapter="rest")
    assert set(lab.module_names()) == set(lab.ping().keys())
    assert all(lab.ping().values())
    about = lab.about("sealer")
    assert about["model"] == "a4s_sealer"
    print("lab up:", ", ".join(lab.module_names()))

    # Full PCR run.
    record = lab.pcr()
    assert record["status"] == "completed", record
    assert len(record["step_results"]) == 14
    snapshot = lab.snapshot()
    assert snapshot["stations"]["handoff"] is not None
    print("pcr: completed in", len(record["step_results"]), "steps")

    # Small closed-loop color-picker experiment on a fresh lab.
    with tempfile.TemporaryDirectory() as publish:
        lab2 = modcell.SimLab("rpl", seed=7)
        cp = lab2.color_picker(total_samples=16, batch_size=8, seed=7, publish_dir=publish)
        best = [row["best_so_far"] for row in cp["samples"]]
        assert len(best) == 16 and best == sorted(best, reverse=True), best
        assert (Path(publish) / cp["experiment_id"] / "batch_0" / "record.json").is_file()
        lab2.shutdown()
    print(f"color picker: best score {cp['final_score']:.2f} after {len(best)} samples")

    # Growth assay on the differently named workcell.
    lab3 = modcell.SimLab("bio", seed=3)
    ga = lab3.growth_assay(incubation_hours=12.0)
    assert ga["flagged"] is None
    assert ga["mean_t12"][0] > ga["mean_t0"][0], "untreated wells must grow"
    assert ga["mean_t12"][-1] - ga["mean_t0"][-1] < 0.05, "top dose must not grow"
    lab3.shutdown()
    print("growth assay: dose-response ok")

    lab.shutdown()
    print("smoke test passed")


if __name__ == "__main__":
    main()
