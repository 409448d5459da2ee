#!/usr/bin/env python3
"""The whole toolchain through the command line, end to end.

Everything the library does is reachable through the `otconvert` command
(also `python3 -m otconvert`). This demo shells out the same way a user
would, in a scratch directory:

  synth      make a shifted-Gaussian source/target pair on disk
  convert    sinkvc the source against the reference, emit report + config
  convert    rerun purely from the emitted run config -> identical bytes
  eval       score converted-vs-reference with w2 / fd / the bound check
  train-not  fit a small conditional neural map on a two-condition dataset

Run: python3 demos/06_cli_pipeline.py
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path


def run(*argv, expect=0):
    cmd = [sys.executable, "-m", "otconvert", *map(str, argv)]
    print(f"$ otconvert {' '.join(map(str, argv))}")
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != expect:
        sys.stderr.write(proc.stderr)
        raise SystemExit(f"exit {proc.returncode}, expected {expect}")
    return proc.stdout


def main() -> None:
    with tempfile.TemporaryDirectory() as scratch:
        work = Path(scratch)
        data = work / "data"

        run("synth", "--task", "gauss_shift", "--n", 160,
            "--dim", 4, "--seed", 3, "--out-dir", data)
        print(f"  -> {sorted(p.name for p in data.iterdir())}\n")

        out = work / "converted.otf"
        report = json.loads(run(
            "convert", "--source", data / "source.otf",
            "--reference", data / "target.otf",
            "--method", "sinkvc", "--out", out))
        print(f"  -> {out.name}: {report['frames']} frames, "
              f"mean cost {report['mean_transport_cost']:.4f}, "
              f"k={report['k']}\n")

        first = out.read_bytes()
        out.unlink()
        run("convert", "--config", f"{out}.run.cfg")
        print(f"  -> rerun from emitted config byte-identical: "
              f"{out.read_bytes() == first}\n")

        scores = json.loads(run(
            "eval", "--a", out, "--b", data / "target.otf",
            "--metrics", "w2,fd,theorem1"))
        print(f"  -> converted vs reference: W2^2 {scores['w2_squared']:.4f}, "
              f"FD {scores['frechet']:.4f}, "
              f"bound holds: {scores['theorem1']['holds']}\n")

        cond = work / "cond"
        run("synth", "--task", "two_conditions", "--n", 400, "--dim", 2,
            "--seed", 7, "--out-dir", cond)
        summary = json.loads(run(
            "train-not", "--dataset-spec", cond / "dataset.spec",
            "--out-model", work / "pair.otm", "--seed", 7,
            "--config", write_cfg(work)))
        checkpoint = summary["checkpoint"]
        print(f"  -> trained {summary['outer_iterations']} outer iterations; "
              "per-condition held-out W2^2 of the map:")
        for cond_eval in checkpoint["conditions"]:
            print(f"     {cond_eval['label']:>6}: {cond_eval['w2sq_map']:.3f} "
                  f"(source untouched: {cond_eval['w2sq_source']:.3f})")


def write_cfg(work: Path) -> Path:
    cfg = work / "small-not.cfg"
    cfg.write_text("command = train-not\nhidden_dims = 32,32\n"
                   "batch_size = 64\ntotal_outer_iterations = 400\n"
                   "checkpoint_every = 400\nlr_decay = cosine\n"
                   "eval_samples = 64\n")
    return cfg


if __name__ == "__main__":
    main()
