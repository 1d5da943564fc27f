"""The command-line pipeline end to end on a generated scenario file.

Writes a small scenario, then runs the four subcommands against it:

    exitbound solve-pde     scenario.scn   fields + pde.json
    exitbound simulate      scenario.scn   exit samples + simulate.json
    exitbound verify-bound  scenario.scn   bound_report.json + verdict table
    exitbound convergence   scenario.scn   refinement orders

Every artifact lands under --out/<label>/; reports are deterministic for a
fixed seed, whatever the worker count.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
from pathlib import Path

SCENARIO = """\
label = "walkthrough"

[region]
kind = "interval"
lo = 0.0
hi = 1.0

[process1]
start = [0.35]
drift = ["0"]
diffusion = [["1"]]

[process2]
start = [0.65]
drift = ["-0.5*y1"]
diffusion = [["1"]]

[simulation]
dt = 1e-3
n_replicates = 4000
coupling = "shared"
bridge = true
seed = 20260814

[pde]
resolution = 201
refinements = 2
"""


def run(out: Path, command: str, scenario: Path) -> None:
    argv = [
        sys.executable, "-m", "exitbound.cli",
        command, str(scenario), "--out", str(out),
    ]
    print(f"\n$ exitbound {command} {scenario.name} --out {out.name}")
    proc = subprocess.run(argv, capture_output=True, text=True)
    sys.stdout.write(proc.stdout)
    sys.stderr.write(proc.stderr)
    if proc.returncode != 0:
        raise SystemExit(f"{command} exited {proc.returncode}")


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        scenario = root / "walkthrough.scn"
        scenario.write_text(SCENARIO)
        out = root / "artifacts"

        for command in ("solve-pde", "simulate", "verify-bound", "convergence"):
            run(out, command, scenario)

        print("\nartifacts:")
        for path in sorted((out / "walkthrough").iterdir()):
            print(f"  {path.name:22s} {path.stat().st_size:8d} bytes")

        report = json.loads((out / "walkthrough" / "bound_report.json").read_text())
        print(f"\nbound holds: {report['holds']}   margin: {report['margin']:.5f}")


if __name__ == "__main__":
    main()
