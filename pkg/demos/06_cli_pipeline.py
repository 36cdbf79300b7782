"""The command-line pipeline: train, eval, simulate, and a discount sweep.

Each command writes its artifacts plus a manifest under the output directory;
identical configurations and seeds reproduce the artifacts byte for byte.
"""

import json
import tempfile
from pathlib import Path

from supportq.cli import main

root = Path(tempfile.mkdtemp(prefix="supportq-demo-"))
run = root / "run"
common = ["--mode", "env", "--reward", "imit", "--demo-episodes", "60",
          "--epochs", "2", "--eval-episodes", "30", "--seed", "7"]

print(f"artifacts under {root}\n")
print("== train ==")
main(["train", *common, "--out-dir", str(run)])

print("\n== eval ==")
main(["eval", "--checkpoint", str(run / "checkpoint.npz"), *common, "--out-dir", str(run)])
report = json.loads((run / "report.json").read_text())
print(f"report.json keys: {sorted(k for k in report if not isinstance(report[k], list))}")

print("\n== simulate ==")
main(["simulate", "--checkpoint", str(run / "checkpoint.npz"), "--episodes", "40",
      *common, "--out-dir", str(run)])

print("\n== sweep over discount factors ==")
main(["sweep", "--gammas", "0.75,0.85,0.95", *common, "--out-dir", str(root / "sweep")])

print("\nfiles written:")
for path in sorted(run.iterdir()):
    print(f"  {path.name}")
