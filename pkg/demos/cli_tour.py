"""The same workflow driven entirely through the command line.

Every step shells out to the installed ``dpxlab`` entry point: train two
models, explain an input, compare the explanation files, and privatize a
heatmap.  Each command prints a JSON document; this script just strings them
together the way a shell session would.

Run:  python3 demos/cli_tour.py
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

ws = Path(tempfile.mkdtemp(prefix="dpxlab-cli-"))


def dpxlab(*argv):
    cmd = [sys.executable, "-m", "dpxlab", *[str(a) for a in argv]]
    print("$ dpxlab " + " ".join(str(a) for a in argv))
    out = subprocess.run(cmd, capture_output=True, text=True, check=True)
    doc = json.loads(out.stdout)
    print(json.dumps(doc, indent=2, sort_keys=True)[:400])
    print()
    return doc


common = ("--workspace", ws, "--synthetic", "images", "--size", "12", "--n", "240",
          "--epochs", "6", "--batch-size", "32", "--lr", "0.05", "--seed", "3")

dpxlab("train", *common, "--out", "base")
dp = dpxlab("train", *common, "--mode", "dp", "--epsilon", "4", "--out", "dp4")
print(f"dp run spent epsilon = {dp['provenance']['epsilon_spent']:.3f}\n")

# one evaluation image to explain under both models
import numpy as np

from dpxlab import write_tensor
from dpxlab.nn import make_synthetic_images

probe = make_synthetic_images(1, size=12, seed=50)[0][0]
write_tensor(probe, ws / "probe.dpxt")

dpxlab("explain", "--workspace", ws, "--model", "base", "--input", "probe.dpxt",
       "--explainer", "saliency", "--out", "attr_base.dpxt")
dpxlab("explain", "--workspace", ws, "--model", "dp4", "--input", "probe.dpxt",
       "--explainer", "saliency", "--out", "attr_dp4.dpxt")

dpxlab("metrics", "ds", "--workspace", ws, "--a", "attr_base.dpxt", "--b", "attr_dp4.dpxt")
dpxlab("metrics", "pis", "--workspace", ws, "--a", "attr_base.dpxt", "--b", "attr_dp4.dpxt")

dpxlab("ldp", "apply", "--workspace", ws, "--input", "attr_base.dpxt",
       "--epsilon", "4", "--seed", "9", "--out", "released.dpxt")

print(f"workspace with all artifacts: {ws}")
