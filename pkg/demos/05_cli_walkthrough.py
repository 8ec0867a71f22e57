"""
Command line walkthrough
========================

The same workflow as the ``avselect`` command, driven from Python into a
temporary work directory: synthesize, train the proposed model and both
baseline halves, then evaluate and compare.
"""

# %%
import json
import tempfile
from pathlib import Path

from avselect import cli
from avselect.model import TINY_CONFIG

config = {
    "model": TINY_CONFIG.to_dict(),
    "mix": {"window_s": 0.5, "off_duration_range_s": [0.1, 0.4],
            "test_off_duration_range_s": [0.0, 0.5], "enrollment_s": 0.5},
    "train": {"epochs_max": 2, "batch_size": 4},
    "condition": "noise",
    "paths": {"data_dir": "data", "run_dir": "runs/proposed"},
    "sizes": {"train": 16, "val": 4, "test": 4},
    "speakers": {"train": 8, "val": 4, "test": 4},
}

work = Path(tempfile.mkdtemp())
(work / "run.json").write_text(json.dumps(config, indent=1))


def avselect(*args):
    code = cli.main(["--workdir", str(work), *args])
    print(f"$ avselect {' '.join(args)}  -> exit {code}")


# %%
avselect("synth", "--config", "run.json")
avselect("train", "--config", "run.json")
avselect("train", "--config", "run.json", "--baseline", "visual", "--run-dir", "runs/visual")
avselect("train", "--config", "run.json", "--baseline", "voiceprint",
         "--run-dir", "runs/voiceprint")

# %%
avselect("eval", "--run-dir", "runs/proposed", "--data-dir", "data")
avselect("eval", "--null", "--data-dir", "data")
avselect("compare", "--proposed", "runs/proposed", "--visual", "runs/visual",
         "--voiceprint", "runs/voiceprint", "--data-dir", "data")

# %%
# Config errors exit with code 2 before any work is done.
(work / "bad.json").write_text(json.dumps(dict(config, epochs=3)))
avselect("synth", "--config", "bad.json")
print("work directory:", work)
