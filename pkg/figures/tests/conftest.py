import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

FIGURES_DIR = Path(__file__).resolve().parent.parent

sys.path.insert(0, str(FIGURES_DIR))


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    """Desk-scale pipeline outputs, produced through the batch CLI only."""
    out = tmp_path_factory.mktemp("run")
    cfg = {
        "schema": 1,
        "output_dir": str(out),
        "mesh": {"target_h": 0.12, "view_fraction": 0.25,
                 "view_offset": math.pi / 4},
        "inputs": {"ell_bound": 4, "include_f2": False},
        "noise": {"d_noise": 0.001, "norm_kind": "l1", "seed": 101},
        "prior": {"kind": "sigmoid", "n_kl": 30, "pool_size": 60},
        "sampler": {"n_warmup": 60, "n_samples": 150, "seed": 202},
    }
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    for cmd in ("generate", "bayes"):
        proc = subprocess.run(
            [sys.executable, "-m", "aetpipe", "--config", str(cfg_path),
             "--deterministic", cmd],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    return out
