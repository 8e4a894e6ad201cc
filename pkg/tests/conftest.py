import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
ACCEPT_DIR = REPO_ROOT / "out" / "acceptance"


def run_cli(*args, cwd=None):
    """Run the CLI in a subprocess and return the CompletedProcess."""
    return subprocess.run(
        [sys.executable, "-m", "collapselab.cli", *map(str, args)],
        capture_output=True,
        text=True,
        cwd=cwd or REPO_ROOT,
    )


def cached_cli_run(out_dir: Path, cli_args: list, expected_config: dict):
    """Run a CLI experiment once and reuse byte-stable cached outputs after.

    Outputs are reused only when the manifest verifies (every digest intact)
    and the recorded config matches; set COLLAPSELAB_FRESH=1 to force a rerun.
    Reuse is equivalent to a rerun because outputs are byte-deterministic
    for a fixed config.
    """
    from collapselab.io import verify_manifest

    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists() and not os.environ.get("COLLAPSELAB_FRESH"):
        try:
            ok, _ = verify_manifest(out_dir)
            recorded = json.loads(manifest_path.read_text())["config"]
        except Exception:
            ok, recorded = False, None
        if ok and recorded == expected_config:
            return
    out_dir.mkdir(parents=True, exist_ok=True)
    proc = run_cli(*cli_args, "--out", out_dir)
    if proc.returncode not in (0, 3):
        raise RuntimeError(
            f"CLI run failed ({proc.returncode}):\n{proc.stdout}\n{proc.stderr}"
        )


def read_csv_rows(path: Path) -> list[dict]:
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


@pytest.fixture(scope="session")
def accept_dir():
    ACCEPT_DIR.mkdir(parents=True, exist_ok=True)
    return ACCEPT_DIR
