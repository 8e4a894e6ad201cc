import subprocess
import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
FIG1_DIR = REPO_ROOT / "out" / "acceptance" / "fig1"


def make_hist_csv(path: Path, cells: dict[tuple[int, int], dict]) -> Path:
    """Write a synthetic histogram CSV in the documented schema.

    cells maps (d, n) to {"counts": [...20 ints...], "mean": float}.
    """
    lines = ["experiment,kernel,d,n,bin_left,bin_right,count,mean_wmax"]
    for (d, n), spec in cells.items():
        counts = spec["counts"]
        bins = len(counts)
        for i, count in enumerate(counts):
            left, right = i / bins, (i + 1) / bins
            lines.append(
                f"test,gaussian,{d},{n},{left:.17g},{right:.17g},{count},{spec['mean']:.17g}"
            )
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="session")
def fig1_hist_csv():
    """The real fig1 histogram CSV, produced through the collapselab CLI.

    Reuses the acceptance run's cached output when present; otherwise runs
    the preset (slow: a few minutes).
    """
    path = FIG1_DIR / "fig1_hist.csv"
    if not path.exists():
        FIG1_DIR.mkdir(parents=True, exist_ok=True)
        proc = subprocess.run(
            [sys.executable, "-m", "collapselab.cli", "collapse",
             "--preset", "fig1", "--out", str(FIG1_DIR)],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"fig1 generation failed: {proc.stderr}")
    return path
