"""Shared test configuration.

Points the result cache at the repository's runs/cache directory so the
acceptance tests can reuse completed production runs instead of
re-simulating them.  Individual tests that need an isolated cache
override SBMLAB_CACHE themselves via monkeypatch.
"""

import os
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]

os.environ.setdefault("SBMLAB_CACHE", str(REPO / "runs" / "cache"))
