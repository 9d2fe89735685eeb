"""Build every cached artifact the slow acceptance tests read.

Run from the repository root:

    python3 tests/prewarm_acceptance.py

Safe to interrupt and rerun; complete runs are skipped, partial ones are
rebuilt from scratch. The full cold build is a few hours of single-core
compute (40 full-budget training runs plus three controller value fits).
"""

import os
import sys
import time

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from test_acceptance import prewarm_all

if __name__ == "__main__":
    t0 = time.perf_counter()
    prewarm_all()
    print(f"acceptance cache ready in {time.perf_counter() - t0:.0f}s", flush=True)
