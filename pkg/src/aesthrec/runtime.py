"""Process-level runtime knobs."""

import os


def thread_count():
    """Worker cap from AESTHREC_THREADS; defaults to 1 (sequential)."""
    raw = os.environ.get("AESTHREC_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
