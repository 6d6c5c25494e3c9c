"""Deterministic seed derivation for labeled random substreams.

Every stochastic consumer in the package draws from its own substream derived
from one master seed and a textual label, so adding or reordering consumers
never perturbs the draws of existing ones.
"""

from __future__ import annotations

import hashlib


def substream_seed(master_seed: int, *labels) -> int:
    """Derive a 64-bit child seed from a master seed and a label path.

    The derivation hashes the decimal master seed together with the string
    forms of the labels, so it is stable across platforms and sessions.
    """
    text = "|".join([str(int(master_seed))] + [str(part) for part in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
