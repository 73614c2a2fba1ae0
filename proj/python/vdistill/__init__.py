"""Query-aware keyframe selection and frame merging for long-video token budgets."""

import json

from ._core import (
    Error,
    __version__,
    budget,
    cumulative_curve,
    distill,
    gen,
    merge_frame,
    select_keyframes,
)
from ._core import build_manifest_json as _build_manifest_json


def build_manifest(catalog, lengths=(2000, 4000, 6000, 8000, 10000), cases_per_length=600, seed=0):
    """Seeded needle-in-a-haystack manifest as a dict (same bytes as the CLI's niah build)."""
    return json.loads(_build_manifest_json(list(catalog), list(lengths), cases_per_length, seed))


__all__ = [
    "Error",
    "__version__",
    "budget",
    "build_manifest",
    "cumulative_curve",
    "distill",
    "gen",
    "merge_frame",
    "select_keyframes",
]
