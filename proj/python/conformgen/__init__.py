"""Python access to the conformance test generation core."""

from ._core import (
    ConformgenError,
    canonical_section_number,
    compare,
    default_config,
    edit_distance,
    estimate_fix_time,
    ingest_text,
    line_recall,
    normalize_line,
    normalize_lines,
    report,
    run_pipeline,
    score_directories,
    similarity,
    speedup,
    stage_names,
    validation_rate,
)

__all__ = [
    "ConformgenError",
    "canonical_section_number",
    "compare",
    "default_config",
    "edit_distance",
    "estimate_fix_time",
    "ingest_text",
    "line_recall",
    "normalize_line",
    "normalize_lines",
    "report",
    "run_pipeline",
    "score_directories",
    "similarity",
    "speedup",
    "stage_names",
    "validation_rate",
]
