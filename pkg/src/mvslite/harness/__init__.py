"""Scene synthesis, file formats, fusion, metrics, and pipeline orchestration."""
