"""Command line, checkpoints, data ingestion and reports."""
from .checkpoint import Checkpoint, CheckpointError, from_model, load, save, to_model
from .io import DataError, load_defaults, load_guidance, read_activity_csv, read_molecules
from .report import build_report, molecule_records, validate_report
from .synthetic import PROPERTIES, fraction, satisfies

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "DataError",
    "PROPERTIES",
    "build_report",
    "fraction",
    "from_model",
    "load",
    "load_defaults",
    "load_guidance",
    "molecule_records",
    "read_activity_csv",
    "read_molecules",
    "satisfies",
    "save",
    "to_model",
    "validate_report",
]
