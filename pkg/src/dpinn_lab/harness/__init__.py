"""Configuration, orchestration and artifact emission for experiments."""
from .cli import main
from .config import config_hash, load, resolve, validate
from .io import emit_solution_csv, emit_trace_csv, read_csv
from .runner import run_baseline, run_diagnose, run_elm, run_solve, run_sweep
