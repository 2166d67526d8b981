"""
Loading experiment configs and writing reports, path dumps and covariation dumps.
"""

import json
import logging
import os
from typing import Iterable, Optional, Sequence, Tuple

import pandas as pd

from .errors import ConfigError
from .experiments import ExperimentConfig, ExperimentReport, parse_config
from .martingales import MartingalePath
from .quadvar import CovariationProcess
from .settings import ensure_dir, get_settings

logger = logging.getLogger(__name__)


def load_config(path: str) -> ExperimentConfig:
    """Read and validate an experiment config JSON file."""
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    return parse_config(data)


def output_dir_for(config: ExperimentConfig, out: Optional[str] = None) -> str:
    return ensure_dir(out or config.output or get_settings().output_dir)


def save_report(report: ExperimentReport, out_dir: str) -> Tuple[str, str]:
    """Write <name>.json and <name>.csv; returns both paths."""
    ensure_dir(out_dir)
    json_path = os.path.join(out_dir, f"{report.name}.json")
    csv_path = os.path.join(out_dir, f"{report.name}.csv")
    with open(json_path, "w") as f:
        f.write(report.model_dump_json(indent=2))
    report.to_frame().to_csv(csv_path, index=False)
    logger.info("report %s (run %s) written to %s", report.name, report.run_id, out_dir)
    return json_path, csv_path


def save_frame(frame: pd.DataFrame, path: str) -> str:
    parent = os.path.dirname(path)
    if parent:
        ensure_dir(parent)
    frame.to_csv(path, index=False)
    return path


def load_report(path: str) -> ExperimentReport:
    with open(path, "r") as f:
        return ExperimentReport.model_validate_json(f.read())


def dump_paths_csv(paths: Iterable[MartingalePath], file: str) -> str:
    """Columns replication, k, t_k, v_1..v_d (one row per grid point)."""
    frames = []
    for r, path in enumerate(paths):
        df = pd.DataFrame(path.values, columns=[f"v_{i + 1}" for i in range(path.dim)])
        df.insert(0, "t_k", path.times)
        df.insert(0, "k", range(path.times.size))
        df.insert(0, "replication", r)
        frames.append(df)
    if not frames:
        raise ValueError("no paths to dump")
    return save_frame(pd.concat(frames, ignore_index=True), file)


def dump_covariation_csv(processes: Sequence[CovariationProcess], file: str) -> str:
    """Columns replication, k, m_11..m_dd (row-major running covariation matrices)."""
    frames = []
    for r, proc in enumerate(processes):
        K1, d, _ = proc.matrices.shape
        cols = [f"m_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        df = pd.DataFrame(proc.matrices.reshape(K1, d * d), columns=cols)
        df.insert(0, "k", range(K1))
        df.insert(0, "replication", r)
        frames.append(df)
    if not frames:
        raise ValueError("no covariation processes to dump")
    return save_frame(pd.concat(frames, ignore_index=True), file)
