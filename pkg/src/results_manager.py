# src/results_manager.py
"""
Reading run configurations and writing run artifacts.

Every artifact is written to a temporary file in the destination directory
and renamed into place, so a reader never sees a half-written file.
"""

import csv
import io
import json
import logging
import os
import tempfile
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from src import config
from src.errors import ConfigError, ConfigFileNotFoundError, OutputError
from src.models.pulse import PixelPulse
from src.models.states import Trajectory

logger = logging.getLogger(__name__)

COMPLEX_RECORDS = ("beta", "sigma_minus")


def _json_default(value):
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def load_json_config(file_path: str) -> dict:
    """Loads a JSON document; a missing file or bad JSON is a configuration error."""
    try:
        with open(file_path, 'r') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigFileNotFoundError(f"Config file not found at: {file_path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{file_path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    except IOError as e:
        raise ConfigError(f"Failed to read config file: {file_path}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{file_path}: the top level must be a JSON object.")
    return data


def load_pulse(file_path: str) -> PixelPulse:
    data = load_json_config(file_path)
    try:
        return PixelPulse.from_dict(data)
    except KeyError as e:
        raise ConfigError(f"{file_path}: missing field {e}.") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{file_path}: invalid pulse ({e}).") from e


def load_pulse_set(file_path: str) -> Dict[str, PixelPulse]:
    """A pulse JSON written by save_pulses: {"drives": {name: pulse}}; a bare pulse is returned under ""."""
    data = load_json_config(file_path)
    try:
        if "drives" in data:
            return {name: PixelPulse.from_dict(entry) for name, entry in data["drives"].items()}
        return {"": PixelPulse.from_dict(data)}
    except KeyError as e:
        raise ConfigError(f"{file_path}: missing field {e}.") from e
    except (TypeError, ValueError, AttributeError) as e:
        raise ConfigError(f"{file_path}: invalid pulse ({e}).") from e


def atomic_write_text(file_path: str, text: str):
    """Writes text to a temporary sibling file, then renames it over file_path."""
    directory = os.path.dirname(os.path.abspath(file_path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(file_path))
        try:
            with os.fdopen(fd, 'w', newline='') as f:
                f.write(text)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_path, file_path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
    except OSError as e:
        raise OutputError(f"Failed to write output file: {file_path}") from e
    logger.debug("Wrote %s", file_path)


def save_json(file_path: str, data: dict):
    atomic_write_text(file_path, json.dumps(data, indent=4, default=_json_default) + "\n")


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(v) for v in row])
    return buffer.getvalue()


def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def save_csv(file_path: str, header: Sequence[str], rows: Iterable[Sequence]):
    atomic_write_text(file_path, _csv_text(header, rows))


def record_columns(trajectory: Trajectory) -> List[str]:
    """Complex records (field amplitudes) get _re/_im columns, the others their real part."""
    columns = []
    for name in sorted(trajectory.scalar_records):
        if name in COMPLEX_RECORDS:
            columns.extend([f"{name}_re", f"{name}_im"])
        else:
            columns.append(name)
    return columns


def save_trajectories(file_path: str, trajectories: Dict[str, Trajectory]):
    """Long-format CSV: one row per (save time, state label), time_ns first."""
    labels = sorted(trajectories)
    if not labels:
        raise ValueError("No trajectories to write.")
    columns = record_columns(trajectories[labels[0]])
    rows = []
    for label in labels:
        trajectory = trajectories[label]
        for i, t in enumerate(trajectory.save_times):
            row = [t / config.NS, label]
            for column in columns:
                if column.endswith("_re") and column[:-3] in trajectory.scalar_records:
                    row.append(float(np.real(trajectory.scalar_records[column[:-3]][i])))
                elif column.endswith("_im") and column[:-3] in trajectory.scalar_records:
                    row.append(float(np.imag(trajectory.scalar_records[column[:-3]][i])))
                else:
                    row.append(float(np.real(trajectory.record(column)[i])))
            rows.append(row)
    save_csv(file_path, ["time_ns", "state"] + columns, rows)


def save_pulses(file_path: str, pulses: Dict[str, PixelPulse], extra: Optional[dict] = None):
    data = {"drives": {name: pulse.to_dict() for name, pulse in pulses.items()}}
    if extra:
        data.update(extra)
    save_json(file_path, data)


class EpochLogWriter:
    """
    Streams the per-epoch cost log to `<path>.partial`, flushing every row,
    and renames it to `path` on close (also after a failed run).
    """

    def __init__(self, file_path: str, term_names: Sequence[str]):
        self.file_path = file_path
        self.partial_path = file_path + ".partial"
        self.term_names = list(term_names)
        try:
            os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
            self._file = open(self.partial_path, 'w', newline='')
        except OSError as e:
            raise OutputError(f"Failed to open epoch log: {self.partial_path}") from e
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(["epoch", "total"] + self.term_names)
        self._file.flush()
        self.rows = 0

    def append(self, entry):
        self._writer.writerow([_format_cell(v) for v in entry.to_row(self.term_names)])
        self._file.flush()
        self.rows += 1

    def close(self):
        if self._file.closed:
            return
        self._file.flush()
        os.fsync(self._file.fileno())
        self._file.close()
        os.replace(self.partial_path, self.file_path)
        logger.debug("Epoch log closed after %d rows: %s", self.rows, self.file_path)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False
