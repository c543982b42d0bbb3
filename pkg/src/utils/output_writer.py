"""
Deterministic result files.

Tables go through pandas (CSV with float_format '%.12g') or JSON records;
every float in JSON output is rounded to 12 significant digits so identical
configurations produce byte-identical files.
"""
import json
import logging
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.analysis.observables import CorrelationSet
from src.models.fockspace import FockBasis
from src.models.model import HamiltonianMatrix
from src.models.spectral import EigenSystem
from src.utils.failure_tracker import FailureTracker

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"

Records = Union[pd.DataFrame, Sequence[Dict[str, Any]]]


def round_floats(value: Any) -> Any:
    """Recursively round floats to 12 significant digits; NaN and inf become None."""
    if isinstance(value, dict):
        return {str(k): round_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_floats(v) for v in value]
    if isinstance(value, np.ndarray):
        return round_floats(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return float(FLOAT_FORMAT % value) if math.isfinite(value) else None
    if isinstance(value, (complex, np.complexfloating)):
        return {'re': round_floats(value.real), 'im': round_floats(value.imag)}
    return value


class OutputWriter:
    """Writes tables and summaries into one output directory."""

    def __init__(self, out_dir: str, fmt: str = "csv"):
        self.out_dir = out_dir
        self.fmt = fmt
        self.written: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, filename: str) -> str:
        return os.path.join(self.out_dir, filename)

    def _record(self, path: str) -> str:
        self.written.append(path)
        logger.info(f"Wrote {path}")
        return path

    def write_table(self, name: str, records: Records, columns: Optional[List[str]] = None) -> str:
        """CSV or JSON records, depending on the configured format."""
        frame = records if isinstance(records, pd.DataFrame) else pd.DataFrame(list(records), columns=columns)
        if self.fmt == "json":
            return self.write_json(f"{name}.json", frame.to_dict(orient="records"))
        path = self.path(f"{name}.csv")
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self._record(path)

    def write_json(self, filename: str, payload: Any) -> str:
        path = self.path(filename)
        with open(path, "w") as f:
            json.dump(round_floats(payload), f, indent=2, sort_keys=True)
            f.write("\n")
        return self._record(path)

    def write_jsonl(self, filename: str, records: Iterable[Dict[str, Any]]) -> str:
        path = self.path(filename)
        with open(path, "w") as f:
            for record in records:
                f.write(json.dumps(round_floats(record), sort_keys=True) + "\n")
        return self._record(path)

    def write_failures(self, tracker: FailureTracker) -> Optional[str]:
        """failures.json, only when something failed."""
        if not len(tracker):
            return None
        path = self.path("failures.json")
        with open(path, "w") as f:
            f.write(tracker.export_failures() + "\n")
        logger.warning(tracker.get_formatted_failure_report())
        return self._record(path)


def eigenvalue_frame(system: EigenSystem) -> pd.DataFrame:
    return pd.DataFrame({'index': np.arange(len(system)), 'energy': system.eigenvalues})


def _split_complex(values: np.ndarray, name: str) -> Dict[str, np.ndarray]:
    """One real column, plus an imaginary column only for genuinely complex data."""
    values = np.asarray(values)
    columns = {name: values.real}
    if np.iscomplexobj(values) and np.any(values.imag != 0):
        columns[f"{name}_imag"] = values.imag
    return columns


def matrix_frame(H: Union[HamiltonianMatrix, np.ndarray]) -> pd.DataFrame:
    """Nonzero entries as (row, col, value)."""
    if isinstance(H, HamiltonianMatrix):
        rows, cols, values = H.nonzero_entries()
    else:
        entries = np.asarray(H)
        rows, cols = np.nonzero(entries)
        values = entries[rows, cols]
    return pd.DataFrame({'row': rows, 'col': cols, **_split_complex(values, 'value')})


def _occupation_label(occupations: np.ndarray) -> str:
    return " ".join(str(int(n)) for n in occupations)


def eigenvector_frame(system: EigenSystem, basis: FockBasis, states: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """(state, basis_index, occupations, amplitude) for nonzero amplitudes."""
    states = range(len(system)) if states is None else states
    labels = [_occupation_label(row) for row in basis.states]
    frames = []
    for k in states:
        column = system.eigenvectors[:, k]
        nonzero = np.flatnonzero(np.abs(column) > 0)
        frames.append(pd.DataFrame({
            'state': k,
            'basis_index': nonzero,
            'occupations': [labels[i] for i in nonzero],
            **_split_complex(column[nonzero], 'amplitude'),
        }))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=['state', 'basis_index', 'occupations', 'amplitude'])


def density_frame(densities: Dict[str, np.ndarray]) -> pd.DataFrame:
    """Site-resolved densities, one column per named profile, sites 1-based."""
    length = len(next(iter(densities.values())))
    return pd.DataFrame({'site': np.arange(1, length + 1), **{k: np.asarray(v).real for k, v in densities.items()}})


def correlation_frames(correlations: CorrelationSet) -> Dict[str, pd.DataFrame]:
    """c1, c2 and c3 as long tables with 1-based site columns."""
    frames = {'c1': pd.DataFrame({'i': np.arange(1, correlations.c1.size + 1), 'value': correlations.c1})}
    for name, tensor in (('c2', correlations.c2), ('c3', correlations.c3)):
        if tensor is None:
            continue
        index = np.indices(tensor.shape).reshape(tensor.ndim, -1) + 1
        columns = {axis: index[n] for n, axis in enumerate('ijk'[:tensor.ndim])}
        frames[name] = pd.DataFrame({**columns, 'value': tensor.reshape(-1).real})
    return frames
