"""
Tests for result file writing.
"""
import json
import math

import numpy as np
import pytest

from src.analysis.observables import correlations
from src.models.fockspace import ManyBodyState, enumerate_basis
from src.models.model import ModelParams, build_hamiltonian
from src.models.spectral import eigh
from src.utils.failure_tracker import FailureReason, FailureTracker
from src.utils.output_writer import (
    OutputWriter,
    correlation_frames,
    eigenvector_frame,
    matrix_frame,
    round_floats,
)


def test_round_floats():
    rounded = round_floats({'a': 1.0 / 3.0, 'b': [np.float64(2.5), math.nan], 'c': 1 + 2j, 'd': np.int64(4)})
    assert rounded['a'] == float("%.12g" % (1.0 / 3.0))
    assert rounded['b'] == [2.5, None]
    assert rounded['c'] == {'re': 1.0, 'im': 2.0}
    assert rounded['d'] == 4 and isinstance(rounded['d'], int)


def test_write_table_csv_and_json(tmp_path):
    records = [{'x': 0.1 + 0.2, 'label': 'a'}, {'x': 1.0, 'label': 'b'}]
    csv_writer = OutputWriter(str(tmp_path / "csv"))
    path = csv_writer.write_table("values", records)
    assert open(path).read() == "x,label\n0.3,a\n1,b\n"

    json_writer = OutputWriter(str(tmp_path / "json"), fmt="json")
    path = json_writer.write_table("values", records)
    assert json.loads(open(path).read()) == [{'label': 'a', 'x': 0.3}, {'label': 'b', 'x': 1.0}]
    assert json_writer.written == [path]


def test_empty_table_keeps_header(tmp_path):
    writer = OutputWriter(str(tmp_path))
    path = writer.write_table("empty", [], columns=['index', 'energy'])
    assert open(path).read().strip() == "index,energy"


def test_failures_written_only_when_present(tmp_path):
    writer = OutputWriter(str(tmp_path))
    tracker = FailureTracker()
    assert writer.write_failures(tracker) is None
    tracker.track_failure("U=5", FailureReason.EMPTY_ENSEMBLE, "no samples")
    path = writer.write_failures(tracker)
    assert "U=5" in open(path).read()


def test_matrix_and_eigenvector_frames():
    H = build_hamiltonian(ModelParams(L=3, N=1))
    frame = matrix_frame(H)
    assert list(frame.columns) == ['row', 'col', 'value']
    assert len(frame) == 4
    system = eigh(H)
    vectors = eigenvector_frame(system, H.basis, states=[0])
    assert set(vectors['state']) == {0}
    assert float((vectors["amplitude"] ** 2).sum()) == pytest.approx(1.0, abs=1e-12)


def test_correlation_frames_use_one_based_sites():
    state = ManyBodyState.from_fock(enumerate_basis(3, 3), (0, 2, 1))
    frames = correlation_frames(correlations(state, max_order=3))
    assert set(frames) == {'c1', 'c2', 'c3'}
    assert frames['c1']['i'].tolist() == [1, 2, 3]
    assert len(frames['c2']) == 9 and len(frames['c3']) == 27
    row = frames['c2'][(frames['c2']['i'] == 2) & (frames['c2']['j'] == 3)]
    assert float(row['value'].iloc[0]) == 2.0
