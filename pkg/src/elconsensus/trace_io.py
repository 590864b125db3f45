"""Flat CSV serialisation of :class:`SimTrace` (header row, LF endings, 17 significant digits)."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .simulate import SimTrace

_AXES = ("x", "y", "z")
_GROUPS = (("q", "q"), ("qd", "q_dot"), ("bhat", "b_hat"), ("s", "s"), ("tau", "tau"))


def trace_columns(n: int) -> list[str]:
    cols = ["t"]
    for i in range(1, n + 1):
        for prefix, _ in _GROUPS:
            cols += [f"{prefix}_{i}_{a}" for a in _AXES]
    cols.append("V")
    return cols


def trace_table(trace: SimTrace) -> np.ndarray:
    n = trace.n
    per_agent = np.concatenate([getattr(trace, attr) for _, attr in _GROUPS], axis=2)  # (T, n, 15)
    return np.column_stack([trace.t, per_agent.reshape(len(trace.t), n * 15), trace.V])


def write_trace_csv(trace: SimTrace, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_columns(trace.n))
    for row in trace_table(trace):
        w.writerow([format(v, ".17g") for v in row])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def read_trace_csv(path, true_bias=None) -> SimTrace:
    """Load a trace written by :func:`write_trace_csv`.

    ``true_bias`` is not stored in the file; pass it to make ``b_tilde`` meaningful.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = (len(header) - 2) // 15
    if header != trace_columns(n):
        raise ValueError(f"{path}: unexpected column layout")
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    agents = data[:, 1:-1].reshape(len(body), n, 15)
    fields = {attr: np.ascontiguousarray(agents[:, :, 3 * k:3 * k + 3]) for k, (_, attr) in enumerate(_GROUPS)}
    return SimTrace(
        t=data[:, 0].copy(),
        V=data[:, -1].copy(),
        true_bias=np.zeros((n, 3)) if true_bias is None else np.asarray(true_bias, dtype=float),
        **fields,
    )
