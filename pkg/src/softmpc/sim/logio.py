"""CSV export and import of simulation logs."""
import csv
import io
from pathlib import Path

import numpy as np

from .runner import SimLog


def csv_columns(q_size, n_inputs):
    n_chambers = 3 * n_inputs // 2
    return (["t", "ref_x", "ref_y", "ref_z", "ee_x", "ee_y", "ee_z"]
            + [f"q_{i}" for i in range(q_size)] + [f"qd_{i}" for i in range(q_size)]
            + [f"u_{i}" for i in range(n_inputs)] + [f"chamber_{i}" for i in range(n_chambers)]
            + ["solve_ms", "status", "slack_norm", "min_clearance"])


def _fmt(x):
    return format(float(x), ".9g")


def log_to_csv_text(log: SimLog):
    q_size, n_inputs = log.q.shape[1], log.u.shape[1]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_columns(q_size, n_inputs))
    for k in range(len(log)):
        numeric = np.concatenate([[log.t[k]], log.ref[k], log.ee[k], log.q[k], log.qd[k],
                                  log.u[k], log.chamber[k]])
        writer.writerow([_fmt(v) for v in numeric]
                        + [_fmt(log.solve_ms[k]), log.status[k], _fmt(log.slack_norm[k]),
                           _fmt(log.min_clearance[k])])
    return buf.getvalue()


def export_csv(log: SimLog, path):
    """Write ``log`` to ``path`` (header plus one row per step, 9 significant digits)."""
    Path(path).write_text(log_to_csv_text(log))


def read_csv(path, q_size, n_inputs):
    """Parse a file written by :func:`export_csv` back into a :class:`SimLog`."""
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    header = rows[0]
    if header != csv_columns(q_size, n_inputs):
        raise ValueError("CSV header does not match the expected column layout")
    if len(rows) == 1:
        return SimLog.empty(q_size, n_inputs)
    status_col = header.index("status")
    status = [r[status_col] for r in rows[1:]]
    data = np.array([[float(v) for i, v in enumerate(r) if i != status_col] for r in rows[1:]])
    names = [h for h in header if h != "status"]

    def cols(prefix, n=None):
        if n is None:
            return data[:, names.index(prefix)]
        start = names.index(f"{prefix}_0")
        return data[:, start:start + n]

    n_ch = 3 * n_inputs // 2
    start_ref, start_ee = names.index("ref_x"), names.index("ee_x")
    return SimLog(
        t=cols("t"), ref=data[:, start_ref:start_ref + 3], ee=data[:, start_ee:start_ee + 3],
        q=cols("q", q_size), qd=cols("qd", q_size), u=cols("u", n_inputs),
        chamber=cols("chamber", n_ch), solve_ms=cols("solve_ms"), status=status,
        slack_norm=cols("slack_norm"), min_clearance=cols("min_clearance"),
    )
