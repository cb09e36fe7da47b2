"""File formats: measures as JSON, couplings and sweeps as CSV, atomic writes."""

import csv
import hashlib
import io
import json
import os
import tempfile

import numpy as np

from .measures import DiscreteMeasure, validate


class InputError(ValueError):
    """An input file is unreadable or violates the measure invariants."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


def fmt(x):
    """17 significant digits, enough for a lossless float round trip."""
    return format(float(x), ".17g")


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def measure_to_dict(mu):
    atoms = mu.atoms
    return {
        "dim": int(mu.dim),
        "atoms": atoms[:, 0].tolist() if mu.dim == 1 else atoms.tolist(),
        "weights": mu.weights.tolist(),
    }


def measure_from_dict(data):
    """Build a measure from ``{"dim", "atoms", "weights"}``; raises :class:`InputError`."""
    try:
        atoms = np.asarray(data["atoms"], dtype=float)
        weights = np.asarray(data["weights"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"measure needs numeric 'atoms' and 'weights': {exc}") from exc
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    dim = data.get("dim", atoms.shape[1])
    if atoms.ndim != 2 or atoms.shape[1] != dim:
        raise InputError(f"atoms do not have the declared dimension {dim}")
    mu = DiscreteMeasure(atoms, weights, check=False)
    diag = validate(mu)
    if not diag.ok:
        raise InputError("invalid measure: " + "; ".join(diag.messages), diag)
    return DiscreteMeasure(atoms, weights)


def load_measure(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read measure file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a JSON object")
    return measure_from_dict(data)


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def save_json(path, obj):
    atomic_write(path, dumps_json(obj))


def save_measure(path, mu, extra=None):
    data = measure_to_dict(mu)
    if extra:
        data.update(extra)
    save_json(path, data)


def coupling_csv(P):
    """Dense matrix as CSV; the header row holds column indices, the first column row indices."""
    P = np.asarray(P, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row"] + list(range(P.shape[1])))
    for i, row in enumerate(P):
        w.writerow([i] + [fmt(x) for x in row])
    return buf.getvalue()


def read_coupling_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)


def table_csv(columns, rows):
    """CSV with a header; floats use :func:`fmt`, bools become 0/1."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return fmt(x)
    return x
