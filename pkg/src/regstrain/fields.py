"""Dense displacement and strain fields and their CSV forms.

CSV files start with one ``# schema=<name> units=<...>`` comment line
followed by a header row, then one row per pixel in row-major order. Numbers
are written with ``repr`` so a round trip is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, ParameterError

DISPLACEMENT_SCHEMA = "displacement"
STRAIN_SCHEMA = "strain"
_COLUMNS = {
    DISPLACEMENT_SCHEMA: ("x", "y", "u", "v", "valid"),
    STRAIN_SCHEMA: ("x", "y", "Exx", "Eyy", "Exy", "valid"),
}
_UNITS = {DISPLACEMENT_SCHEMA: "px", STRAIN_SCHEMA: "1"}


def _prepare(arrays, valid):
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    shape = arrays[0].shape
    if len(shape) != 2 or any(a.shape != shape for a in arrays):
        raise ParameterError("field components must be 2-D arrays of equal shape")
    if valid is None:
        valid = np.ones(shape, dtype=bool)
    valid = np.array(valid, dtype=bool)
    if valid.shape != shape:
        raise ParameterError("validity mask shape does not match field shape")
    for a in arrays:
        valid &= np.isfinite(a)
    return arrays, valid


@dataclass(eq=False)
class DisplacementField:
    """Per-pixel ``(u, v)`` in pixels on the undeformed grid."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        (self.u, self.v), self.valid = _prepare((self.u, self.v), self.valid)

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def components(self) -> dict:
        return {"u": self.u, "v": self.v}

    def to_csv(self, path) -> None:
        _write_csv(path, DISPLACEMENT_SCHEMA, (self.u, self.v), self.valid)

    @classmethod
    def from_csv(cls, path) -> "DisplacementField":
        comps, valid = _read_csv(path, DISPLACEMENT_SCHEMA)
        return cls(*comps, valid)


@dataclass(eq=False)
class StrainField:
    """Per-pixel Green-Lagrange components; ``exy`` is the shared shear term."""

    exx: np.ndarray
    eyy: np.ndarray
    exy: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        (self.exx, self.eyy, self.exy), self.valid = _prepare(
            (self.exx, self.eyy, self.exy), self.valid
        )

    @property
    def shape(self):
        return self.exx.shape

    def components(self) -> dict:
        return {"Exx": self.exx, "Eyy": self.eyy, "Exy": self.exy}

    def max_abs(self) -> float:
        """Largest |E_ij| over valid pixels."""
        if not self.valid.any():
            return float("nan")
        return float(max(np.abs(c[self.valid]).max() for c in (self.exx, self.eyy, self.exy)))

    def to_csv(self, path) -> None:
        _write_csv(path, STRAIN_SCHEMA, (self.exx, self.eyy, self.exy), self.valid)

    @classmethod
    def from_csv(cls, path) -> "StrainField":
        comps, valid = _read_csv(path, STRAIN_SCHEMA)
        return cls(*comps, valid)


def _write_csv(path, schema, comps, valid):
    height, width = comps[0].shape
    ys, xs = np.mgrid[0:height, 0:width]
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema} units={_UNITS[schema]}\n")
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS[schema])
        flat = [c.ravel().tolist() for c in comps]
        for i, (x, y, ok) in enumerate(zip(xs.ravel().tolist(), ys.ravel().tolist(),
                                           valid.ravel().tolist())):
            values = [repr(c[i]) if ok else "nan" for c in flat]
            writer.writerow([x, y, *values, int(ok)])


def read_schema(path) -> str:
    with open(path) as fh:
        first = fh.readline().strip()
    if not first.startswith("# schema="):
        raise FormatError(f"{path}: missing schema line", 0)
    return first.split()[1].split("=", 1)[1]


def _read_csv(path, schema):
    found = read_schema(path)
    if found != schema:
        raise FormatError(f"{path}: expected schema {schema!r}, found {found!r}")
    with open(path, newline="") as fh:
        fh.readline()
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != _COLUMNS[schema]:
            raise FormatError(f"{path}: unexpected columns {header}")
        try:
            rows = np.array([[float(v) for v in row] for row in reader])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
    if rows.size == 0:
        raise FormatError(f"{path}: no data rows")
    xs = rows[:, 0].astype(int)
    ys = rows[:, 1].astype(int)
    width, height = xs.max() + 1, ys.max() + 1
    if rows.shape[0] != width * height:
        raise FormatError(f"{path}: {rows.shape[0]} rows do not fill a {width}x{height} grid")
    comps = []
    for col in range(2, rows.shape[1] - 1):
        arr = np.full((height, width), np.nan)
        arr[ys, xs] = rows[:, col]
        comps.append(arr)
    valid = np.zeros((height, width), dtype=bool)
    valid[ys, xs] = rows[:, -1] != 0
    return comps, valid
