"""Dense symmetric covariance matrix container and its file formats.

Used for noise-covariance truths, raw estimates and thresholded estimates.
Serializes to CSV (dense, header row of asset ids) and to a JSON object
``{p, assets, entries, meta}`` with row-major entries. Floats are written
with shortest round-trip ``repr`` so serialization is deterministic and
lossless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CovMatrix:
    """A p x p symmetric matrix of covariance entries.

    Parameters
    ----------
    entries : ndarray
        Dense symmetric float64 array; symmetry must hold exactly (producers
        write both triangles from one computed value).
    assets : tuple of str, optional
        Asset identifiers; defaults to ``a0..a{p-1}`` style names.
    meta : dict, optional
        Free-form provenance (threshold rule, window rule, n_star, ...);
        round-trips through JSON.
    """

    entries: np.ndarray
    assets: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.ascontiguousarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"entries must be square, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("entries must be finite")
        if not np.array_equal(e, e.T):
            raise ValueError("entries must be exactly symmetric")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        if self.assets is None:
            object.__setattr__(self, "assets", default_asset_names(e.shape[0]))
        else:
            object.__setattr__(self, "assets", tuple(self.assets))
            if len(self.assets) != e.shape[0]:
                raise ValueError(
                    f"{len(self.assets)} asset names for a {e.shape[0]}-dim matrix"
                )

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    def to_csv(self, path) -> None:
        """Write as dense CSV with the asset ids as header row."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.assets)
            for row in self.entries:
                writer.writerow([repr(x) for x in row.tolist()])

    @classmethod
    def from_csv(cls, path, meta: dict | None = None) -> "CovMatrix":
        """Read a matrix written by :meth:`to_csv`."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = [row for row in reader if row]
        if not rows:
            raise ValueError(f"{path}: empty matrix file")
        assets = tuple(h.strip() for h in rows[0])
        data = [[float(x) for x in row] for row in rows[1:]]
        return cls(np.asarray(data, dtype=np.float64), assets, meta or {})

    def to_json(self, path) -> None:
        """Write as a JSON object ``{p, assets, entries, meta}``.

        ``entries`` is the row-major flattened matrix; keys are sorted so
        outputs are byte-stable.
        """
        doc = {
            "p": self.p,
            "assets": list(self.assets),
            "entries": self.entries.ravel().tolist(),
            "meta": self.meta,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "CovMatrix":
        """Read a matrix written by :meth:`to_json`."""
        with open(path) as fh:
            doc = json.load(fh)
        p = int(doc["p"])
        entries = np.asarray([float(x) for x in doc["entries"]], dtype=np.float64)
        if entries.size != p * p:
            raise ValueError(f"{path}: expected {p * p} entries, got {entries.size}")
        return cls(entries.reshape(p, p), tuple(doc["assets"]), dict(doc.get("meta", {})))


def default_asset_names(p: int) -> tuple[str, ...]:
    """Zero-padded names ``a00, a01, ...`` that sort in index order."""
    width = max(1, len(str(p - 1)))
    return tuple(f"a{i:0{width}d}" for i in range(p))
