"""Reading coefficient fields from per-cell CSV tables."""
from __future__ import annotations

import numpy as np

from .grid import CoefficientField, Domain

__all__ = ["read_coefficient_csv", "write_coefficient_csv"]


def read_coefficient_csv(path, domain: Domain, **kw) -> CoefficientField:
    """Load ``x[,y],A11[,A12,A22],V,kappa`` rows, one per cell, in any order.

    Rows are matched to cells by their coordinates; each cell must appear
    exactly once.
    """
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    names = [n.lower() for n in data.dtype.names]
    cols = {n: data[orig] for n, orig in zip(names, data.dtype.names)}
    axes = ("x", "y")[: domain.dim]
    for key in (*axes, "a11", "v", "kappa"):
        if key not in cols:
            raise ValueError(f"{path}: missing column {key!r}")
    idx = []
    for k, ax in enumerate(axes):
        a = domain.bounds[2 * k]
        pos = (np.atleast_1d(cols[ax]) - a) / domain.h[k] - 0.5
        i = np.rint(pos).astype(int)
        if np.any(np.abs(pos - i) > 1e-6) or np.any(i < 0) or np.any(i >= domain.n[k]):
            bad = int(np.argmax(np.abs(pos - i) > 1e-6))
            raise ValueError(f"{path}: row {bad + 2} does not sit on a cell centre")
        idx.append(i)
    flat = np.ravel_multi_index(tuple(idx), domain.shape)
    if np.unique(flat).size != domain.size or flat.size != domain.size:
        raise ValueError(f"{path}: expected exactly one row per cell ({domain.size} cells)")
    order = np.argsort(flat)

    def col(name):
        return np.atleast_1d(cols[name])[order]

    extra = {}
    if domain.dim == 2:
        if "a12" in cols:
            extra["A12"] = col("a12")
        if "a21" in cols:
            extra["A21"] = col("a21")
        if "a22" in cols:
            extra["A22"] = col("a22")
    return CoefficientField.from_cell_samples(domain, col("a11"), col("v"), col("kappa"), **extra, **kw)


def write_coefficient_csv(path, domain: Domain, A11, V, kappa, A12=None, A22=None) -> None:
    c = domain.centers()
    header = ["x", "y"][: domain.dim] + ["A11"]
    cols = [c[:, k] for k in range(domain.dim)] + [np.asarray(A11, float).ravel()]
    if domain.dim == 2:
        header += ["A12", "A22"]
        cols += [np.zeros(domain.size) if A12 is None else np.asarray(A12, float).ravel(),
                 cols[-1] if A22 is None else np.asarray(A22, float).ravel()]
    header += ["V", "kappa"]
    cols += [np.asarray(V, float).ravel(), np.asarray(kappa, float).ravel()]
    np.savetxt(path, np.stack(cols, 1), delimiter=",", header=",".join(header), comments="", fmt="%.15e")
