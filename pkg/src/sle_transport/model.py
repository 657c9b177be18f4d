"""Site Hamiltonian, chromophore geometry and the exciton basis.

Both the Hamiltonian and the geometry are read from plain-text files:

* Hamiltonian: ``n`` rows of ``n`` whitespace-separated numbers (cm^-1);
  lines starting with ``#`` are comments.
* Geometry: ``n`` rows of ``label x y z`` (Angstrom); distances are derived.

The bundled Fenna-Matthews-Olson monomer lives in ``sle_transport/data``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SYMMETRY_TOL = 1e-9


class ModelFileError(ValueError):
    """Raised when a Hamiltonian or geometry file is malformed."""


@dataclass(frozen=True)
class SiteHamiltonian:
    """Single-excitation Frenkel Hamiltonian in the site basis (cm^-1)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ModelFileError(f"Hamiltonian must be square, got shape {m.shape}")
        if m.shape[0] < 2:
            raise ModelFileError("Hamiltonian needs at least 2 sites")
        asym = np.max(np.abs(m - m.T))
        if asym >= SYMMETRY_TOL:
            raise ModelFileError(f"Hamiltonian is asymmetric (max |H_ij - H_ji| = {asym:g})")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_sites(self) -> int:
        return self.matrix.shape[0]

    @property
    def site_energies(self) -> np.ndarray:
        return np.diag(self.matrix).copy()


@dataclass(frozen=True)
class Geometry:
    """Site-center positions (Angstrom) and the derived distance matrix."""

    coordinates: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        xyz = np.array(self.coordinates, dtype=float)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ModelFileError(f"coordinates must have shape (n, 3), got {xyz.shape}")
        if xyz.shape[0] < 2:
            raise ModelFileError("geometry needs at least 2 sites")
        xyz.setflags(write=False)
        object.__setattr__(self, "coordinates", xyz)
        labels = tuple(self.labels) or tuple(f"site{i + 1}" for i in range(len(xyz)))
        if len(labels) != len(xyz):
            raise ModelFileError("number of labels does not match number of sites")
        object.__setattr__(self, "labels", labels)
        d = self.distances
        off = ~np.eye(len(xyz), dtype=bool)
        if np.any(d[off] <= 0):
            raise ModelFileError("two sites share the same position")

    @property
    def n_sites(self) -> int:
        return self.coordinates.shape[0]

    @property
    def distances(self) -> np.ndarray:
        """Pairwise distance matrix in Angstrom."""
        diff = self.coordinates[:, None, :] - self.coordinates[None, :, :]
        return np.sqrt(np.sum(diff**2, axis=-1))


@dataclass(frozen=True)
class ExcitonBasis:
    """Eigen-decomposition of a site Hamiltonian.

    ``energies`` are ascending and shifted so the lowest exciton sits at 0;
    ``shift`` is the subtracted offset.  Column ``a`` of ``eigenvectors`` is
    exciton ``a`` expanded in the site basis.
    """

    energies: np.ndarray
    eigenvectors: np.ndarray
    shift: float

    @property
    def n(self) -> int:
        return len(self.energies)

    def site_weights(self) -> np.ndarray:
        """|<j|a>|^2 with sites along rows and excitons along columns."""
        return self.eigenvectors**2

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return v @ np.diag(self.energies + self.shift) @ v.T

    def gaps(self) -> np.ndarray:
        """Matrix of exciton energy differences E_a - E_b (cm^-1)."""
        return self.energies[:, None] - self.energies[None, :]


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def load_site_hamiltonian(path) -> SiteHamiltonian:
    path = Path(path)
    if not path.is_file():
        raise ModelFileError(f"{path}: no such file")
    rows = []
    for lineno, line in _data_lines(path):
        try:
            rows.append([float(x) for x in line.split()])
        except ValueError as exc:
            raise ModelFileError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ModelFileError(f"{path}: no matrix rows found")
    n = len(rows)
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ModelFileError(
                f"{path}: matrix is not square ({n} rows, row {i + 1} has {len(row)} entries)"
            )
    try:
        return SiteHamiltonian(np.array(rows))
    except ModelFileError as exc:
        raise ModelFileError(f"{path}: {exc}") from None


def load_geometry(path) -> Geometry:
    path = Path(path)
    if not path.is_file():
        raise ModelFileError(f"{path}: no such file")
    labels, xyz = [], []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise ModelFileError(f"{path}:{lineno}: expected 'label x y z', got {line!r}")
        try:
            xyz.append([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise ModelFileError(f"{path}:{lineno}: {exc}") from None
        labels.append(parts[0])
    if not xyz:
        raise ModelFileError(f"{path}: no coordinates found")
    try:
        return Geometry(np.array(xyz), tuple(labels))
    except ModelFileError as exc:
        raise ModelFileError(f"{path}: {exc}") from None


def bundled_path(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files("sle_transport") / "data" / name))


def fmo_hamiltonian() -> SiteHamiltonian:
    return load_site_hamiltonian(bundled_path("fmo_hamiltonian.txt"))


def fmo_geometry() -> Geometry:
    return load_geometry(bundled_path("fmo_geometry.txt"))


def diagonalize(h: SiteHamiltonian, degeneracy_tol: float = 1e-9) -> ExcitonBasis:
    """Exciton energies (lowest shifted to zero) and orthonormal eigenvectors.

    Eigenvector signs are fixed so the largest-magnitude component is positive.
    Within a block of degenerate energies the excitons are ordered by the index
    of their largest-magnitude site, which keeps reports reproducible.
    """
    w, v = np.linalg.eigh(h.matrix)
    v = v.copy()
    peak = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[peak, np.arange(v.shape[1])])
    v *= signs

    order = list(range(len(w)))
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and w[j] - w[i] <= degeneracy_tol * max(1.0, abs(w[i])):
            j += 1
        if j - i > 1:
            order[i:j] = sorted(order[i:j], key=lambda a: peak[a])
        i = j
    # energies stay in eigh's ascending order; only degenerate vectors are permuted
    v = v[:, order]

    shift = float(w[0])
    return ExcitonBasis(energies=w - shift, eigenvectors=v, shift=shift)


def dominant_overlaps(basis: ExcitonBasis, weight_threshold: float = 0.15) -> list[list[int]]:
    """Per exciton, the 1-based site indices with |<j|a>|^2 >= threshold,
    strongest first."""
    if not 0.0 < weight_threshold < 1.0:
        raise ValueError("weight_threshold must lie strictly between 0 and 1")
    weights = basis.site_weights()
    result = []
    for a in range(basis.n):
        col = weights[:, a]
        sites = [j for j in np.argsort(-col, kind="stable") if col[j] >= weight_threshold]
        result.append([int(j) + 1 for j in sites])
    return result
