"""
Areal adjacency structure.

An :class:`AreaGraph` holds binary contiguity between ``L`` areal units as a
normalized edge list plus a compressed symmetric neighbor index. The spectrum
of ``M = W + I - D`` is computed once per graph and cached; the Leroux
log-determinant only needs these eigenvalues.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Union

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.csgraph import connected_components

from poiar.errors import DataValidationError, NumericDomainError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class EigenSpectrum:
    """Eigenvalues of ``W + I - D`` in ascending order."""

    lambdas: np.ndarray

    def __len__(self) -> int:
        return len(self.lambdas)


@dataclass(frozen=True, eq=False)
class AreaGraph:
    """
    Immutable binary contiguity graph over ``n_areas`` units.

    Attributes:
        n_areas: Number of areal units L
        edges: ``(E, 2)`` array of 0-based pairs with ``i < j``, sorted
        degrees: Number of neighbors N_i of each area
        indptr: CSR row pointer of the symmetric neighbor index
        indices: CSR column indices (sorted neighbor lists)
    """

    n_areas: int
    edges: np.ndarray = field(repr=False)
    degrees: np.ndarray = field(repr=False)
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> np.ndarray:
        """Return the sorted neighbor indices of area ``i``."""
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    @cached_property
    def adjacency(self) -> scipy.sparse.csr_matrix:
        """Sparse symmetric adjacency matrix W."""
        data = np.ones(len(self.indices))
        return scipy.sparse.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.n_areas, self.n_areas)
        )

    @cached_property
    def n_components(self) -> int:
        n, _ = connected_components(self.adjacency, directed=False)
        return int(n)

    @cached_property
    def spectrum(self) -> EigenSpectrum:
        """Eigenvalues of ``W + I - D``, computed on first use."""
        return eigen_spectrum(self)

    def permute(self, perm: Iterable[int]) -> "AreaGraph":
        """
        Relabel areas so that old area ``i`` becomes ``perm[i]``.

        Args:
            perm: A permutation of ``range(n_areas)``

        Returns:
            The relabelled graph
        """
        perm = np.asarray(list(perm), dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self.n_areas)):
            raise DataValidationError("perm is not a permutation of the areas")
        return build_graph(perm[self.edges].tolist(), self.n_areas)


def build_graph(edges: Iterable[tuple[int, int]], n_areas: int) -> AreaGraph:
    """
    Build a canonical graph from an edge list.

    Args:
        edges: Unordered pairs of 0-based area indices
        n_areas: Number of areal units

    Returns:
        The graph with normalized edges and sorted neighbor lists

    Raises:
        DataValidationError: On a self-loop, a duplicate edge or an index out
            of range; the offending edge is named in the error
    """
    if n_areas < 1:
        raise DataValidationError("n_areas must be at least 1", location=n_areas)

    seen = set()
    normalized = []
    for edge in edges:
        i, j = (int(v) for v in edge)
        if not (0 <= i < n_areas and 0 <= j < n_areas):
            raise DataValidationError("Edge index out of range", location=(i, j))
        if i == j:
            raise DataValidationError("Self-loop", location=(i, j))
        pair = (min(i, j), max(i, j))
        if pair in seen:
            raise DataValidationError("Duplicate edge", location=(i, j))
        seen.add(pair)
        normalized.append(pair)

    edge_array = np.array(sorted(normalized), dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edge_array[:, 0], edge_array[:, 1]])
    cols = np.concatenate([edge_array[:, 1], edge_array[:, 0]])
    adjacency = scipy.sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n_areas, n_areas)
    )
    adjacency.sort_indices()

    degrees = np.diff(adjacency.indptr).astype(np.int64)
    for array in (edge_array, degrees):
        array.setflags(write=False)
    indptr = adjacency.indptr.astype(np.int64)
    indices = adjacency.indices.astype(np.int64)
    indptr.setflags(write=False)
    indices.setflags(write=False)

    graph = AreaGraph(
        n_areas=n_areas,
        edges=edge_array,
        degrees=degrees,
        indptr=indptr,
        indices=indices,
    )
    if graph.n_components > 1:
        logger.warning(
            "Graph has %d connected components; the Leroux prior stays proper "
            "only for alpha < 1",
            graph.n_components,
        )
    return graph


def eigen_spectrum(graph: AreaGraph) -> EigenSpectrum:
    """
    Compute the eigenvalues of the symmetric matrix ``M = W + I - D``.

    The decomposition is dense and done once per graph: the values do not
    depend on any model parameter.

    Args:
        graph: The adjacency structure

    Returns:
        The ascending eigenvalues

    Raises:
        NumericDomainError: If the symmetric eigensolver does not converge
    """
    m = graph.adjacency.toarray()
    m[np.diag_indices_from(m)] = 1.0 - graph.degrees
    try:
        lambdas = scipy.linalg.eigh(m, eigvals_only=True)
    except np.linalg.LinAlgError as e:
        raise NumericDomainError(f"Eigendecomposition failed: {e}") from e
    lambdas = np.sort(lambdas)
    lambdas.setflags(write=False)
    return EigenSpectrum(lambdas=lambdas)


def lattice_graph(rows: int, cols: int) -> AreaGraph:
    """
    Rook-contiguity lattice; area ``r * cols + c`` sits at row r, column c.

    Args:
        rows: Number of lattice rows
        cols: Number of lattice columns

    Returns:
        The lattice graph

    Raises:
        DataValidationError: If a dimension is zero
    """
    if rows < 1 or cols < 1:
        raise DataValidationError("Lattice dimensions must be positive", (rows, cols))
    edges = []
    for r in range(rows):
        for c in range(cols):
            here = r * cols + c
            if c + 1 < cols:
                edges.append((here, here + 1))
            if r + 1 < rows:
                edges.append((here, here + cols))
    return build_graph(edges, rows * cols)


def read_edge_list(path: PathLike) -> AreaGraph:
    """
    Read an edge-list file.

    The file holds a required ``area_count=L`` header line, then one ``i,j``
    pair per line (0-based). Lines starting with ``#`` and blank lines are
    ignored and counted.

    Args:
        path: File location

    Returns:
        The graph

    Raises:
        DataValidationError: On a missing header or a malformed line
    """
    n_areas = None
    edges = []
    ignored = 0
    with open(path, encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                ignored += 1
                continue
            if line.startswith("area_count"):
                _, _, value = line.partition("=")
                try:
                    n_areas = int(value)
                except ValueError as e:
                    raise DataValidationError(
                        "Malformed area_count header", location=f"line {line_number}"
                    ) from e
                continue
            if n_areas is None:
                raise DataValidationError(
                    "Edge before the area_count header", location=f"line {line_number}"
                )
            parts = line.split(",")
            if len(parts) != 2:
                raise DataValidationError(
                    "Expected 'i,j'", location=f"line {line_number}"
                )
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError as e:
                raise DataValidationError(
                    "Non-integer area index", location=f"line {line_number}"
                ) from e

    if n_areas is None:
        raise DataValidationError("Missing area_count header", location=str(path))
    if ignored:
        logger.info("Ignored %d comment or blank lines in %s", ignored, path)
    return build_graph(edges, n_areas)


def write_edge_list(graph: AreaGraph, path: PathLike) -> None:
    """Write ``graph`` in the edge-list file format."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"area_count={graph.n_areas}\n")
        for i, j in graph.edges:
            handle.write(f"{i},{j}\n")
