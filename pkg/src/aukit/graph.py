"""Relation-graph construction from binary label statistics.

Pipeline: Pearson correlation between label columns -> thresholded
symmetric adjacency with self-connections -> degree normalization ->
gravity center / hop distances -> three-way partition of the normalized
adjacency (diagonal, centripetal, centrifugal).

Columns of the normalized adjacency sum to 1; in float arithmetic this
holds exactly under correctly-rounded summation (``math.fsum``) for any
degree below 49, far beyond the node counts used here.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DomainError, FormatError, InternalInvariantError, IoError, ShapeError

#: Hop distance assigned to nodes with no path to the gravity center.
#: Compares greater than any finite distance in partition decisions.
UNREACHABLE = -1


@dataclass(frozen=True)
class RelationGraph:
    """Statistical relation graph over m label channels.

    ``gravity`` is a 0-based node index internally; the JSON file stores
    it 1-based, matching user-facing numbering.
    """

    m: int
    tau: float
    pcc: np.ndarray        # (m, m)
    adjacency: np.ndarray  # (m, m) 0/1
    lam: np.ndarray        # (m,) diagonal of the inverse-degree matrix
    a_norm: np.ndarray     # (m, m) column-stochastic
    parts: Tuple[np.ndarray, np.ndarray, np.ndarray]
    gravity: int
    hops: np.ndarray       # (m,) int, UNREACHABLE for disconnected nodes


def compute_pcc(labels: np.ndarray) -> np.ndarray:
    """Pearson correlation between columns; zero-variance columns get r=0."""
    data = np.asarray(labels, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"labels must be 2-D (n, m), got shape {data.shape}")
    n, m = data.shape
    if n < 2:
        raise DomainError(f"correlation needs at least 2 rows, got {n}")
    centered = data - data.mean(axis=0)
    sigma = np.sqrt(np.mean(centered**2, axis=0))
    cov = (centered.T @ centered) / n
    r = np.zeros((m, m))
    live = sigma > 0.0
    denom = np.outer(sigma, sigma)
    r[np.ix_(live, live)] = cov[np.ix_(live, live)] / denom[np.ix_(live, live)]
    np.fill_diagonal(r, np.where(live, 1.0, 0.0))
    return np.clip(r, -1.0, 1.0)


def build_adjacency(pcc: np.ndarray, tau: float) -> np.ndarray:
    """0/1 adjacency: off-diagonal edges where r >= tau, plus self-loops.

    Thresholds above 1 are allowed and yield the identity adjacency.
    """
    pcc = np.asarray(pcc, dtype=np.float64)
    m = pcc.shape[0]
    if pcc.shape != (m, m):
        raise ShapeError(f"pcc must be square, got shape {pcc.shape}")
    adjacency = (pcc >= tau).astype(np.float64)
    adjacency = np.maximum(adjacency, adjacency.T)  # guard symmetry on ties
    np.fill_diagonal(adjacency, 1.0)
    return adjacency


def normalize(adjacency: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse-degree column scaling: lam_k = 1/deg_k, a_norm[:, k] = A[:, k]*lam_k."""
    degrees = adjacency.sum(axis=1)
    if np.any(degrees == 0.0):
        raise InternalInvariantError(
            "zero-degree node despite mandatory self-connections"
        )
    lam = 1.0 / degrees
    return lam, adjacency * lam[np.newaxis, :]


def gravity_center(adjacency: np.ndarray) -> int:
    """Node with the most neighbors (off-diagonal degree); ties -> lowest index."""
    off_degree = adjacency.sum(axis=1) - np.diag(adjacency)
    return int(np.argmax(off_degree))


def hop_distances(adjacency: np.ndarray, gravity: int) -> np.ndarray:
    """BFS distances from the gravity center over off-diagonal edges."""
    m = adjacency.shape[0]
    hops = np.full(m, UNREACHABLE, dtype=np.int64)
    hops[gravity] = 0
    frontier = deque([gravity])
    while frontier:
        j = frontier.popleft()
        for k in range(m):
            if k != j and adjacency[j, k] != 0.0 and hops[k] == UNREACHABLE:
                hops[k] = hops[j] + 1
                frontier.append(k)
    return hops


def partition(
    a_norm: np.ndarray, hops: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a_norm into (diagonal, centripetal, centrifugal) parts.

    Off-diagonal entry (j, k) is centripetal when node k sits at an
    equal-or-smaller hop distance than node j, centrifugal otherwise.
    UNREACHABLE distances compare greater than every finite distance.
    """
    m = a_norm.shape[0]
    key = np.where(hops == UNREACHABLE, np.inf, hops.astype(np.float64))
    root = np.zeros_like(a_norm)
    np.fill_diagonal(root, np.diag(a_norm))
    off = a_norm - root
    toward = key[np.newaxis, :] <= key[:, np.newaxis]  # d_k <= d_j
    centripetal = np.where(toward, off, 0.0)
    centrifugal = np.where(~toward, off, 0.0)
    return root, centripetal, centrifugal


def build_graph(labels: np.ndarray, tau: float) -> RelationGraph:
    pcc = compute_pcc(labels)
    adjacency = build_adjacency(pcc, tau)
    lam, a_norm = normalize(adjacency)
    gravity = gravity_center(adjacency)
    hops = hop_distances(adjacency, gravity)
    parts = partition(a_norm, hops)
    return RelationGraph(
        m=labels.shape[1],
        tau=float(tau),
        pcc=pcc,
        adjacency=adjacency,
        lam=lam,
        a_norm=a_norm,
        parts=parts,
        gravity=gravity,
        hops=hops,
    )


# ---------------------------------------------------------------------------
# Graph file IO (UTF-8 JSON)
# ---------------------------------------------------------------------------


def save_graph(path, graph: RelationGraph) -> None:
    payload = {
        "m": graph.m,
        "tau": graph.tau,
        "pcc": graph.pcc.tolist(),
        "adjacency": graph.adjacency.tolist(),
        "lambda": graph.lam.tolist(),
        "a_norm": graph.a_norm.tolist(),
        "parts": [part.tolist() for part in graph.parts],
        "gravity": graph.gravity + 1,
        "hops": graph.hops.tolist(),
    }
    try:
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(payload, fp, indent=1)
            fp.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write graph file {path}: {exc}") from exc


def load_graph(path) -> RelationGraph:
    try:
        with open(path, "r", encoding="utf-8") as fp:
            raw = fp.read()
    except OSError as exc:
        raise IoError(f"cannot read graph file {path}: {exc}") from exc
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"graph file is not valid JSON: {exc}", offset=exc.pos) from exc
    if not isinstance(payload, dict):
        raise FormatError("graph file must hold a JSON object")
    required = ("m", "tau", "pcc", "adjacency", "lambda", "a_norm", "parts", "gravity", "hops")
    for field in required:
        if field not in payload:
            raise FormatError(f"graph file is missing key {field!r}")
    try:
        m = int(payload["m"])
        pcc = np.asarray(payload["pcc"], dtype=np.float64)
        adjacency = np.asarray(payload["adjacency"], dtype=np.float64)
        lam = np.asarray(payload["lambda"], dtype=np.float64)
        a_norm = np.asarray(payload["a_norm"], dtype=np.float64)
        parts = tuple(np.asarray(part, dtype=np.float64) for part in payload["parts"])
        gravity = int(payload["gravity"]) - 1
        hops = np.asarray(payload["hops"], dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"graph file has a malformed field: {exc}") from exc
    if pcc.shape != (m, m) or adjacency.shape != (m, m) or a_norm.shape != (m, m):
        raise FormatError("graph matrices do not match the declared node count")
    if lam.shape != (m,) or hops.shape != (m,) or len(parts) != 3:
        raise FormatError("graph vectors do not match the declared node count")
    if any(part.shape != (m, m) for part in parts):
        raise FormatError("graph partition matrices do not match the node count")
    if not 0 <= gravity < m:
        raise FormatError(f"gravity index {gravity + 1} outside 1..{m}")
    return RelationGraph(
        m=m,
        tau=float(payload["tau"]),
        pcc=pcc,
        adjacency=adjacency,
        lam=lam,
        a_norm=a_norm,
        parts=parts,  # type: ignore[arg-type]
        gravity=gravity,
        hops=hops,
    )
