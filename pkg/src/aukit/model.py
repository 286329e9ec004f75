"""Model assembly: named parameter dictionaries, checkpoints, inference.

The canonical form of a model is an ordered ``dict[str, Tensor]`` mapping
stable entry names (``backbone.layer1.input.kernels``, ``branch.3.att.bias``,
``gst.2.phi2.kernels``, ...) to parameters.  Structured views over that dict
are rebuilt on demand, so functional parameter updates (training steps)
amount to replacing dict values.

A relation checkpoint embeds the frozen first-stage parameters, so a single
file is enough to run sequence-level inference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .backbone import (
    attention_stage_forward,
    backbone_entries,
    backbone_from,
    branch_entries,
    branch_from,
    init_attention_branch,
    init_backbone,
)
from .errors import FormatError, ShapeError
from .graph import RelationGraph
from .rng import Xoshiro256pp, derive_seed
from .serialize import load_checkpoint, save_checkpoint
from .stgcn import (
    head_entries,
    head_from,
    init_head,
    init_stgcn,
    stgcn_entries,
    stgcn_forward,
    stgcn_from,
)

Entries = Dict[str, T.Tensor]

# Tags keep the two stages on independent random streams for one seed.
_ATTENTION_STREAM = 11
_RELATION_STREAM = 13


def init_attention_entries(c: int, m: int, seed: int) -> Entries:
    """Fresh backbone plus ``m`` attention branches."""
    rng = Xoshiro256pp(derive_seed(seed, _ATTENTION_STREAM))
    entries: Entries = dict(backbone_entries(init_backbone(rng.fork(0), c)))
    for j in range(1, m + 1):
        entries.update(branch_entries(j, init_attention_branch(rng.fork(j), c)))
    return entries


def init_relation_entries(
    stage1: Entries, t_k: int, depth: int, seed: int
) -> Entries:
    """Graph-stack and head parameters appended to stage-1 entries."""
    dims = model_dims(stage1)
    rng = Xoshiro256pp(derive_seed(seed, _RELATION_STREAM))
    entries: Entries = dict(stage1)
    entries.update(stgcn_entries(init_stgcn(rng.fork(0), dims.c, dims.m, t_k, depth)))
    entries.update(head_entries(init_head(rng.fork(1), dims.c, dims.m)))
    return entries


# ---------------------------------------------------------------------------
# Checkpoint files
# ---------------------------------------------------------------------------


def save_model(path, entries: Entries) -> None:
    save_checkpoint(path, {name: param.data for name, param in entries.items()})


def load_model(path) -> Entries:
    arrays = load_checkpoint(path)
    return {name: T.Tensor(arr, requires_grad=True) for name, arr in arrays.items()}


@dataclass(frozen=True)
class ModelDims:
    c: int
    m: int
    depth: int          # 0 when the checkpoint holds only stage-1 entries
    t_k: Optional[int]  # None when depth == 0


def model_dims(entries: Entries) -> ModelDims:
    """Recover architecture sizes from entry names and shapes."""
    key = "backbone.layer1.input.kernels"
    if key not in entries:
        raise FormatError(f"checkpoint lacks entry {key!r}")
    out_ch = entries[key].shape[0]
    if out_ch % 4:
        raise FormatError(f"first-layer channel count {out_ch} is not 4*c")
    c = out_ch // 4

    m = 0
    while f"branch.{m + 1}.att.kernels" in entries:
        m += 1
    if m == 0:
        raise FormatError("checkpoint holds no attention branches")

    depth = 0
    while f"gst.{depth + 1}.phi2.kernels" in entries:
        depth += 1
    t_k = entries["gst.1.phi2.kernels"].shape[2] if depth else None
    return ModelDims(c=c, m=m, depth=depth, t_k=t_k)


# ---------------------------------------------------------------------------
# Inference (plain arrays in, plain arrays out; nothing is recorded)
# ---------------------------------------------------------------------------


GRAPH_PREFIX = "graph."


def embed_graph(entries: Entries, graph: RelationGraph) -> Entries:
    """Store the relation graph inside the entry dict (self-contained file).

    Graph entries are constants, never optimized; they ride along so that
    sequence-level inference needs only the checkpoint.
    """
    out = dict(entries)
    arrays = {
        "graph.tau": np.asarray(float(graph.tau)),
        "graph.pcc": graph.pcc,
        "graph.adjacency": graph.adjacency,
        "graph.lam": graph.lam,
        "graph.a_norm": graph.a_norm,
        "graph.part.1": graph.parts[0],
        "graph.part.2": graph.parts[1],
        "graph.part.3": graph.parts[2],
        "graph.gravity": np.asarray(float(graph.gravity)),
        "graph.hops": np.asarray(graph.hops, dtype=np.float64),
    }
    for name, arr in arrays.items():
        out[name] = T.Tensor(arr)
    return out


def extract_graph(entries: Entries) -> Optional[RelationGraph]:
    """Rebuild the embedded relation graph, or None if absent."""
    if "graph.pcc" not in entries:
        return None
    try:
        pcc = entries["graph.pcc"].data
        return RelationGraph(
            m=pcc.shape[0],
            tau=float(entries["graph.tau"].data),
            pcc=pcc,
            adjacency=entries["graph.adjacency"].data,
            lam=entries["graph.lam"].data,
            a_norm=entries["graph.a_norm"].data,
            parts=(
                entries["graph.part.1"].data,
                entries["graph.part.2"].data,
                entries["graph.part.3"].data,
            ),
            gravity=int(entries["graph.gravity"].data),
            hops=entries["graph.hops"].data.astype(np.int64),
        )
    except KeyError as exc:
        raise FormatError(f"embedded graph is incomplete: missing {exc}") from exc


def attention_predict(
    entries: Entries, frames: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame attention pass over a sequence.

    frames (t, 3, h, w) -> maps (t, m, h/4, w/4), features (t, m, 8c),
    probabilities (t, m).
    """
    dims = model_dims(entries)
    backbone = backbone_from(entries)
    branches = [branch_from(entries, j) for j in range(1, dims.m + 1)]
    maps, feats, probs = attention_stage_forward(
        T.Tensor(np.asarray(frames, dtype=np.float64)), backbone, branches
    )
    return maps.data, feats.data, probs.data


def sequence_features(entries: Entries, frames: np.ndarray) -> np.ndarray:
    """Stage-2 input features for one sequence: (8c, t, m)."""
    _, feats, _ = attention_predict(entries, frames)
    return np.ascontiguousarray(feats.transpose(2, 0, 1))


def relation_predict(
    entries: Entries, graph: RelationGraph, frames: np.ndarray
) -> np.ndarray:
    """Sequence-level probabilities (t, m) from a relation checkpoint."""
    dims = model_dims(entries)
    if dims.depth == 0:
        raise FormatError("checkpoint holds no graph-stack entries")
    if graph.m != dims.m:
        raise ShapeError(f"graph has {graph.m} nodes but model has {dims.m} branches")
    layers = stgcn_from(entries, dims.depth)
    head = head_from(entries, dims.m)
    f0 = T.Tensor(sequence_features(entries, frames))
    return stgcn_forward(f0, graph, layers, head, expected_layers=dims.depth).data
