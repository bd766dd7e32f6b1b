"""Heterogeneous relational value network.

Pipeline: per-type embedding MLPs -> robot-crowd relation graph -> two
relation-typed message-passing layers -> center-robot feature -> value MLP.

Several scenes are evaluated together by stacking their node features in one
matrix, ordered type-major: every center robot first, then every human, then
every other robot. Each relation then becomes a block-diagonal sparse
adjacency over that matrix, so a batched layer is a few sparse-dense products.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .core import Ablation, AgentKind, JointObservation, RngStream

EMBED_DIM = 64
VALUE_HIDDEN = (128, 64, 32)
N_GNN_LAYERS = 2
CENTER_DIM = 6
NEIGHBOR_DIM = 8

HOMOGENEOUS = "ALL"


class RelationType(str, enum.Enum):
    HHI = "HHI"  # human - human
    HCRI = "HCRI"  # human - center robot
    HORI = "HORI"  # human - other robot
    CRORI = "CRORI"  # center robot - other robot
    ORORI = "ORORI"  # other robot - other robot


def relation_keys(ablation: Ablation) -> tuple[str, ...]:
    if Ablation(ablation).heterogeneous:
        return tuple(r.value for r in RelationType)
    return (HOMOGENEOUS,)


def neighbor_dim(ablation: Ablation) -> int:
    return NEIGHBOR_DIM if Ablation(ablation).uses_category else NEIGHBOR_DIM - 1


def embed_groups(ablation: Ablation) -> dict[str, int]:
    """Embedding MLP name -> input width."""
    d = neighbor_dim(ablation)
    if Ablation(ablation).heterogeneous:
        return {"embed_cr": CENTER_DIM, "embed_h": d, "embed_or": d}
    return {"embed_cr": CENTER_DIM, "embed_nb": d}


def param_shapes(ablation: Ablation) -> dict[str, tuple[int, int]]:
    """Name -> shape for every trainable tensor, in canonical order."""
    shapes = {}
    for name, d_in in embed_groups(ablation).items():
        shapes[f"{name}.0.W"] = (d_in, EMBED_DIM)
        shapes[f"{name}.0.b"] = (1, EMBED_DIM)
        shapes[f"{name}.1.W"] = (EMBED_DIM, EMBED_DIM)
        shapes[f"{name}.1.b"] = (1, EMBED_DIM)
    for layer in range(N_GNN_LAYERS):
        for rel in relation_keys(ablation):
            shapes[f"gnn{layer}.{rel}.W1"] = (EMBED_DIM, EMBED_DIM)
            shapes[f"gnn{layer}.{rel}.W2"] = (EMBED_DIM, EMBED_DIM)
    dims = (EMBED_DIM,) + VALUE_HIDDEN + (1,)
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        shapes[f"value.{i}.W"] = (a, b)
        shapes[f"value.{i}.b"] = (1, b)
    return shapes


def init_params(rng: RngStream, ablation: Ablation = Ablation.HeR) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, (rows, cols) in param_shapes(ablation).items():
        if name.endswith(".b"):
            params[name] = np.zeros((rows, cols))
        else:
            bound = np.sqrt(6.0 / (rows + cols))
            params[name] = rng.uniform(-bound, bound, size=(rows, cols))
    return params


# ---------------------------------------------------------------- graph


@dataclass(frozen=True)
class HetGraph:
    """Typed node slots and per-relation directed edge lists.

    Node slots for a single scene: 0 is the center robot, ``1..n`` humans,
    ``n+1..n+m`` other robots. Each undirected link appears as two directed
    ``(src, dst)`` rows.
    """

    kinds: tuple
    edges: dict  # relation key -> (E, 2) int array

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)

    def undirected_counts(self) -> dict[str, int]:
        return {k: len(v) // 2 for k, v in self.edges.items()}


def _pairs_both_ways(a, b=None):
    if b is None:
        pairs = list(combinations(a, 2))
    else:
        pairs = [(i, j) for i in a for j in b]
    out = [(i, j) for i, j in pairs] + [(j, i) for i, j in pairs]
    return np.array(out, dtype=np.int64).reshape(-1, 2)


@lru_cache(maxsize=256)
def _graph_for_counts(n_h: int, n_o: int, ablation: Ablation) -> HetGraph:
    cr = [0]
    hs = list(range(1, 1 + n_h))
    os_ = list(range(1 + n_h, 1 + n_h + n_o))
    kinds = (AgentKind.CENTER_ROBOT,) + (AgentKind.HUMAN,) * n_h + (AgentKind.OTHER_ROBOT,) * n_o
    edges = {
        RelationType.HHI.value: _pairs_both_ways(hs),
        RelationType.HCRI.value: _pairs_both_ways(hs, cr),
        RelationType.HORI.value: _pairs_both_ways(hs, os_),
        RelationType.CRORI.value: _pairs_both_ways(cr, os_),
        RelationType.ORORI.value: _pairs_both_ways(os_),
    }
    if not Ablation(ablation).heterogeneous:
        edges = {HOMOGENEOUS: np.concatenate(list(edges.values()), axis=0)}
    for v in edges.values():
        v.setflags(write=False)
    return HetGraph(kinds, edges)


def build_het_graph(obs: JointObservation, ablation: Ablation = Ablation.HeR) -> HetGraph:
    n_h, n_o = obs.counts
    return _graph_for_counts(n_h, n_o, Ablation(ablation))


_TYPE_ORDER = (AgentKind.CENTER_ROBOT, AgentKind.HUMAN, AgentKind.OTHER_ROBOT)


@dataclass(frozen=True)
class GraphOperators:
    """Sparse operators for one layer over type-major node slots.

    Per relation, ``self_op`` averages the self term over the relations a
    node takes part in and ``adj`` sums neighbor features. ``blocks[t]``
    lists the ``(relation, "W1" | "W2")`` weights that rows of type ``t``
    actually feed, and ``mix`` routes those per-type products to every
    node (see :func:`autodiff.relational_mix`).
    """

    n_nodes: int
    self_op: dict
    adj: dict
    relations: tuple = ()
    slices: tuple = ()  # (start, stop) per type in _TYPE_ORDER
    blocks: tuple = ()
    mix: object = None
    mix_t: object = None


def _type_slices(kinds) -> tuple:
    codes = np.array([_TYPE_ORDER.index(AgentKind(k)) for k in kinds], dtype=np.int64)
    if np.any(np.diff(codes) < 0):
        raise ValueError("node slots must be ordered center robot, humans, other robots")
    bounds = np.searchsorted(codes, np.arange(len(_TYPE_ORDER) + 1))
    return codes, tuple((int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]))


def graph_operators(graph: HetGraph, relations) -> GraphOperators:
    n = graph.n_nodes
    relations = tuple(relations)
    codes, slices = _type_slices(graph.kinds)
    incident = {}
    adj = {}
    for rel in relations:
        e = graph.edges.get(rel, np.zeros((0, 2), dtype=np.int64))
        adj[rel] = sp.csr_matrix((np.ones(len(e)), (e[:, 1], e[:, 0])), shape=(n, n))
        mask = np.zeros(n, dtype=bool)
        mask[e[:, 0]] = True
        incident[rel] = mask
    k = np.sum([incident[r] for r in relations], axis=0) if relations else np.zeros(n)
    self_op = {}
    for rel in relations:
        # Nodes outside every relation fall back to the mean of all W1.
        w = np.where(k > 0, incident[rel] / np.maximum(k, 1), 1.0 / len(relations))
        self_op[rel] = sp.diags(w, format="csr")

    # Every nonzero M[u, v] of block (rel, W) reads row v's product with W, so
    # a type only needs the blocks whose columns land on its rows.
    entries = []
    for rel in relations:
        for tag, m in (("W1", self_op[rel]), ("W2", adj[rel])):
            m = m.tocoo()
            keep = m.data != 0
            entries.append(((rel, tag), m.row[keep], m.col[keep], m.data[keep]))
    blocks = tuple(
        tuple(key for key, _, cols, _ in entries if np.any(codes[cols] == t))
        for t in range(len(_TYPE_ORDER))
    )
    offsets = np.cumsum([0] + [(b - a) * len(bl) for (a, b), bl in zip(slices, blocks)])
    starts = np.array([a for a, _ in slices])
    widths = np.array([len(bl) for bl in blocks])
    rows, cols, vals = [], [], []
    for key, r, c, v in entries:
        t = codes[c]
        pos = np.array([bl.index(key) if key in bl else -1 for bl in blocks])
        rows.append(r)
        cols.append(offsets[t] + (c - starts[t]) * widths[t] + pos[t])
        vals.append(v)
    mix = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, int(offsets[-1])))
    return GraphOperators(n, self_op, adj, relations, slices, blocks, mix, mix.T.tocsr())


def _layer_params(params, layer: int, relations):
    return {rel: {"W1": params[f"gnn{layer}.{rel}.W1"], "W2": params[f"gnn{layer}.{rel}.W2"]}
            for rel in relations}


def _gnn_forward(ops: GraphOperators, Hs, weights: dict):
    """``Hs`` holds one feature tensor per node type (``None`` when empty);
    returns the same layout.

    Computes relu(sum_i S_i (H W1_i) + A_i (H W2_i)), multiplying each type's
    rows only by the weights it feeds.
    """
    xws, ks = [], []
    for H, bl in zip(Hs, ops.blocks):
        if H is None:
            continue
        if not bl:
            raise ValueError("node type with rows but no weight blocks")
        W = ad.concat([weights[rel][tag] for rel, tag in bl], axis=1) if len(bl) > 1 else weights[bl[0][0]][bl[0][1]]
        xws.append(ad.matmul(H, W))
        ks.append(len(bl))
    out = ad.relu(ad.relational_mix(ops.mix, ops.mix_t, xws, ks))
    return [ad.take_rows(out, a, b) if b > a else None for a, b in ops.slices]


def _split_types(ops: GraphOperators, feats):
    return [ad.take_rows(feats, a, b) if b > a else None for a, b in ops.slices]


def _join_types(Hs):
    parts = [H for H in Hs if H is not None]
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)


def hetgnn_layer(graph: HetGraph, feats, layer_weights: dict):
    """One message-passing layer on a single graph.

    ``layer_weights`` maps relation key -> (W1, W2). Each node receives, per
    relation it belongs to, the neighbor sum times W2; its own feature is
    multiplied by the mean W1 of those relations. Results are summed over
    relations and passed through ReLU.
    """
    ops = graph_operators(graph, layer_weights.keys())
    weights = {rel: {"W1": w1, "W2": w2} for rel, (w1, w2) in layer_weights.items()}
    return _join_types(_gnn_forward(ops, _split_types(ops, feats), weights))


def homogeneous_gnn_layer(graph: HetGraph, feats: np.ndarray, W1: np.ndarray, W2: np.ndarray) -> np.ndarray:
    """Plain single-relation layer on the union of all edges (reference form)."""
    feats = np.asarray(feats)
    out = feats @ W1
    for edges in graph.edges.values():
        for src, dst in edges:
            out[dst] += feats[src] @ W2
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------- batching


@dataclass(frozen=True)
class Batch:
    """Stacked inputs and graph operators for ``size`` scenes."""

    size: int
    cr: np.ndarray
    humans: np.ndarray
    others: np.ndarray
    ops: GraphOperators
    ablation: Ablation


@lru_cache(maxsize=64)
def _batched_graph(counts: tuple, ablation: Ablation) -> tuple[HetGraph, GraphOperators]:
    B = len(counts)
    n_h_total = sum(c[0] for c in counts)
    h_off, o_off = B, B + n_h_total
    kinds = [AgentKind.CENTER_ROBOT] * B
    kinds += [AgentKind.HUMAN] * n_h_total
    kinds += [AgentKind.OTHER_ROBOT] * sum(c[1] for c in counts)
    pieces: dict[str, list] = {}
    for b, (n_h, n_o) in enumerate(counts):
        g = _graph_for_counts(n_h, n_o, ablation)
        remap = np.concatenate([[b], h_off + np.arange(n_h), o_off + np.arange(n_o)]).astype(np.int64)
        h_off += n_h
        o_off += n_o
        for rel, e in g.edges.items():
            pieces.setdefault(rel, []).append(remap[e])
    edges = {rel: np.concatenate(v, axis=0) for rel, v in pieces.items()}
    graph = HetGraph(tuple(kinds), edges)
    return graph, graph_operators(graph, relation_keys(ablation))


def prepare_batch(observations, ablation: Ablation = Ablation.HeR) -> Batch:
    ablation = Ablation(ablation)
    observations = list(observations)
    counts = tuple(o.counts for o in observations)
    _, ops = _batched_graph(counts, ablation)
    d = neighbor_dim(ablation)
    cr = np.stack([o.cr for o in observations]) if observations else np.zeros((0, CENTER_DIM))
    hs = [o.humans[:, :d] for o in observations if len(o.humans)]
    os_ = [o.other_robots[:, :d] for o in observations if len(o.other_robots)]
    humans = np.concatenate(hs, axis=0) if hs else np.zeros((0, d))
    others = np.concatenate(os_, axis=0) if os_ else np.zeros((0, d))
    return Batch(len(observations), cr, humans, others, ops, ablation)


def prepare_arrays(cr: np.ndarray, humans: np.ndarray, others: np.ndarray, ablation: Ablation) -> Batch:
    """Batch from pre-stacked arrays: cr (B, 6), humans (B, n, 8), others (B, m, 8)."""
    ablation = Ablation(ablation)
    B, n, m = len(cr), humans.shape[1], others.shape[1]
    _, ops = _batched_graph(((n, m),) * B, ablation)
    d = neighbor_dim(ablation)
    return Batch(B, cr, humans[:, :, :d].reshape(B * n, d), others[:, :, :d].reshape(B * m, d), ops, ablation)


def _mlp(x, params, prefix: str, n_layers: int, last_relu: bool):
    for i in range(n_layers):
        x = ad.affine(x, params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"])
        if i < n_layers - 1 or last_relu:
            x = ad.relu(x)
    return x


def _embed_types(batch: Batch, params) -> list:
    """Per-type embeddings [center robots, humans, other robots]; ``None`` when empty."""
    cr = _mlp(batch.cr, params, "embed_cr", 2, True)
    if batch.ablation.heterogeneous:
        hs = _mlp(batch.humans, params, "embed_h", 2, True) if len(batch.humans) else None
        os_ = _mlp(batch.others, params, "embed_or", 2, True) if len(batch.others) else None
        return [cr, hs, os_]
    nb = np.concatenate([batch.humans, batch.others], axis=0)
    if not len(nb):
        return [cr, None, None]
    # Shared embedding: one pass over all neighbors, then split by type.
    emb = _mlp(nb, params, "embed_nb", 2, True)
    n_h = len(batch.humans)
    return [cr, ad.take_rows(emb, 0, n_h) if n_h else None,
            ad.take_rows(emb, n_h, len(nb)) if len(batch.others) else None]


def embed_batch(batch: Batch, params):
    """Node feature matrix in type-major order."""
    return _join_types(_embed_types(batch, params))


def forward(batch: Batch, params):
    """Values for every scene in ``batch`` as a (B, 1) tensor.

    ``params`` values may be arrays or tape-watched tensors.
    """
    Hs = _embed_types(batch, params)
    relations = relation_keys(batch.ablation)
    for layer in range(N_GNN_LAYERS):
        Hs = _gnn_forward(batch.ops, Hs, _layer_params(params, layer, relations))
    return _mlp(Hs[0], params, "value", len(VALUE_HIDDEN) + 1, False)


def embed(obs: JointObservation, params, ablation: Ablation = Ablation.HeR) -> np.ndarray:
    """One 64-vector per agent, rows ordered [center robot, humans, other robots]."""
    return embed_batch(prepare_batch([obs], ablation), params).value


def value(obs: JointObservation, params, ablation: Ablation = Ablation.HeR) -> float:
    return float(forward(prepare_batch([obs], ablation), params).value[0, 0])


def values(observations, params, ablation: Ablation = Ablation.HeR) -> np.ndarray:
    observations = list(observations)
    if not observations:
        return np.zeros(0)
    return forward(prepare_batch(observations, ablation), params).value[:, 0]


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"HERDRLCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_name(buf, name: str):
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read(buf, n: int) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw


def _unpack_name(buf) -> str:
    (n,) = struct.unpack("<H", _read(buf, 2))
    return _read(buf, n).decode("utf-8")


def dump_checkpoint(params: dict, ablation: Ablation) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    _pack_name(buf, Ablation(ablation).value)
    buf.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        _pack_name(buf, name)
        buf.write(struct.pack("<II", *arr.shape))
    for name, arr in params.items():
        _pack_name(buf, name)
        buf.write(struct.pack("<II", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def load_checkpoint_bytes(data: bytes) -> tuple[dict, Ablation]:
    buf = io.BytesIO(data)
    if buf.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", _read(buf, 4))
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        ablation = Ablation(_unpack_name(buf))
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    (count,) = struct.unpack("<I", _read(buf, 4))
    table = [(_unpack_name(buf), struct.unpack("<II", _read(buf, 8))) for _ in range(count)]
    params = {}
    for expected_name, shape in table:
        name = _unpack_name(buf)
        rows, cols = struct.unpack("<II", _read(buf, 8))
        if name != expected_name or (rows, cols) != shape:
            raise CheckpointError(f"tensor {name} disagrees with header entry {expected_name}{shape}")
        raw = _read(buf, 8 * rows * cols)
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if buf.read(1):
        raise CheckpointError("trailing bytes after the last tensor")
    return params, ablation


def save_checkpoint(path, params: dict, ablation: Ablation) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_checkpoint(params, ablation))


def load_checkpoint(path) -> tuple[dict, Ablation]:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())


def dimension_diff(params: dict, ablation: Ablation) -> list[str]:
    """Human-readable mismatches between ``params`` and the architecture."""
    expected = param_shapes(ablation)
    diff = []
    for name, shape in expected.items():
        if name not in params:
            diff.append(f"missing {name} {shape}")
        elif params[name].shape != shape:
            diff.append(f"{name}: expected {shape}, found {params[name].shape}")
    for name in params:
        if name not in expected:
            diff.append(f"unexpected {name} {params[name].shape}")
    return diff
