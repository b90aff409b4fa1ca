"""Bottom-up parse proposal: randomized walks over the skeleton graph.

Each walk paints the skeleton with ordered, directed strokes: a stroke
starts at a node, traverses unvisited edges, prefers to continue in the
direction it was heading (softmax over turn angles), and ends when no
unvisited edge leaves the current node. New strokes start at leftover
endpoints (or any node with unvisited edges) until the skeleton is
covered. Identical segmentations from different walks are deduplicated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .skeleton import SkeletonEdge, SkeletonGraph

Array = np.ndarray


@dataclass
class CandidateParse:
    """Ordered, directed strokes as pixel paths (x, y), plus provenance."""

    strokes: list[Array]
    walk_id: int

    def __post_init__(self):
        if not self.strokes or any(len(s) == 0 for s in self.strokes):
            raise ContractError("candidate parse needs non-empty strokes")

    @property
    def kappa(self) -> int:
        return len(self.strokes)

    def signature(self) -> frozenset:
        """Segmentation identity: the set of undirected stroke pixel paths."""
        sigs = []
        for s in self.strokes:
            fwd = tuple(map(tuple, np.round(s).astype(int)))
            sigs.append(min(fwd, fwd[::-1]))
        return frozenset(sigs)

    def coverage(self, graph: SkeletonGraph) -> float:
        covered = set()
        for s in self.strokes:
            for x, y in s:
                covered.add((int(round(y)), int(round(x))))
        return len(covered) / max(graph.n_pixels, 1)


def _heading(path: Array, from_start: bool, window: int = 4) -> Array:
    """Unit direction of a path near one of its ends."""
    pts = path[:window] if from_start else path[::-1][:window]
    vec = pts[-1] - pts[0]
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else np.array([1.0, 0.0])


def _edge_end(edge: SkeletonEdge, node_index: int) -> bool:
    """True if the edge's path starts at ``node_index``'s side."""
    return edge.nodes[0] == node_index


def _walk_once(graph: SkeletonGraph, rng: np.random.Generator, angle_scale_deg: float):
    unvisited = set(range(len(graph.edges)))
    incident: dict[int, list[int]] = {n.index: [] for n in graph.nodes}
    for e in graph.edges:
        incident[e.nodes[0]].append(e.index)
        if e.nodes[1] != e.nodes[0]:
            incident[e.nodes[1]].append(e.index)

    def open_nodes():
        return [n for n, es in incident.items() if any(e in unvisited for e in es)]

    def pick_start():
        options = open_nodes()
        endpoints = [n for n in options if graph.nodes[n].kind == "endpoint"]
        pool = endpoints or options
        return pool[rng.integers(len(pool))]

    strokes: list[Array] = []
    while unvisited:
        node = pick_start()
        stroke_pts: list[Array] = []
        heading = None
        while True:
            choices = [e for e in incident[node] if e in unvisited]
            if not choices:
                break
            if heading is None or len(choices) == 1:
                pick = choices[int(rng.integers(len(choices)))]
            else:
                angles = []
                for ei in choices:
                    edge = graph.edges[ei]
                    out_dir = _heading(edge.path, from_start=_edge_end(edge, node))
                    cosang = float(np.clip(np.dot(heading, out_dir), -1.0, 1.0))
                    angles.append(np.degrees(np.arccos(cosang)))
                logits = -np.asarray(angles) / angle_scale_deg
                logits -= logits.max()
                probs = np.exp(logits)
                probs /= probs.sum()
                pick = choices[int(rng.choice(len(choices), p=probs))]
            edge = graph.edges[pick]
            unvisited.discard(pick)
            path = edge.path if _edge_end(edge, node) else edge.path[::-1]
            if stroke_pts:
                path = path[1:]  # avoid repeating the junction pixel
            stroke_pts.extend(path)
            heading = _heading(np.asarray(path[-4:] if len(path) >= 2 else path), from_start=True)
            node = edge.nodes[1] if _edge_end(edge, node) else edge.nodes[0]
        if stroke_pts:
            strokes.append(np.asarray(stroke_pts, dtype=np.float64))
    return strokes


def propose_parses(
    graph: SkeletonGraph,
    n_walks: int,
    rng: np.random.Generator,
    angle_scale_deg: float = 45.0,
    cover_frac: float = 0.95,
) -> list[CandidateParse]:
    """Randomized traversals of the skeleton, deduplicated by segmentation."""
    if not graph.edges:
        raise ContractError("skeleton graph has no edges")
    out: list[CandidateParse] = []
    seen: set[frozenset] = set()
    for walk in range(n_walks):
        strokes = _walk_once(graph, rng, angle_scale_deg)
        cand = CandidateParse(strokes, walk_id=walk)
        if cand.coverage(graph) < cover_frac:
            continue
        sig = cand.signature()
        if sig in seen:
            continue
        seen.add(sig)
        out.append(cand)
    return out
