"""Edge-selection game over candidate digraphs of physical quantities.

A game instance (GameConfig) fixes a node set with one root (the separation
input) and one leaf (the traction output), an ordered list of candidate
directed edges, and optional groups of mutually exclusive nodes.  A game
state is a bit vector over the candidate edges plus a terminated flag.
Players switch edges on one at a time; a distinguished TERMINATE action
ends the game once the digraph is admissible:

  * acyclic,
  * at least one directed root-to-leaf path exists,
  * every node touched by an active edge lies on some root-to-leaf path.

Isolated nodes are always allowed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

ROOT = "root"
LEAF = "leaf"
INTERMEDIATE = "intermediate"

_KINDS = (ROOT, LEAF, INTERMEDIATE)


class GameError(ValueError):
    """Invalid configuration, state or action."""


@dataclass(frozen=True)
class NodeSpec:
    """One physical quantity: id, display name, feature width, role."""

    id: int
    name: str
    width: int
    kind: str

    def __post_init__(self):
        if self.width < 1:
            raise GameError(f"node {self.name!r}: width must be >= 1")
        if self.kind not in _KINDS:
            raise GameError(f"node {self.name!r}: unknown kind {self.kind!r}")


class GameConfig:
    """Immutable game definition: nodes, ordered candidate edges, exclusions.

    Edge order is the action index order.  Action E (= number of candidate
    edges) is the TERMINATE action.
    """

    def __init__(self, nodes, candidate_edges, exclusion_groups=(), name=""):
        self.name = name
        self.nodes = tuple(nodes)
        self.candidate_edges = tuple((int(u), int(v)) for u, v in candidate_edges)
        self.exclusion_groups = tuple(frozenset(g) for g in exclusion_groups)
        self._validate()
        self.node_by_id = {n.id: n for n in self.nodes}
        self.root_id = next(n.id for n in self.nodes if n.kind == ROOT)
        self.leaf_id = next(n.id for n in self.nodes if n.kind == LEAF)
        self.n_edges = len(self.candidate_edges)
        self.edge_index = {e: i for i, e in enumerate(self.candidate_edges)}
        # index of the reverse edge, or -1 if the reverse is not a candidate
        self.reverse_index = tuple(
            self.edge_index.get((v, u), -1) for u, v in self.candidate_edges
        )

    @property
    def terminate_action(self) -> int:
        return self.n_edges

    def _validate(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GameError("duplicate node ids")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise GameError("duplicate node names")
        roots = [n for n in self.nodes if n.kind == ROOT]
        leaves = [n for n in self.nodes if n.kind == LEAF]
        if len(roots) != 1:
            raise GameError(f"need exactly one root node, got {len(roots)}")
        if len(leaves) != 1:
            raise GameError(f"need exactly one leaf node, got {len(leaves)}")
        root_id, leaf_id = roots[0].id, leaves[0].id
        known = set(ids)
        seen = set()
        for u, v in self.candidate_edges:
            if u not in known or v not in known:
                raise GameError(f"edge ({u},{v}) references unknown node id")
            if (u, v) in seen:
                raise GameError(f"duplicate candidate edge ({u},{v})")
            seen.add((u, v))
            if v == root_id:
                raise GameError(f"edge ({u},{v}) targets the root")
            if u == leaf_id:
                raise GameError(f"edge ({u},{v}) sources from the leaf")
            if u == v:
                raise GameError(f"self-loop edge ({u},{v})")
        for group in self.exclusion_groups:
            for m in group:
                if m not in known:
                    raise GameError(f"exclusion group references unknown node id {m}")
            if len(group) < 2:
                raise GameError("exclusion group needs at least two members")

    # -- queries ------------------------------------------------------------

    def edge_names(self):
        """Candidate edges as (source name, target name) pairs."""
        by_id = {n.id: n.name for n in self.nodes}
        return [(by_id[u], by_id[v]) for u, v in self.candidate_edges]

    def edges_from_bits(self, bits):
        return [self.candidate_edges[i] for i in range(self.n_edges) if bits[i]]

    def resolve_edge_pairs(self, pairs):
        """Map (source name, target name) pairs to candidate edge indices."""
        by_name = {n.name: n.id for n in self.nodes}
        indices = []
        for src, dst in pairs:
            try:
                key = (by_name[src], by_name[dst])
            except KeyError as exc:
                raise GameError(f"unknown node name {exc.args[0]!r}") from None
            if key not in self.edge_index:
                raise GameError(f"({src} -> {dst}) is not a candidate edge")
            indices.append(self.edge_index[key])
        return indices

    def fingerprint(self) -> str:
        import hashlib

        payload = json.dumps(
            {
                "nodes": [(n.id, n.name, n.width, n.kind) for n in self.nodes],
                "edges": list(self.candidate_edges),
                "exclusions": sorted(sorted(g) for g in self.exclusion_groups),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GameState:
    """Edge on/off bits plus a terminated flag.  Immutable value object."""

    edges: tuple
    terminated: bool = False

    @staticmethod
    def initial(config: GameConfig) -> "GameState":
        return GameState(edges=(False,) * config.n_edges)

    def active_count(self) -> int:
        return sum(self.edges)


def canonical_key(state: GameState) -> int:
    """Little-endian bit packing of the edge vector; terminated flag excluded."""
    key = 0
    for i, on in enumerate(state.edges):
        if on:
            key |= 1 << i
    return key


def state_from_key(config: GameConfig, key: int, terminated=False) -> GameState:
    bits = tuple(bool(key >> i & 1) for i in range(config.n_edges))
    return GameState(edges=bits, terminated=terminated)


def build_config(raw_spec) -> GameConfig:
    """Build a validated GameConfig from a parsed configuration document.

    Expected document shape::

        {"name": ..., "nodes": [{"id","name","width","kind"}, ...],
         "edges": [[src_id, dst_id], ...], "exclusion_groups": [[id, ...], ...]}
    """
    try:
        nodes = [
            NodeSpec(int(n["id"]), str(n["name"]), int(n["width"]), str(n["kind"]))
            for n in raw_spec["nodes"]
        ]
        edges = [(e[0], e[1]) for e in raw_spec["edges"]]
    except (KeyError, TypeError, IndexError) as exc:
        raise GameError(f"malformed game configuration: {exc}") from exc
    return GameConfig(
        nodes=nodes,
        candidate_edges=edges,
        exclusion_groups=raw_spec.get("exclusion_groups", ()),
        name=raw_spec.get("name", ""),
    )


def load_config(path_or_preset) -> GameConfig:
    """Load a config from a JSON file path or a shipped preset name."""
    text = None
    name = str(path_or_preset)
    if name in ("game1", "game2"):
        text = resources.files("tsgame.presets").joinpath(f"{name}.json").read_text()
    else:
        with open(name) as fh:
            text = fh.read()
    return build_config(json.loads(text))


# -- graph predicates --------------------------------------------------------


def _adjacency(config: GameConfig, bits):
    fwd = {}
    for i, on in enumerate(bits):
        if on:
            u, v = config.candidate_edges[i]
            fwd.setdefault(u, []).append(v)
    return fwd


def _reachable(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def creates_cycle(config: GameConfig, state: GameState, edge_index: int) -> bool:
    """Would activating candidate edge `edge_index` create a directed cycle?

    Only possible when the new edge's target already reaches its source.
    """
    if not 0 <= edge_index < config.n_edges:
        raise GameError(f"edge index {edge_index} out of range")
    if state.edges[edge_index]:
        raise GameError(f"edge {edge_index} is already active")
    u, v = config.candidate_edges[edge_index]
    return u in _reachable(_adjacency(config, state.edges), v)


def _is_acyclic(config: GameConfig, bits) -> bool:
    adj = _adjacency(config, bits)
    # Kahn peeling on the touched subgraph
    indeg = {}
    for u, targets in adj.items():
        indeg.setdefault(u, 0)
        for v in targets:
            indeg[v] = indeg.get(v, 0) + 1
    queue = [n for n, d in indeg.items() if d == 0]
    removed = 0
    while queue:
        u = queue.pop()
        removed += 1
        for v in adj.get(u, ()):
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return removed == len(indeg)


def _exclusion_ok(config: GameConfig, bits) -> bool:
    for group in config.exclusion_groups:
        touched = set()
        for i, on in enumerate(bits):
            if on:
                u, v = config.candidate_edges[i]
                if u in group:
                    touched.add(u)
                if v in group:
                    touched.add(v)
        if len(touched) > 1:
            return False
    return True


def state_invariants_hold(config: GameConfig, bits) -> bool:
    """Acyclicity + no mutually-reversed pair + exclusion consistency."""
    for i, on in enumerate(bits):
        if on:
            j = config.reverse_index[i]
            if j >= 0 and bits[j]:
                return False
    return _exclusion_ok(config, bits) and _is_acyclic(config, bits)


def is_admissible(config: GameConfig, state: GameState) -> bool:
    """A complete constitutive digraph: acyclic, a root-to-leaf path exists,
    and every node with an incident active edge lies on such a path."""
    bits = state.edges
    if not _is_acyclic(config, bits):
        return False
    fwd = {}
    bwd = {}
    touched = set()
    for i, on in enumerate(bits):
        if on:
            u, v = config.candidate_edges[i]
            fwd.setdefault(u, []).append(v)
            bwd.setdefault(v, []).append(u)
            touched.add(u)
            touched.add(v)
    from_root = _reachable(fwd, config.root_id)
    if config.leaf_id not in from_root:
        return False
    to_leaf = _reachable(bwd, config.leaf_id)
    on_path = from_root & to_leaf
    return touched <= on_path


def legal_actions(config: GameConfig, state: GameState) -> np.ndarray:
    """Boolean mask of length E+1; entry E is the TERMINATE action."""
    if state.terminated:
        raise GameError("legal_actions called on a terminated state")
    bits = state.edges
    mask = np.zeros(config.n_edges + 1, dtype=bool)
    adj = _adjacency(config, bits)
    # per-group members already touched by an active edge
    touched_by_group = []
    for group in config.exclusion_groups:
        touched = set()
        for i, on in enumerate(bits):
            if on:
                u, v = config.candidate_edges[i]
                touched.update(group & {u, v})
        touched_by_group.append(touched)
    reach_cache = {}
    for i in range(config.n_edges):
        if bits[i]:
            continue
        j = config.reverse_index[i]
        if j >= 0 and bits[j]:
            continue
        u, v = config.candidate_edges[i]
        conflict = False
        for group, touched in zip(config.exclusion_groups, touched_by_group):
            would_touch = touched | (group & {u, v})
            if len(would_touch) > 1:
                conflict = True
                break
        if conflict:
            continue
        if v not in reach_cache:
            reach_cache[v] = _reachable(adj, v)
        if u in reach_cache[v]:
            continue
        mask[i] = True
    mask[config.n_edges] = is_admissible(config, state)
    return mask


def apply_action(config: GameConfig, state: GameState, action: int) -> GameState:
    """Pure transition: switch one edge on, or terminate.  Rejects illegal moves."""
    if state.terminated:
        raise GameError("cannot act on a terminated state")
    if not 0 <= action <= config.n_edges:
        raise GameError(f"action {action} out of range")
    mask = legal_actions(config, state)
    if not mask[action]:
        if action == config.n_edges:
            raise GameError("TERMINATE is illegal: digraph is not admissible")
        raise GameError(f"edge action {action} is illegal in this state")
    if action == config.n_edges:
        return GameState(edges=state.edges, terminated=True)
    bits = list(state.edges)
    bits[action] = True
    return GameState(edges=tuple(bits), terminated=False)


# -- enumeration --------------------------------------------------------------


@dataclass
class EnumerationResult:
    state_count: int
    admissible_count: int
    exhaustive: bool
    admissible_sets: list = field(default_factory=list)


def enumerate_states(
    config: GameConfig,
    max_edges: int | None = None,
    budget: int | None = None,
    time_budget_s: float | None = None,
    collect: bool = False,
) -> EnumerationResult:
    """Count edge subsets satisfying the state invariants, and how many are
    admissible.

    Subsets are generated depth-first by only ever adding edges with a higher
    index than the current maximum, so each valid subset is visited exactly
    once.  Configs with more than 25 candidate edges require `budget` (visited
    state cap) and/or `time_budget_s`, and the returned counts are lower
    bounds (`exhaustive=False`).
    """
    if config.n_edges > 25 and budget is None and time_budget_s is None:
        raise GameError(
            f"{config.n_edges} candidate edges is too large for an exhaustive "
            "sweep; pass a budget for lower-bound counts"
        )
    deadline = time.monotonic() + time_budget_s if time_budget_s else None
    result = EnumerationResult(0, 0, exhaustive=True)
    bits = [False] * config.n_edges
    state = GameState(edges=tuple(bits))

    def visit(bits) -> bool:
        """Count one valid subset; returns False once a budget is exhausted."""
        result.state_count += 1
        st = GameState(edges=tuple(bits))
        if is_admissible(config, st):
            result.admissible_count += 1
            if collect:
                result.admissible_sets.append(config.edges_from_bits(bits))
        if budget is not None and result.state_count >= budget:
            return False
        if deadline is not None and result.state_count % 256 == 0:
            if time.monotonic() > deadline:
                return False
        return True

    def extend(bits, start, n_active) -> bool:
        for i in range(start, config.n_edges):
            j = config.reverse_index[i]
            if j >= 0 and bits[j]:
                continue
            st = GameState(edges=tuple(bits))
            # exclusion check on the would-be state
            bits[i] = True
            ok = _exclusion_ok(config, bits)
            bits[i] = False
            if not ok:
                continue
            if creates_cycle(config, st, i):
                continue
            bits[i] = True
            keep_going = visit(bits)
            if keep_going and (max_edges is None or n_active + 1 < max_edges):
                keep_going = extend(bits, i + 1, n_active + 1)
            bits[i] = False
            if not keep_going:
                return False
        return True

    finished = visit(bits) and extend(bits, 0, 0)
    result.exhaustive = finished and max_edges is None
    return result
