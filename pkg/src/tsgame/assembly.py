"""Turn an admissible digraph into an executable constitutive model.

The digraph's information flows are split into regressor groups: all nodes
sharing an identical predecessor set are predicted jointly from the windowed
histories of those predecessors.  Calibration fits each group teacher-forced
(ground-truth upstream inputs); blind prediction executes the groups in
topological order, feeding each one the *predicted* upstream series, so that
only the root separation history is ever taken from the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .game import GameConfig, GameState, is_admissible
from .regression import (
    Hyperparameters,
    RegressionError,
    Scaler,
    regressor_from_dict,
    window_features,
)

MODEL_FORMAT_VERSION = 1


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class RegressorGroup:
    """Nodes with one shared predecessor set, predicted by one regressor."""

    inputs: tuple  # node ids, sorted
    outputs: tuple  # node ids, sorted
    position: int  # topological rank


@dataclass
class ModelPlan:
    digraph: tuple  # active edges as (src, dst) pairs
    groups: list  # RegressorGroup, topologically ordered
    window: int

    def nodes(self):
        used = set()
        for g in self.groups:
            used.update(g.inputs)
            used.update(g.outputs)
        return sorted(used)


def extract_plan(config: GameConfig, digraph, window: int = 20) -> ModelPlan:
    """Group the digraph's nodes by predecessor set, in execution order.

    `digraph` is an iterable of (src, dst) node-id pairs or a GameState.
    Isolated nodes never appear in the plan.
    """
    if isinstance(digraph, GameState):
        edges = tuple(config.edges_from_bits(digraph.edges))
    else:
        edges = tuple((int(u), int(v)) for u, v in digraph)
    bits = [False] * config.n_edges
    for e in edges:
        if e not in config.edge_index:
            raise AssemblyError(f"edge {e} is not a candidate edge of this game")
        bits[config.edge_index[e]] = True
    if not is_admissible(config, GameState(edges=tuple(bits))):
        raise AssemblyError("digraph is not admissible; cannot build a model plan")
    if window < 1:
        raise AssemblyError("window must be >= 1")

    preds: dict[int, set] = {}
    for u, v in edges:
        preds.setdefault(v, set()).add(u)

    # longest-path depth from the root; identical predecessor sets share it
    depth = {config.root_id: 0}

    def node_depth(n):
        if n not in depth:
            depth[n] = 1 + max(node_depth(p) for p in preds[n])
        return depth[n]

    by_preds: dict[tuple, list] = {}
    for n in preds:
        by_preds.setdefault(tuple(sorted(preds[n])), []).append(n)
    groups = [
        RegressorGroup(
            inputs=inp,
            outputs=tuple(sorted(outs)),
            position=node_depth(outs[0]),
        )
        for inp, outs in by_preds.items()
    ]
    groups.sort(key=lambda g: (g.position, g.outputs))
    return ModelPlan(digraph=edges, groups=groups, window=int(window))


@dataclass
class CalibratedModel:
    """A plan plus fitted per-group regressors and per-node scalers."""

    config_fingerprint: str
    plan: ModelPlan
    regressors: list
    scalers: dict  # node id -> Scaler
    widths: dict  # node id -> feature width
    training_meta: dict = field(default_factory=dict)

    # -- persistence -----------------------------------------------------------

    def to_dict(self):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "config_fingerprint": self.config_fingerprint,
            "window": self.plan.window,
            "digraph": [list(e) for e in self.plan.digraph],
            "groups": [
                {"inputs": list(g.inputs), "outputs": list(g.outputs), "position": g.position}
                for g in self.plan.groups
            ],
            "regressors": [r.to_dict() for r in self.regressors],
            "scalers": {str(n): s.to_dict() for n, s in self.scalers.items()},
            "widths": {str(n): w for n, w in self.widths.items()},
            "training_meta": self.training_meta,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @staticmethod
    def from_dict(d):
        version = d.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise AssemblyError(f"unsupported model format version {version!r}")
        plan = ModelPlan(
            digraph=tuple(tuple(e) for e in d["digraph"]),
            groups=[
                RegressorGroup(tuple(g["inputs"]), tuple(g["outputs"]), g["position"])
                for g in d["groups"]
            ],
            window=d["window"],
        )
        return CalibratedModel(
            config_fingerprint=d["config_fingerprint"],
            plan=plan,
            regressors=[regressor_from_dict(r) for r in d["regressors"]],
            scalers={int(n): Scaler.from_dict(s) for n, s in d["scalers"].items()},
            widths={int(n): int(w) for n, w in d["widths"].items()},
            training_meta=d.get("training_meta", {}),
        )

    @staticmethod
    def load(path):
        with open(path) as fh:
            return CalibratedModel.from_dict(json.load(fh))


def _stack_node(paths, node, width):
    rows = []
    for p in paths:
        if node not in p:
            raise AssemblyError(f"node id {node} missing from a training path")
        arr = np.asarray(p[node], dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[1] != width:
            raise AssemblyError(
                f"node id {node}: expected width {width}, got {arr.shape[1]}"
            )
        rows.append(arr)
    return rows


def _group_xy(plan, group, paths, scalers, widths):
    """Teacher-forced design matrix and targets for one group, all paths."""
    xs, ys = [], []
    per_node_in = {n: _stack_node(paths, n, widths[n]) for n in group.inputs}
    per_node_out = {n: _stack_node(paths, n, widths[n]) for n in group.outputs}
    for k in range(len(paths)):
        inp = np.concatenate(
            [scalers[n].transform(per_node_in[n][k]) for n in group.inputs], axis=1
        )
        out = np.concatenate(
            [scalers[n].transform(per_node_out[n][k]) for n in group.outputs], axis=1
        )
        xs.append(window_features(inp, plan.window))
        ys.append(out)
    return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)


def calibrate(
    config: GameConfig,
    plan: ModelPlan,
    train_paths,
    hyper: Hyperparameters,
) -> CalibratedModel:
    """Fit scalers and all group regressors on the training split.

    `train_paths` is a sequence of per-path mappings {node id -> (T, width)
    array}; the data module's Dataset.node_views() produces them.
    """
    if len(train_paths) < 2:
        raise AssemblyError("calibration needs at least two training paths")
    widths = {n.id: n.width for n in config.nodes}
    needed = set(plan.nodes())
    scalers = {}
    for node in sorted(needed):
        rows = np.concatenate(_stack_node(train_paths, node, widths[node]), axis=0)
        if not np.isfinite(rows).all():
            raise RegressionError(f"non-finite values in series of node id {node}")
        scalers[node] = Scaler.fit(rows)

    regressors = []
    losses = []
    for i, group in enumerate(plan.groups):
        x, y = _group_xy(plan, group, train_paths, scalers, widths)
        reg = hyper.make_regressor()
        loss = reg.fit(x, y, seed=hyper.seed + i)
        regressors.append(reg)
        losses.append(loss)
    return CalibratedModel(
        config_fingerprint=config.fingerprint(),
        plan=plan,
        regressors=regressors,
        scalers=scalers,
        widths={n: widths[n] for n in sorted(needed)},
        training_meta={
            "final_losses": losses,
            "n_train_paths": len(train_paths),
            "hyper": hyper.to_dict(),
        },
    )


def predict_blind(model: CalibratedModel, root_series, root_id=None) -> dict:
    """Cascaded forward prediction from the separation history alone.

    Returns {node id -> (T, width) array} in physical units for every plan
    node, the root echoed through unchanged.
    """
    plan = model.plan
    if root_id is None:
        root_id = _infer_root(plan)
    series = np.asarray(root_series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if series.shape[0] < 1:
        raise AssemblyError("separation history must contain at least one step")
    if series.shape[1] != model.widths[root_id]:
        raise AssemblyError(
            f"root series width {series.shape[1]} != expected {model.widths[root_id]}"
        )
    scaled = {root_id: model.scalers[root_id].transform(series)}
    for group, reg in zip(plan.groups, model.regressors):
        inp = np.concatenate([scaled[n] for n in group.inputs], axis=1)
        pred = reg.predict(window_features(inp, plan.window))
        pos = 0
        for n in group.outputs:
            w = model.widths[n]
            scaled[n] = pred[:, pos : pos + w]
            pos += w
    return {n: model.scalers[n].inverse(s) for n, s in scaled.items()}


def predict_teacher_forced(model: CalibratedModel, path) -> list:
    """Per-group predictions with ground-truth inputs.

    `path` maps node ids to (T, width) arrays.  Returns one record per group
    with the scaled-space residual matrix, isolating each group's fit quality
    from cascade error.
    """
    plan = model.plrn if hasattr(model, "plrn") else model.plan
    records = []
    for group, reg in zip(plan.groups, model.regressors):
        inp = np.concatenate(
            [model.scalers[n].transform(np.asarray(path[n], float)) for n in group.inputs],
            axis=1,
        )
        truth = np.concatenate(
            [model.scalers[n].transform(np.asarray(path[n], float)) for n in group.outputs],
            axis=1,
        )
        pred = reg.predict(window_features(inp, plan.window))
        records.append(
            {
                "group": group,
                "prediction_scaled": pred,
                "residual_scaled": pred - truth,
            }
        )
    return records


def _infer_root(plan: ModelPlan) -> int:
    produced = set()
    for g in plan.groups:
        produced.update(g.outputs)
    roots = set()
    for g in plan.groups:
        roots.update(set(g.inputs) - produced)
    if len(roots) != 1:
        raise AssemblyError(f"plan has {len(roots)} source nodes, expected exactly 1")
    return roots.pop()
