"""The tree search: PUCT selection, constrained expansion under a composite
Gaussian prior, explicit leaf evaluation through the reward, and
cumulative-reward backup.

Each tree node covers one node_duration (1 s) action hold, integrated at
sub_dt (0.1 s) sub-steps. Expansion is windowed around the parent's action
(node constraint) and, at the root, around the previously executed action
(tree constraint). The whole search is deterministic: every tie-break is
documented and there is no random draw anywhere in a pass.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

from .errors import ConfigError, InternalStateError, MalformedInputError
from .kinematics import (
    ACCEL_STEP,
    CENTER_INDEX,
    STEER_STEP,
    Action,
    ActionGrid,
    EgoState,
    VehicleParams,
    rollout,
)
from .predictor import PredictionSet, ego_prior_actions
from .reward import NodeEvaluator, RewardBreakdown, RewardConfig
from .world import CenterlineProjection, WorldSnapshot


@dataclass(frozen=True)
class SearchConfig:
    """Search hyperparameters.

    accel_rate and steer_rate are per-0.1 s continuity limits; the expansion
    window scales them by the number of sub-steps in one node, so the
    defaults allow +-1.5 m/s^2 (3 accel indices) and +-pi/24 rad (1 steer
    index) between consecutive node actions.
    """

    n_simulations: int = 256
    c_puct: float = 2.0
    gamma: float = 1.0
    node_duration: float = 1.0
    sub_dt: float = 0.1
    prior_horizon: float = 1.0
    prior_sigma_sq: float = 100.0
    accel_rate: float = 0.15
    steer_rate: float = math.pi / 240.0
    max_depth: int = 8
    rng_seed: int = 0
    inclusive_backup: bool = True

    def __post_init__(self) -> None:
        if self.n_simulations < 1:
            raise ConfigError("n_simulations must be >= 1")
        if self.c_puct < 0.0:
            raise ConfigError("c_puct must be >= 0")
        if self.node_duration <= 0.0 or self.sub_dt <= 0.0:
            raise ConfigError("node_duration and sub_dt must be positive")
        ratio = self.node_duration / self.sub_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("node_duration must be an integer multiple of sub_dt")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")

    @property
    def n_substeps(self) -> int:
        return int(round(self.node_duration / self.sub_dt))

    @property
    def accel_window(self) -> float:
        return self.accel_rate * self.n_substeps

    @property
    def steer_window(self) -> float:
        return self.steer_rate * self.n_substeps


@dataclass(frozen=True)
class AblationSpec:
    """Feature toggles for the ablation studies.

    Disabling a prior removes its Gaussian term from the composite prior;
    disabling a constraint widens the corresponding expansion window to the
    full action grid.
    """

    use_learned_prior: bool = True
    use_handcrafted_prior: bool = True
    use_tree_constraint: bool = True
    use_node_constraint: bool = True

    def label(self) -> str:
        bits = [
            "Pl" if self.use_learned_prior else "--",
            "Ph" if self.use_handcrafted_prior else "--",
            "Ct" if self.use_tree_constraint else "--",
            "Cn" if self.use_node_constraint else "--",
        ]
        return "+".join(bits)


class TreeNode:
    """One node of the search tree; edge statistics live on the parent's
    Edge entries, per the selection and backup formulas."""

    __slots__ = ("state", "depth", "incoming_action", "reward", "terminal",
                 "children", "projection", "path_xy")

    def __init__(
        self,
        state: EgoState,
        depth: int,
        incoming_action: Action | None,
        reward: RewardBreakdown | None,
        projection: CenterlineProjection,
    ):
        self.state = state
        self.depth = depth
        self.incoming_action = incoming_action
        self.reward = reward
        self.terminal = False
        self.children: list[Edge] | None = None
        self.projection = projection
        self.path_xy: list[tuple[float, float]] | None = None

    @property
    def expanded(self) -> bool:
        return self.children is not None


class Edge:
    """Parent-to-child link carrying the PUCT statistics Q, N, P."""

    __slots__ = ("action", "prior", "q", "n", "child")

    def __init__(self, action: Action, prior: float, child: TreeNode):
        self.action = action
        self.prior = prior
        self.q = 0.0
        self.n = 0
        self.child = child


def constrained_actions(
    prev: Action | None,
    grid: ActionGrid,
    cfg: SearchConfig,
    constrained: bool = True,
) -> list[Action]:
    """Grid actions inside the continuity window around the previous action.

    The window is centered on (0, 0) when there is no previous action, clips
    at the grid boundaries, and covers the full grid when the constraint is
    disabled. Candidates are ordered by (accel index, steer index).
    """
    if not constrained:
        return grid.all_actions()
    a0, d0 = (prev.a, prev.delta) if prev is not None else (0.0, 0.0)
    wa = cfg.accel_window + 1e-9
    wd = cfg.steer_window + 1e-9
    return [
        Action(a, d)
        for a in grid.accel_values
        if abs(a - a0) <= wa
        for d in grid.steer_values
        if abs(d - d0) <= wd
    ]


def compute_prior(
    candidates: list[Action],
    depth: int,
    nn_action: Action | None,
    cfg: SearchConfig,
    grid: ActionGrid,
    use_handcrafted: bool = True,
    use_learned: bool = True,
) -> list[float]:
    """Normalized prior over the candidate actions.

    The handcrafted term is a Gaussian in grid-index offsets centered on the
    zero action; within the first prior_horizon seconds of tree time a second
    Gaussian centered on the ego-prior action is added. With no active term
    the prior is uniform.
    """
    if not candidates:
        raise ConfigError("cannot compute a prior over zero candidates")
    two_sigma_sq = 2.0 * cfg.prior_sigma_sq
    learned_active = (
        use_learned
        and nn_action is not None
        and depth * cfg.node_duration <= cfg.prior_horizon + 1e-9
    )
    if learned_active:
        ni, nj = grid.snap(nn_action)
    weights = []
    for c in candidates:
        i, j = grid.snap(c)
        w = 0.0
        if use_handcrafted:
            di = i - CENTER_INDEX
            dj = j - CENTER_INDEX
            w += math.exp(-(di * di + dj * dj) / two_sigma_sq)
        if learned_active:
            di = i - ni
            dj = j - nj
            w += math.exp(-(di * di + dj * dj) / two_sigma_sq)
        weights.append(w)
    total = sum(weights)
    if total <= 0.0:
        return [1.0 / len(candidates)] * len(candidates)
    return [w / total for w in weights]


def select_child(node: TreeNode, cfg: SearchConfig) -> int:
    """Index of the PUCT-optimal child:

        argmax Q(S,A) + c_puct * P(S,A) * sqrt(sum_B N(S,B)) / (1 + N(S,A))

    Ties go to the higher prior, then to the lower child index.
    """
    if node.children is None or node.terminal:
        raise InternalStateError("select_child needs an expanded, non-terminal node")
    sqrt_total = math.sqrt(sum(e.n for e in node.children))
    c = cfg.c_puct
    best_idx = -1
    best_score = -math.inf
    best_p = -math.inf
    for idx, e in enumerate(node.children):
        score = e.q + c * e.prior * sqrt_total / (1 + e.n)
        if score > best_score or (score == best_score and e.prior > best_p):
            best_idx = idx
            best_score = score
            best_p = e.prior
    return best_idx


def backup(path: list[Edge], cfg: SearchConfig) -> None:
    """Deliver the per-edge returns of one root-to-leaf pass.

    Each edge k receives G_k, the gamma-discounted sum of the node rewards
    from its own node to the leaf (inclusive convention); Q becomes the
    running mean of delivered returns and N the delivery count. With
    inclusive_backup off, G_k sums strictly below edge k, which zeroes the
    deepest edge's return.
    """
    running = 0.0
    for edge in reversed(path):
        r = edge.child.reward.total
        if cfg.inclusive_backup:
            running = r + cfg.gamma * running
            g = running
        else:
            g = cfg.gamma * running
            running = r + cfg.gamma * running
        edge.q = (edge.n * edge.q + g) / (edge.n + 1)
        edge.n += 1


class Search:
    """One tree search instance over a fixed snapshot and prediction set.

    Owns its tree exclusively; the world model and predictions are shared
    immutably. There is no intra-tree parallelism.
    """

    def __init__(
        self,
        snapshot: WorldSnapshot,
        predictions: PredictionSet,
        prev_executed: Action | None,
        cfg: SearchConfig,
        ablation: AblationSpec = AblationSpec(),
        reward_cfg: RewardConfig = RewardConfig(),
        params: VehicleParams = VehicleParams(),
        grid: ActionGrid | None = None,
    ):
        self.cfg = cfg
        self.ablation = ablation
        self.params = params
        self.grid = grid if grid is not None else ActionGrid()
        self.prev_executed = prev_executed
        self.evaluator = NodeEvaluator(snapshot, predictions, reward_cfg, params, cfg.sub_dt)
        if ablation.use_learned_prior and len(predictions.ego_prior) >= 3:
            self.prior_actions = ego_prior_actions(
                predictions, params, self.grid, cfg.node_duration, cfg.sub_dt
            )
        else:
            self.prior_actions = []
        self.root = TreeNode(
            state=snapshot.ego,
            depth=0,
            incoming_action=None,
            reward=None,
            projection=self.evaluator.project(snapshot.ego),
        )
        self.n_nodes = 1
        self.elapsed = 0.0

    def expand(self, leaf: TreeNode) -> None:
        """Create all windowed children of a leaf, compute their states by
        rollout, evaluate their rewards, and initialize edge statistics."""
        if leaf.expanded or leaf.terminal:
            raise InternalStateError("expand needs an unexpanded, non-terminal leaf")
        if leaf.depth >= self.cfg.max_depth:
            leaf.terminal = True
            return
        cfg = self.cfg
        if leaf.depth == 0:
            prev = self.prev_executed
            constrained = self.ablation.use_tree_constraint
        else:
            prev = leaf.incoming_action
            constrained = self.ablation.use_node_constraint
        candidates = constrained_actions(prev, self.grid, cfg, constrained)
        nn_action = (
            self.prior_actions[leaf.depth] if leaf.depth < len(self.prior_actions) else None
        )
        priors = compute_prior(
            candidates,
            leaf.depth,
            nn_action,
            cfg,
            self.grid,
            use_handcrafted=self.ablation.use_handcrafted_prior,
            use_learned=self.ablation.use_learned_prior,
        )
        node_time = (leaf.depth + 1) * cfg.node_duration
        children = []
        for action, p in zip(candidates, priors):
            substeps = rollout(leaf.state, action, cfg.n_substeps, cfg.sub_dt, self.params)
            breakdown, proj = self.evaluator.evaluate(leaf.projection, substeps, node_time)
            child = TreeNode(
                state=substeps[-1],
                depth=leaf.depth + 1,
                incoming_action=action,
                reward=breakdown,
                projection=proj,
            )
            if leaf.depth == 0:
                child.path_xy = [(s.x, s.y) for s in substeps]
            kind = breakdown.collision_kind
            if (kind is not None and kind.severe) or child.depth >= cfg.max_depth:
                child.terminal = True
            children.append(Edge(action, p, child))
        leaf.children = children
        self.n_nodes += len(children)

    def simulate_once(self) -> list[Edge]:
        """One pass: select to a leaf, expand if permitted, back up."""
        node = self.root
        path: list[Edge] = []
        while True:
            if node.terminal:
                break
            if node.children is None:
                if node.depth >= self.cfg.max_depth:
                    node.terminal = True
                    break
                self.expand(node)
                if node.children:
                    edge = node.children[select_child(node, self.cfg)]
                    path.append(edge)
                break
            edge = node.children[select_child(node, self.cfg)]
            path.append(edge)
            node = edge.child
        backup(path, self.cfg)
        return path

    def run(self) -> "Search":
        t0 = time.perf_counter()
        for _ in range(self.cfg.n_simulations):
            self.simulate_once()
        self.elapsed = time.perf_counter() - t0
        return self


def run_search(
    snapshot: WorldSnapshot,
    predictions: PredictionSet,
    prev_executed: Action | None,
    cfg: SearchConfig,
    ablation: AblationSpec = AblationSpec(),
    reward_cfg: RewardConfig = RewardConfig(),
    params: VehicleParams = VehicleParams(),
    grid: ActionGrid | None = None,
) -> Search:
    """Run exactly cfg.n_simulations select/expand/evaluate/backup passes."""
    return Search(
        snapshot, predictions, prev_executed, cfg, ablation, reward_cfg, params, grid
    ).run()


def extract_plan(root: TreeNode) -> list[Action]:
    """Greedy argmax-Q descent over visited children.

    Ties go to the higher visit count, then the lower index; the descent
    stops at an unvisited, terminal, or childless node.
    """
    if root.children is None:
        raise InternalStateError("extract_plan needs an expanded root")
    plan: list[Action] = []
    node = root
    while node.children:
        best = None
        for idx, e in enumerate(node.children):
            if e.n < 1:
                continue
            key = (e.q, e.n, -idx)
            if best is None or key > best[0]:
                best = (key, e)
        if best is None:
            break
        edge = best[1]
        plan.append(edge.action)
        node = edge.child
        if node.terminal or node.children is None:
            break
    return plan


def root_child_table(search: Search) -> list[dict]:
    """Per-root-child summary (action, Q, N, P, rollout polyline) for the
    episode log's search sidecar."""
    if search.root.children is None:
        return []
    out = []
    for e in search.root.children:
        i, j = search.grid.snap(e.action)
        out.append(
            {
                "action": [i, j],
                "a": e.action.a,
                "delta": e.action.delta,
                "q": e.q,
                "n": e.n,
                "p": e.prior,
                "path": [[x, y] for x, y in (e.child.path_xy or [])],
            }
        )
    return out
