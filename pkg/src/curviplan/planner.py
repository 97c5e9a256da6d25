"""Lateral BIT*: batch-informed sampling planner in (p, q) space.

Differences from a vanilla batch planner, all in service of path following:
  - the edge metric charges (1 + alpha q^2) per unit length, so solutions
    hug the reference axis instead of cutting straight chords;
  - the informed region after a first solution is the "eye-ball" subset of
    the classic ellipse; sampling uses its conservative bounding box;
  - the q = 0 axis is preseeded so the obstacle-free optimum appears in the
    first batch without waiting for lucky samples;
  - sampling concentrates in a sliding window around the robot, and the tree
    is rooted at the far end of the path so structure behind the window
    survives replanning;
  - singularity regions are never sampled or crossed; wormhole edges jump
    them at a rotation-proportional cost.

Collision checks run in Euclidean space through the frame's unique map.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .costmap import collision_check_edge

_EPS = 1e-12


class NoSolutionWithinCorridor(RuntimeError):
    """Sampling exhausted with no path inside the lateral corridor; the
    operator must intervene (or the caller must widen the corridor)."""


# ----------------------------------------------------------------------
# the laterally weighted metric and its informed-region geometry
# ----------------------------------------------------------------------

def edge_cost(a, b, alpha: float) -> float:
    """Closed-form cost of the straight (p, q) edge a-b.

    Equals the line integral of (1 + alpha q^2) ds; the factored quadratic
    mean (q1^2 + q1 q2 + q2^2)/3 is exact for every orientation and reduces
    to the (1 + alpha q^2) |dp| limit on horizontal edges.
    """
    p1, q1 = a
    p2, q2 = b
    length = np.hypot(p2 - p1, q2 - q1)
    return (1.0 + alpha * (q1 * q1 + q1 * q2 + q2 * q2) / 3.0) * length


def admissible_heuristic(x, start_p: float, goal_p: float, alpha: float) -> float:
    """Estimated total cost of routing the solution through x = (p, q):
    the two straight legs to the on-axis endpoints, each charged the lateral
    factor (1 + alpha q^2 / 3)."""
    p, q = x
    lo, hi = (start_p, goal_p) if start_p <= goal_p else (goal_p, start_p)
    legs = np.hypot(p - lo, q) + np.hypot(p - hi, q)
    return (1.0 + alpha * q * q / 3.0) * legs


def euclidean_two_leg(x, start, goal) -> float:
    """Plain Euclidean lower bound through x; admissible for any alpha >= 0
    because the metric never charges less than length."""
    p, q = x
    return (np.hypot(p - start[0], q - start[1])
            + np.hypot(p - goal[0], q - goal[1]))


def informed_box_height(c_best: float, c_min: float, alpha: float,
                        tol: float = 1e-9) -> float:
    """Half-height q_eye of the conservative rectangle bounding the eye-ball
    informed region: the root of
        (c_best/2)^2 = (1 + alpha q^2 / 3)^2 ((c_min/2)^2 + q^2)
    found by bisection.  With alpha = 0 this is the informed-ellipse
    semi-minor axis; returns 0 when no improvement is possible."""
    if c_best <= c_min:
        return 0.0
    target = (c_best / 2.0) ** 2
    half = (c_min / 2.0) ** 2

    def g(q):
        return (1.0 + alpha * q * q / 3.0) ** 2 * (half + q * q) - target

    lo, hi = 0.0, c_best / 2.0
    if g(hi) < 0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            break
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ----------------------------------------------------------------------
# configuration and solution containers
# ----------------------------------------------------------------------

@dataclass
class PlannerConfig:
    alpha: float = 0.5                 # lateral weight (1/m^2); 0 = Euclidean
    samples_per_batch: int = 150
    rgg_constant: float = 1.1
    q_max: float = 2.5                 # m
    preseed_spacing: float = 0.5       # m along the q = 0 axis
    window_length: float = 15.0        # m of sampled path ahead of the robot
    window_behind: float = 5.0         # m of sampled path behind the robot
    edge_step: float = 0.10            # m collision discretization
    max_batches: int = 20
    convergence_tol: float = 0.03      # relative cost improvement per batch
    seed: int = 0
    preseed: bool = True


@dataclass
class PathSolution:
    points: np.ndarray                 # (N, 2) (p, q) polyline, robot -> path end
    cost: float
    euclid: np.ndarray                 # (M, 3) (x, y, psi) via the unique map
    wormhole_edges: list               # indices i where points[i]->points[i+1] teleports
    batches: int
    batch_first_solution: int          # 1-based batch index of the first solution
    time_first_solution: float         # s, wall time inside plan()
    time_converged: float
    history: list                      # (wall_time, cost, points) per improvement

    def q_at(self, p):
        """Lateral value of the solution at arc length p (clamped)."""
        ps = np.maximum.accumulate(self.points[:, 0])
        return np.interp(p, ps, self.points[:, 1])

    def max_abs_q(self) -> float:
        return float(np.max(np.abs(self.points[:, 1])))


@dataclass
class _Vertex:
    vid: int
    p: float
    q: float
    parent: int = -1
    g: float = np.inf
    children: set = field(default_factory=set)
    via_wormhole: bool = False         # edge from parent teleports


# ----------------------------------------------------------------------
# the planner
# ----------------------------------------------------------------------

class LateralBitStar:
    """One planning problem over a fixed frame; replans incrementally as the
    costmap or the robot state moves.  Single-threaded; emitted solutions
    are immutable snapshots."""

    def __init__(self, frame, config: PlannerConfig = None):
        self.frame = frame
        self.cfg = config or PlannerConfig()
        self.rng = np.random.default_rng(self.cfg.seed)
        self._reset_problem()

    # -- public API ----------------------------------------------------

    def plan(self, costmap, robot) -> PathSolution:
        """Fresh plan from the path end (tree root) back to the robot."""
        self._reset_problem()
        self.map = costmap
        self.map_version = costmap.version
        self._set_target(robot)
        return self._solve()

    def update_and_replan(self, costmap, robot=None) -> PathSolution:
        """Re-validate the tree against a new costmap (window only), retarget
        to the moved robot if given, and continue planning from the surviving
        structure."""
        if self.root_id is None:
            return self.plan(costmap, robot)
        map_changed = costmap.version != getattr(self.map, "version", None) \
            or costmap is not self.map
        retarget = robot is not None and not self._same_target(robot)
        if not map_changed and not retarget and self.solution is not None:
            return self.solution
        self.map = costmap
        self.map_version = costmap.version
        if map_changed:
            self._ccache.clear()
            self._revalidate_window_edges()
        if retarget:
            self._set_target(robot, keep_old_vertex=True)
        return self._solve()

    # -- problem setup ---------------------------------------------------

    def _reset_problem(self):
        self.verts: dict[int, _Vertex] = {}
        self.samples: dict[int, tuple] = {}
        self.pos: dict[int, tuple] = {}
        self.protected: set = set()      # preseeds + wormhole ends + target
        self.wormhole_partner: dict[int, tuple] = {}
        self._next_id = 0
        self.root_id = None
        self.target_id = None
        self.c_best = np.inf
        self.solution: PathSolution = None
        self.batches_run = 0
        self._ccache: dict = {}
        self._preseeded = False
        self._wh_by_pair: dict = {}
        self.history: list = []
        self.map = None
        self.map_version = None

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def _add_sample(self, p, q, protected=False) -> int:
        sid = self._new_id()
        self.samples[sid] = (p, q)
        self.pos[sid] = (p, q)
        if protected:
            self.protected.add(sid)
        return sid

    def _set_target(self, robot, keep_old_vertex=False):
        frame = self.frame
        robot = (float(robot[0]), float(robot[1]))
        if self.root_id is None:
            rid = self._new_id()
            self.verts[rid] = _Vertex(rid, frame.p_len, 0.0, parent=-1, g=0.0)
            self.pos[rid] = (frame.p_len, 0.0)
            self.root_id = rid
            self.protected.add(rid)
        if self.target_id is not None and keep_old_vertex:
            self.protected.discard(self.target_id)
        self.target_id = self._add_sample(robot[0], robot[1], protected=True)
        self.target = robot
        self.c_best = np.inf
        self.solution = None

    def _same_target(self, robot) -> bool:
        if self.target_id is None:
            return False
        t = self.pos[self.target_id]
        return abs(t[0] - robot[0]) < 1e-9 and abs(t[1] - robot[1]) < 1e-9

    # -- heuristics ------------------------------------------------------

    def _h_order(self, p, q) -> float:
        """Queue-ordering estimate: straight-edge cost to the target under
        the lateral metric (the eye-ball heuristic)."""
        tp, tq = self.target
        length = np.hypot(p - tp, q - tq)
        return (1.0 + self.cfg.alpha * (q * q + q * tq + tq * tq) / 3.0) * length

    def _h_adm(self, p, q) -> float:
        tp, tq = self.target
        return np.hypot(p - tp, q - tq)

    def _f_adm(self, p, q) -> float:
        """Strictly admissible total bound used for pruning."""
        root = self.pos[self.root_id]
        return np.hypot(p - root[0], q) + self._h_adm(p, q)

    # -- sampling --------------------------------------------------------

    def _window(self):
        lo = max(0.0, self.target[0] - self.cfg.window_behind)
        hi = min(self.frame.p_len, self.target[0] + self.cfg.window_length)
        return lo, hi

    def sample_batch(self):
        """Add one batch of samples (plus the one-time preseeds)."""
        cfg = self.cfg
        frame = self.frame
        added = []
        if cfg.preseed and not self._preseeded:
            self._preseeded = True
            for p in np.arange(cfg.preseed_spacing, frame.p_len,
                               cfg.preseed_spacing):
                added.append(self._add_sample(float(p), 0.0, protected=True))
            for wh in frame.wormholes:
                la = self._add_sample(*wh.left, protected=True)
                rb = self._add_sample(*wh.right, protected=True)
                self.wormhole_partner[la] = (rb, wh.cost)
                self.wormhole_partner[rb] = (la, wh.cost)
                self._wh_by_pair[(la, rb)] = wh
                self._wh_by_pair[(rb, la)] = wh
        lo, hi = self._window()
        q_cap = min(cfg.q_max, frame.q_bound())
        if np.isfinite(self.c_best):
            root = self.pos[self.root_id]
            c_min = np.hypot(root[0] - self.target[0], root[1] - self.target[1])
            q_cap = min(q_cap, informed_box_height(self.c_best, c_min, cfg.alpha))
            lo = max(lo, min(self.target[0], root[0]))
            hi = min(hi, max(self.target[0], root[0]))
        if hi <= lo or q_cap <= 0:
            return added
        ps = self.rng.uniform(lo, hi, cfg.samples_per_batch)
        qs = self.rng.uniform(-q_cap, q_cap, cfg.samples_per_batch)
        keep = np.abs(qs) <= frame.q_max_at(ps)
        if np.isfinite(self.c_best):
            root_p = self.pos[self.root_id][0]
            f_hat = np.array([admissible_heuristic((p, q), self.target[0], root_p,
                                                   cfg.alpha)
                              for p, q in zip(ps, qs)])
            keep &= f_hat <= self.c_best
        keep &= ~frame.in_singularity(ps, qs)
        for p, q in zip(ps[keep], qs[keep]):
            added.append(self._add_sample(float(p), float(q)))
        return added

    def _radius(self) -> float:
        n = len(self.verts) + len(self.samples)
        lo, hi = self._window()
        q_cap = min(self.cfg.q_max, self.frame.q_bound())
        if np.isfinite(self.c_best):
            root = self.pos[self.root_id]
            c_min = np.hypot(root[0] - self.target[0], root[1] - self.target[1])
            q_cap = min(q_cap, informed_box_height(self.c_best, c_min, self.cfg.alpha))
        measure = max(hi - lo, 1.0) * max(2.0 * q_cap, 0.5)
        r = self.cfg.rgg_constant * 2.0 * np.sqrt(1.5) * \
            np.sqrt(measure / np.pi * np.log(max(n, 2)) / max(n, 2))
        return float(np.clip(r, max(0.75, 1.3 * self.cfg.preseed_spacing), 10.0))

    # -- collision layer ---------------------------------------------------

    def _edge_free(self, aid: int, bid: int) -> bool:
        key = (aid, bid) if aid < bid else (bid, aid)
        hit = self._ccache.get(key)
        if hit is not None:
            return hit
        wh = self._wh_by_pair.get((aid, bid))
        if wh is not None:
            pt = self.frame.curv_to_euclid(*wh.left)
            free = not bool(self.map.is_occupied(pt[0], pt[1]))
        else:
            a, b = self.pos[aid], self.pos[bid]
            free = not self.frame.segment_hits_singularity(
                np.array(a), np.array(b),
                endpoint_clear=self._region_clear(aid, bid))
            if free:
                free = collision_check_edge(self.map, self.frame, a, b,
                                            step=self.cfg.edge_step)
        self._ccache[key] = free
        return free

    def _region_clear(self, aid, bid) -> float:
        # edges touching a wormhole endpoint may legitimately end on a region
        # boundary; shave the conservative-cover test near those endpoints
        if aid in self.wormhole_partner or bid in self.wormhole_partner:
            return 0.2
        return 0.0

    # -- the batch search ---------------------------------------------------

    def _solve(self) -> PathSolution:
        cfg = self.cfg
        t0 = time.perf_counter()
        had_solution = np.isfinite(self.c_best)
        first_time = 0.0 if had_solution else None
        first_batch = 0 if had_solution else None
        start_batches = self.batches_run
        while self.batches_run - start_batches < cfg.max_batches:
            prev_cost = self.c_best
            self._prune()
            self.sample_batch()
            self._process_batch(t0)
            self.batches_run += 1
            if np.isfinite(self.c_best) and first_time is None:
                first_time = self.history[-1][0] if self.history else time.perf_counter() - t0
                first_batch = self.batches_run - start_batches
            if np.isfinite(prev_cost) and np.isfinite(self.c_best):
                rel = (prev_cost - self.c_best) / max(self.c_best, _EPS)
                if rel < cfg.convergence_tol:
                    break
        if not np.isfinite(self.c_best):
            raise NoSolutionWithinCorridor(
                f"no solution after {cfg.max_batches} batches")
        self.solution = self._extract_solution(
            t0, first_time if first_time is not None else 0.0,
            first_batch if first_batch is not None else 0)
        return self.solution

    def _process_batch(self, t0):
        cfg = self.cfg
        r = self._radius()
        seq = iter(range(10 ** 9))
        vq: list = []
        eq: list = []
        expanded: set = set()
        v_old = set(self.verts)

        def vkey(v: _Vertex):
            return (v.g + self._h_order(v.p, v.q), self._h_order(v.p, v.q))

        for v in self.verts.values():
            heapq.heappush(vq, (*vkey(v), next(seq), v.vid))

        sample_ids = np.array(sorted(self.samples), dtype=int)
        sample_xy = np.array([self.samples[i] for i in sample_ids]) \
            if len(sample_ids) else np.zeros((0, 2))

        def note_improvement():
            tg = self.verts.get(self.target_id)
            if tg is not None and tg.g < self.c_best - _EPS:
                self.c_best = tg.g
                self.history.append((time.perf_counter() - t0, self.c_best,
                                     self._walk_points()[0]))

        def expand(vid):
            if vid in expanded:
                return
            expanded.add(vid)
            v = self.verts[vid]
            if len(sample_ids):
                d = np.hypot(sample_xy[:, 0] - v.p, sample_xy[:, 1] - v.q)
                near = sample_ids[d <= r]
            else:
                near = ()
            for xid in near:
                if xid not in self.samples:
                    continue
                x = self.samples[xid]
                chat = edge_cost((v.p, v.q), x, cfg.alpha)
                if v.g + chat + self._h_adm(*x) < self.c_best:
                    key = v.g + chat + self._h_order(*x)
                    heapq.heappush(eq, (key, self._h_order(*x), next(seq),
                                        vid, xid, chat))
            part = self.wormhole_partner.get(vid)
            if part is not None:
                pid, wcost = part
                if pid in self.samples or pid in self.verts:
                    x = self.pos[pid]
                    if v.g + wcost + self._h_adm(*x) < self.c_best:
                        key = v.g + wcost + self._h_order(*x)
                        heapq.heappush(eq, (key, self._h_order(*x), next(seq),
                                            vid, pid, wcost))
            if vid not in v_old:
                # rewiring candidates among current tree vertices
                ids = np.array([w for w in self.verts if w != vid], dtype=int)
                if len(ids):
                    wxy = np.array([self.pos[w] for w in ids])
                    d = np.hypot(wxy[:, 0] - v.p, wxy[:, 1] - v.q)
                    for wid in ids[d <= r]:
                        w = self.verts[wid]
                        chat = edge_cost((v.p, v.q), (w.p, w.q), cfg.alpha)
                        if v.g + chat + self._h_adm(w.p, w.q) < self.c_best and \
                           v.g + chat < w.g - _EPS:
                            key = v.g + chat + self._h_order(w.p, w.q)
                            heapq.heappush(eq, (key, self._h_order(w.p, w.q),
                                                next(seq), vid, wid, chat))

        while vq or eq:
            while vq and (not eq or vq[0][0] <= eq[0][0] + _EPS):
                _, _, _, vid = heapq.heappop(vq)
                if vid in self.verts:
                    expand(vid)
            if not eq:
                break
            key, _, _, vid, xid, chat = heapq.heappop(eq)
            if key >= self.c_best - _EPS:
                break
            if vid not in self.verts:
                continue
            v = self.verts[vid]
            g_new = v.g + chat
            if g_new + self._h_adm(*self.pos[xid]) >= self.c_best - _EPS:
                continue
            is_wh = (vid, xid) in self._wh_by_pair
            if xid in self.verts:
                x = self.verts[xid]
                if g_new >= x.g - _EPS:
                    continue
                if not self._edge_free(vid, xid):
                    continue
                old_parent = self.verts.get(x.parent)
                if old_parent is not None:
                    old_parent.children.discard(xid)
                x.parent = vid
                x.g = g_new
                x.via_wormhole = is_wh
                v.children.add(xid)
                self._propagate(xid)
            elif xid in self.samples:
                if not self._edge_free(vid, xid):
                    continue
                del self.samples[xid]
                x = _Vertex(xid, *self.pos[xid], parent=vid, g=g_new,
                            via_wormhole=is_wh)
                self.verts[xid] = x
                v.children.add(xid)
                heapq.heappush(vq, (*vkey(x), next(seq), xid))
            else:
                continue
            note_improvement()

    def _propagate(self, vid):
        stack = [vid]
        while stack:
            cur = self.verts[stack.pop()]
            for cid in list(cur.children):
                child = self.verts[cid]
                chat = self._wh_by_pair[(cur.vid, cid)].cost \
                    if (cur.vid, cid) in self._wh_by_pair and child.via_wormhole \
                    else edge_cost((cur.p, cur.q), (child.p, child.q), self.cfg.alpha)
                child.g = cur.g + chat
                stack.append(cid)

    def _prune(self):
        """Drop what cannot improve the current solution: tree vertices by
        the strictly admissible Euclidean bound, samples by the informed
        (laterally weighted) estimate that also gates their creation."""
        if not np.isfinite(self.c_best):
            return
        doomed = [v.vid for v in self.verts.values()
                  if v.vid not in (self.root_id, self.target_id)
                  and v.vid not in self.protected
                  and v.g + self._h_adm(v.p, v.q) > self.c_best + _EPS]
        for vid in doomed:
            self._demote_subtree(vid, drop=True)
        root_p = self.pos[self.root_id][0]
        for sid in [s for s in self.samples
                    if s not in self.protected
                    and admissible_heuristic(self.samples[s], self.target[0],
                                             root_p, self.cfg.alpha)
                    > self.c_best + _EPS]:
            del self.samples[sid]
            del self.pos[sid]

    def _demote_subtree(self, vid, drop=False):
        """Detach a vertex (and descendants) from the tree; descendants fall
        back to samples so later batches can reconnect them."""
        v = self.verts.get(vid)
        if v is None:
            return
        parent = self.verts.get(v.parent)
        if parent is not None:
            parent.children.discard(vid)
        stack = [vid]
        order = []
        while stack:
            cur = stack.pop()
            order.append(cur)
            stack.extend(self.verts[cur].children)
        for cur in order:
            node = self.verts.pop(cur)
            if cur == self.target_id:
                self.c_best = np.inf
                self.solution = None
            if drop and cur == vid and cur not in self.protected:
                del self.pos[cur]
                continue
            self.samples[cur] = (node.p, node.q)

    # -- replanning support ------------------------------------------------

    def _revalidate_window_edges(self):
        lo, hi = self._window()
        bad = []
        for v in self.verts.values():
            if v.parent < 0:
                continue
            pp = self.pos[v.parent][0]
            if max(v.p, pp) < lo or min(v.p, pp) > hi:
                continue    # outside the window: trusted, not rechecked
            if not self._edge_free(v.parent, v.vid):
                bad.append(v.vid)
        for vid in bad:
            if vid in self.verts:
                self._demote_subtree(vid)
        if self.target_id not in self.verts:
            self.c_best = np.inf
            self.solution = None
        else:
            self.c_best = self.verts[self.target_id].g

    # -- solution extraction -------------------------------------------------

    def _walk_points(self):
        pts = []
        whs = []
        cur = self.verts.get(self.target_id)
        while cur is not None:
            pts.append((cur.p, cur.q))
            if cur.via_wormhole:
                whs.append(len(pts) - 1)
            cur = self.verts.get(cur.parent)
        return np.array(pts), whs

    def _extract_solution(self, t0, first_time, first_batch) -> PathSolution:
        pts, wh_idx = self._walk_points()
        euclid = self._to_euclid(pts, wh_idx)
        return PathSolution(
            points=pts,
            cost=float(self.c_best),
            euclid=euclid,
            wormhole_edges=wh_idx,
            batches=self.batches_run,
            batch_first_solution=first_batch,
            time_first_solution=first_time,
            time_converged=time.perf_counter() - t0,
            history=list(self.history),
        )

    def _to_euclid(self, pts, wh_idx) -> np.ndarray:
        frame = self.frame
        step = self.cfg.edge_step
        rows = []
        for i in range(len(pts) - 1):
            a, b = pts[i], pts[i + 1]
            if i in wh_idx:
                rows.append(frame.curv_to_euclid(a[0], a[1]))
                continue
            n = max(1, int(np.ceil(np.hypot(*(b - a)) / step)))
            t = np.linspace(0.0, 1.0, n + 1)[:-1]
            ps = a[0] + t * (b[0] - a[0])
            qs = a[1] + t * (b[1] - a[1])
            rows.extend(np.atleast_2d(frame.curv_to_euclid(ps, qs)))
        rows.append(frame.curv_to_euclid(pts[-1][0], pts[-1][1]))
        return np.array(rows)


def plan(frame, costmap, robot, config: PlannerConfig = None) -> PathSolution:
    """One-shot convenience wrapper around LateralBitStar."""
    return LateralBitStar(frame, config).plan(costmap, robot)
