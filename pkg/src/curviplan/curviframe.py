"""Curvilinear configuration space built from a reference path.

The (p, q) space: p is arc length accumulated as
dp = sqrt(dx^2 + dy^2 + a * dpsi^2) -- the yaw term keeps on-the-spot
rotations from collapsing, which is what makes the map to Euclidean space
unique.  q is the signed lateral offset, positive to the LEFT of the path
tangent.

A built frame is immutable: it precomputes the arc-length table, a dense
position index for nearest-point queries, the signed radius-of-curvature
profile, the singularity regions of sharp inside turns, and the wormhole
edges that let a planner jump across them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

_DENSE_STEP = 0.05        # resampling step for the nearest-point index (m)
_SING_GRID = 0.10         # singularity scan grid (m)
_SING_REL_TOL = 0.01      # relative slack on the q = q_min test
_SING_ABS_TOL = 1e-3      # absolute slack on the q = q_min test (m)
_WORMHOLE_SPACING = 0.25  # default lateral spacing between wormholes (m)
_WORMHOLE_WEIGHT = 1.0    # default cost weight (m per rad of rotation)
_HINT_WINDOW = 10.0       # default +/- search window around hint_p (m)


class DegeneratePath(ValueError):
    """Two consecutive reference poses identical in position and yaw."""


class OutOfDomain(ValueError):
    """Arc length outside [0, p_len]."""


@dataclass(frozen=True)
class ReferencePath:
    """Discrete reference ("teach") path of (x, y, yaw) poses."""

    poses: np.ndarray          # (N, 3), yaw unwrapped along the sequence
    closed: bool = False

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != 3 or poses.shape[0] < 2:
            raise ValueError("reference path needs at least 2 (x, y, yaw) poses")
        object.__setattr__(self, "poses", poses)

    @staticmethod
    def from_xy_yaw(poses, closed=False) -> "ReferencePath":
        poses = np.array(poses, dtype=float)
        poses[:, 2] = np.unwrap(poses[:, 2])
        return ReferencePath(poses, closed)


@dataclass(frozen=True)
class WormholeEdge:
    """Planner edge joining the two boundary points of a singularity region
    at equal lateral offset; traversal is a turn on the spot in Euclidean
    space, costed proportionally to the bridged rotation."""

    left: tuple        # (p, q), left.p < right.p
    right: tuple       # (p, q), same q
    rotation: float    # |delta yaw| bridged (rad)
    cost: float        # weight * rotation (m-equivalent), > 0


@dataclass
class CurvilinearFrame:
    path: ReferencePath
    a: float                       # yaw weight (m^2/rad^2)
    p_table: np.ndarray            # (N,) cumulative arc length, p_table[0]=0
    q_max: np.ndarray              # (N-1,) lateral upper bound per segment (m)
    q_min: np.ndarray              # (N-1,) lateral lower bound per segment (m)
    roc: np.ndarray = field(default=None)            # (N-1,) signed, clamped
    singularity_regions: list = field(default_factory=list)  # (p0,p1,q0,q1)
    wormholes: list = field(default_factory=list)

    # dense nearest-point index, built lazily
    _dense: dict = field(default=None, repr=False)

    @property
    def p_len(self) -> float:
        return float(self.p_table[-1])

    def q_max_at(self, p) -> np.ndarray:
        idx = np.clip(np.searchsorted(self.p_table, p, side="right") - 1,
                      0, len(self.q_max) - 1)
        return self.q_max[idx]

    def q_bound(self) -> float:
        """Largest lateral bound anywhere on the path."""
        return float(np.max(self.q_max))

    # ------------------------------------------------------------------
    # curvilinear -> Euclidean (the unique map)
    # ------------------------------------------------------------------

    def interpolate_pose(self, p):
        """Reference pose at arc length p: position lerped, yaw lerped on the
        unwrapped sequence (equals shortest-arc between neighbours)."""
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any(p_arr < -1e-9) or np.any(p_arr > self.p_len + 1e-9):
            raise OutOfDomain(f"p outside [0, {self.p_len}]")
        p_arr = np.clip(p_arr, 0.0, self.p_len)
        idx = np.clip(np.searchsorted(self.p_table, p_arr, side="right") - 1,
                      0, len(self.p_table) - 2)
        p0 = self.p_table[idx]
        dp = self.p_table[idx + 1] - p0
        t = (p_arr - p0) / dp
        out = self.path.poses[idx] * (1.0 - t[:, None]) + self.path.poses[idx + 1] * t[:, None]
        return out if np.ndim(p) else out[0]

    def curv_to_euclid(self, p, q):
        """Map (p, q) -> (x, y, psi_ref); q offsets along the left normal."""
        ref = np.atleast_2d(self.interpolate_pose(p))
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        psi = ref[:, 2]
        out = np.column_stack([
            ref[:, 0] - np.sin(psi) * q_arr,
            ref[:, 1] + np.cos(psi) * q_arr,
            psi,
        ])
        return out if np.ndim(p) else out[0]

    # ------------------------------------------------------------------
    # Euclidean -> curvilinear (nearest-point query; not unique in general)
    # ------------------------------------------------------------------

    def _dense_index(self) -> dict:
        if self._dense is None:
            self._dense = _build_dense_index(self)
        return self._dense

    def euclid_to_curv_nearest(self, pt, hint_p=None, window=_HINT_WINDOW):
        """Nearest point on the densely interpolated path.

        Returns (p, q, distance) with q signed positive-left.  With hint_p the
        search is restricted to p within +/- window, which disambiguates
        self-intersecting paths.  Ties break toward smaller p.
        """
        pts = np.atleast_2d(np.asarray(pt, dtype=float))
        dense = self._dense_index()
        lo = hi = None
        if hint_p is not None:
            lo, hi = hint_p - window, hint_p + window
        p, q, d = _nearest_on_polyline(dense, pts, lo, hi)
        if np.ndim(pt) == 1:
            return float(p[0]), float(q[0]), float(d[0])
        return p, q, d

    def nearest_distance(self, pts) -> np.ndarray:
        """Unsigned distance from Euclidean point(s) to the path."""
        _, _, d = _nearest_on_polyline(self._dense_index(), np.atleast_2d(pts), None, None)
        return d

    # ------------------------------------------------------------------
    # singularity bookkeeping
    # ------------------------------------------------------------------

    def in_singularity(self, p, q) -> np.ndarray:
        """Membership test against the conservative rectangle cover."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.zeros(p.shape, dtype=bool)
        for (p0, p1, q0, q1) in self.singularity_regions:
            out |= (p >= p0) & (p <= p1) & (q >= q0) & (q <= q1)
        return out

    def segment_hits_singularity(self, a, b, endpoint_clear=0.0) -> bool:
        """True if the (p, q) segment a-b enters any singularity rectangle.

        endpoint_clear shaves that much off each end before testing, used for
        edges that legitimately terminate on a region boundary (wormholes).
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if endpoint_clear > 0.0:
            length = np.linalg.norm(b - a)
            if length <= 2 * endpoint_clear:
                return False
            u = (b - a) / length
            a = a + u * endpoint_clear
            b = b - u * endpoint_clear
        for rect in self.singularity_regions:
            if _segment_intersects_rect(a, b, rect):
                return True
        return False


# ----------------------------------------------------------------------
# frame construction
# ----------------------------------------------------------------------

def build_frame(path: ReferencePath, a: float = 1.0, q_bounds=2.5,
                wormhole_spacing: float = _WORMHOLE_SPACING,
                wormhole_weight: float = _WORMHOLE_WEIGHT,
                grid: float = _SING_GRID) -> CurvilinearFrame:
    """Build the full curvilinear frame: arc-length table, ROC profile,
    singularity regions and wormholes."""
    poses = path.poses
    d = np.diff(poses, axis=0)
    dp = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2 + a * d[:, 2] ** 2)
    if np.any(dp < 1e-12):
        raise DegeneratePath("consecutive poses identical in position and yaw")
    p_table = np.concatenate([[0.0], np.cumsum(dp)])

    nseg = len(poses) - 1
    q_hi = np.broadcast_to(np.asarray(q_bounds, dtype=float), (nseg,)).copy()
    frame = CurvilinearFrame(path=path, a=a, p_table=p_table,
                             q_max=q_hi, q_min=-q_hi)
    frame.roc = roc_profile(frame)
    frame.singularity_regions = singularity_regions(frame, grid=grid)
    frame.wormholes = generate_wormholes(frame, spacing=wormhole_spacing,
                                         weight=wormhole_weight)
    return frame


def _build_dense_index(frame: CurvilinearFrame) -> dict:
    """Resample the path polyline and build a KD-tree over the samples.

    Samples lie exactly on the original polyline, so projecting onto the
    sub-segments gives the exact distance to the reference path.
    """
    poses = frame.path.poses
    pts = [poses[0, :2]]
    ps = [0.0]
    for i in range(len(poses) - 1):
        seg = poses[i + 1, :2] - poses[i, :2]
        seg_len = np.linalg.norm(seg)
        n = max(1, int(np.ceil(seg_len / _DENSE_STEP)))
        t = np.arange(1, n + 1) / n
        for tj in t:
            pts.append(poses[i, :2] + tj * seg)
            ps.append(frame.p_table[i] + tj * (frame.p_table[i + 1] - frame.p_table[i]))
    pts = np.array(pts)
    ps = np.array(ps)
    seg_vec = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg_vec, axis=1)
    valid = seg_len > 1e-12     # zero-length spans come from on-spot rotations
    return {
        "pts": pts, "ps": ps, "tree": cKDTree(pts),
        "seg_vec": seg_vec, "seg_len": seg_len, "valid": valid,
    }


def _nearest_on_polyline(dense, pts, p_lo, p_hi):
    """Vectorized exact nearest-point projection onto the dense polyline."""
    tree = dense["tree"]
    vpts, vps = dense["pts"], dense["ps"]
    seg_vec, seg_len, valid = dense["seg_vec"], dense["seg_len"], dense["valid"]
    nseg = len(seg_vec)

    if p_lo is not None:
        mask = (vps >= p_lo) & (vps <= p_hi)
        if not mask.any():
            mask = np.ones_like(vps, dtype=bool)
        idx_map = np.nonzero(mask)[0]
        k = min(4, len(idx_map))
        _, knn = cKDTree(vpts[mask]).query(pts, k=k)
        knn = idx_map[np.asarray(knn).reshape(len(pts), k)]
    else:
        k = min(4, len(vpts))
        _, knn = tree.query(pts, k=k)
        knn = np.asarray(knn).reshape(len(pts), k)

    best_d2 = np.full(len(pts), np.inf)
    best_p = np.zeros(len(pts))
    best_q = np.zeros(len(pts))
    # candidate segments adjacent to each knn vertex
    for off in (-1, 0):
        for col in range(knn.shape[1]):
            seg = np.clip(knn[:, col] + off, 0, nseg - 1)
            ok = valid[seg]
            sv = seg_vec[seg]
            sl = seg_len[seg]
            rel = pts - vpts[seg]
            t = np.clip(np.einsum("ij,ij->i", rel, sv) / np.maximum(sl**2, 1e-30),
                        0.0, 1.0)
            proj = vpts[seg] + t[:, None] * sv
            diff = pts - proj
            d2 = np.einsum("ij,ij->i", diff, diff)
            pc = vps[seg] + t * (vps[np.minimum(seg + 1, len(vps) - 1)] - vps[seg])
            if p_lo is not None:
                ok = ok & (pc >= p_lo - 1e-9) & (pc <= p_hi + 1e-9)
            # prefer smaller distance; on ties prefer smaller p
            better = ok & ((d2 < best_d2 - 1e-15)
                           | (np.isclose(d2, best_d2, rtol=0, atol=1e-12) & (pc < best_p)))
            cross = sv[:, 0] * diff[:, 1] - sv[:, 1] * diff[:, 0]
            qv = np.sign(cross) * np.sqrt(d2)
            best_d2 = np.where(better, d2, best_d2)
            best_p = np.where(better, pc, best_p)
            best_q = np.where(better, qv, best_q)
    return best_p, best_q, np.sqrt(best_d2)


# ----------------------------------------------------------------------
# ROC profile
# ----------------------------------------------------------------------

def roc_profile(frame: CurvilinearFrame) -> np.ndarray:
    """Signed instantaneous radius of curvature per segment.

    Three-point circumscribed-circle estimate on the position polyline with a
    window wide enough to see past individual vertices; positive ROC for left
    turns, so the singular side is q > 0 on left turns.  Straight segments
    and magnitudes beyond the lateral bound are clamped to +/- q_max.
    """
    poses = frame.path.poses
    p_tab = frame.p_table
    nseg = len(poses) - 1
    clamp = frame.q_max  # per-segment clamp values

    # window: ~2 segments of position travel, floor 0.4 m
    seg_pos = np.linalg.norm(np.diff(poses[:, :2], axis=0), axis=1)
    med = np.median(seg_pos[seg_pos > 1e-9]) if np.any(seg_pos > 1e-9) else 0.2
    w = max(2.0 * med, 0.4)

    dpsi = np.diff(poses[:, 2])
    seg_dp = np.diff(p_tab)
    mid_p = 0.5 * (p_tab[:-1] + p_tab[1:])
    out = np.empty(nseg)
    for i in range(nseg):
        pm = mid_p[i]
        # pure-rotation segments are infinitely sharp; keep the turn sign
        if seg_pos[i] < 1e-9:
            out[i] = np.copysign(1e-12, dpsi[i] if dpsi[i] != 0 else 1.0)
            continue
        # window is w metres of position travel; p advances faster where the
        # yaw term contributes, so rescale by the local dp/ds ratio.  Snap the
        # three circle points to stored vertices: they sit exactly on the
        # taught curve, mid-segment lerps do not.
        wp = w * seg_dp[i] / seg_pos[i]
        ia = min(int(np.searchsorted(p_tab, max(0.0, pm - wp))), i)
        ic = max(int(np.searchsorted(p_tab, min(frame.p_len, pm + wp))) - 1, i + 1)
        ic = min(ic, len(poses) - 1)
        a = poses[ia, :2]
        b = poses[i, :2]
        c = poses[ic, :2]
        out[i] = _circumradius_signed(a, b, c)

    sign = np.where(out >= 0, 1.0, -1.0)
    mag = np.minimum(np.abs(out), clamp)
    # keep exactly-straight segments at the positive clamp
    return np.where(np.isinf(out), clamp, sign * mag)


def _circumradius_signed(a, b, c) -> float:
    """Signed circumradius of triangle abc; +inf when collinear; positive
    when the path bends left."""
    ab = b - a
    bc = c - b
    ac = c - a
    cross = ab[0] * bc[1] - ab[1] * bc[0]
    la, lb, lc = np.linalg.norm(ab), np.linalg.norm(bc), np.linalg.norm(ac)
    if abs(cross) < 1e-12 * max(la * lb, 1e-12):
        return np.inf
    r = (la * lb * lc) / (2.0 * abs(cross))
    return r if cross > 0 else -r


# ----------------------------------------------------------------------
# singularity regions (Fig.-style inside-turn wedges)
# ----------------------------------------------------------------------

def _q_min_violated(frame, p, q, rel_tol=_SING_REL_TOL, abs_tol=_SING_ABS_TOL):
    """True where the projected Euclidean point is closer to the path than
    |q|: the defining condition of a singularity.

    The slack absorbs the micro-wedges every polyline joint produces; the
    wormhole refinement passes a much tighter slack to pin the true boundary.
    """
    pts = np.atleast_2d(frame.curv_to_euclid(np.atleast_1d(p), np.atleast_1d(q))[..., :2])
    d = frame.nearest_distance(pts)
    qa = np.abs(np.atleast_1d(q))
    tol = np.maximum(abs_tol, rel_tol * qa)
    return d < qa - tol


def singularity_regions(frame: CurvilinearFrame, grid: float = _SING_GRID) -> list:
    """Conservative rectangle cover of the inside-turn singularity wedges.

    Seeds are grid points with |q| > |ROC| on the inside of a turn; each seed
    row expands left/right along its constant-q line while the nearest-path
    distance stays short of |q|.  Rectangles are rounded outward by half a
    grid cell.  Nothing is computed beyond the lateral bounds.
    """
    p_tab = frame.p_table
    roc = frame.roc
    q_cap = frame.q_bound()
    regions = []

    n_q = int(np.floor(q_cap / grid))
    if n_q == 0 or len(roc) == 0:
        return regions

    p_grid = np.arange(0.0, frame.p_len + grid / 2, grid)
    p_grid = p_grid[p_grid <= frame.p_len]
    seg_of = np.clip(np.searchsorted(p_tab, p_grid, side="right") - 1, 0, len(roc) - 1)
    roc_at = roc[seg_of]

    for side in (+1.0, -1.0):
        for j in range(1, n_q + 1):
            q = side * j * grid
            # inside of the turn: q has the sign of the ROC
            seeds = (np.sign(roc_at) == side) & (abs(q) > np.abs(roc_at))
            if not seeds.any():
                continue
            viol = _q_min_violated(frame, p_grid, np.full_like(p_grid, q))
            # expand from seed indices along the row while the test fails
            marked = np.zeros_like(viol)
            for s in np.nonzero(seeds)[0]:
                if marked[s]:
                    continue
                marked[s] = True
                k = s - 1
                while k >= 0 and viol[k] and not marked[k]:
                    marked[k] = True
                    k -= 1
                k = s + 1
                while k < len(p_grid) and viol[k] and not marked[k]:
                    marked[k] = True
                    k += 1
            # consecutive marked runs -> rectangles rounded outward
            idx = np.nonzero(marked)[0]
            if len(idx) == 0:
                continue
            splits = np.nonzero(np.diff(idx) > 1)[0]
            starts = np.concatenate([[0], splits + 1])
            ends = np.concatenate([splits, [len(idx) - 1]])
            for s0, s1 in zip(starts, ends):
                p0 = max(0.0, p_grid[idx[s0]] - grid / 2)
                p1 = min(frame.p_len, p_grid[idx[s1]] + grid / 2)
                q0, q1 = sorted((q - side * grid / 2, q + side * grid / 2))
                regions.append((p0, p1, q0, q1))
    return _merge_rects(regions)


def _merge_rects(rects):
    """Merge vertically adjoining rectangles with overlapping p-spans into
    larger ones where possible (keeps the cover small, still conservative)."""
    merged = []
    for r in sorted(rects, key=lambda r: (r[2], r[0])):
        for i, m in enumerate(merged):
            if (abs(r[2] - m[3]) < 1e-9 or abs(m[2] - r[3]) < 1e-9) and \
               abs(r[0] - m[0]) < 1e-9 and abs(r[1] - m[1]) < 1e-9:
                merged[i] = (m[0], m[1], min(m[2], r[2]), max(m[3], r[3]))
                break
        else:
            merged.append(r)
    return merged


def _segment_intersects_rect(a, b, rect) -> bool:
    """Liang-Barsky clip of segment a-b against an axis-aligned rectangle."""
    p0, p1, q0, q1 = rect
    d = b - a
    t0, t1 = 0.0, 1.0
    for pc, qc in ((-d[0], a[0] - p0), (d[0], p1 - a[0]),
                   (-d[1], a[1] - q0), (d[1], q1 - a[1])):
        if abs(pc) < 1e-15:
            if qc < 0:
                return False
            continue
        r = qc / pc
        if pc < 0:
            if r > t1:
                return False
            t0 = max(t0, r)
        else:
            if r < t0:
                return False
            t1 = min(t1, r)
    return t0 <= t1


# ----------------------------------------------------------------------
# wormholes
# ----------------------------------------------------------------------

def generate_wormholes(frame: CurvilinearFrame, spacing: float = _WORMHOLE_SPACING,
                       weight: float = _WORMHOLE_WEIGHT) -> list:
    """Wormhole edges across each singularity region.

    For each region and each lateral level between the region's inner
    boundary and the lateral bound, the left and right boundary points are
    refined by bisection on the q = q_min condition; both project to the same
    Euclidean position, differing only in heading.
    """
    out = []
    q_cap = frame.q_bound()
    for (p0, p1, q0, q1) in frame.singularity_regions:
        side = 1.0 if q1 > 0 else -1.0
        inner = q0 if side > 0 else -q1      # |q| of the inner edge
        levels = np.arange(max(inner, spacing / 2), q_cap + 1e-9, spacing)
        for mag in levels:
            q = side * mag
            if not (min(q0, q1) - 1e-9 <= q <= max(q0, q1) + 1e-9):
                continue    # level belongs to another rectangle of the cover
            wh = _refine_wormhole(frame, p0, p1, q)
            if wh is not None:
                out.append(WormholeEdge(wh[0], wh[1], wh[2], weight * wh[2]))
    return _dedupe_wormholes(out)


def _refine_wormhole(frame, p0, p1, q):
    """Find the exact left/right region boundary at level q by bisection."""
    def violated(p):
        return bool(_q_min_violated(frame, np.array([p]), np.array([q]),
                                    rel_tol=0.0, abs_tol=2e-4)[0])

    # scan for a violated point inside the rectangle's p-span
    probes = np.linspace(p0, p1, max(5, int((p1 - p0) / 0.05) + 2))
    viol = [violated(p) for p in probes]
    if not any(viol):
        return None
    first = next(i for i, v in enumerate(viol) if v)
    last = len(viol) - 1 - next(i for i, v in enumerate(reversed(viol)) if v)

    def bisect(p_free, p_viol):
        for _ in range(50):
            mid = 0.5 * (p_free + p_viol)
            if violated(mid):
                p_viol = mid
            else:
                p_free = mid
        return 0.5 * (p_free + p_viol)

    def free_point_outward(p_start, direction):
        # the cover is grid-rounded per scan level, so the true boundary can
        # sit outside the rectangle span; walk out until the test clears
        p = p_start
        for _ in range(200):
            p_next = p + direction * 0.05
            if not 0.0 <= p_next <= frame.p_len:
                return np.clip(p_next, 0.0, frame.p_len)
            if not violated(p_next):
                return p_next
            p = p_next
        return p

    if first == 0:
        left = bisect(free_point_outward(probes[0], -1.0), probes[0])
    else:
        left = bisect(probes[first - 1], probes[first])
    if last == len(probes) - 1:
        right = bisect(free_point_outward(probes[-1], +1.0), probes[-1])
    else:
        right = bisect(probes[last + 1], probes[last])
    if right - left < 1e-6:
        return None
    pose_l = frame.interpolate_pose(left)
    pose_r = frame.interpolate_pose(right)
    rotation = abs(pose_r[2] - pose_l[2])
    if rotation < 1e-9:
        return None
    return (left, q), (right, q), rotation


def _dedupe_wormholes(whs):
    seen = []
    out = []
    for w in whs:
        key = (round(w.left[0], 3), round(w.right[0], 3), round(w.left[1], 3))
        if key in seen:
            continue
        seen.append(key)
        out.append(w)
    return out
