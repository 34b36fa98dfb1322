"""Hashed voxel grid with per-voxel plane statistics and a confidence value that
blends in the degeneracy score of each integrated point.

The table stores at most one voxel per hash slot. A new point whose key hashes
onto a slot occupied by a different key evicts the old voxel outright (no open
addressing), mirroring the collision rule of voxel-hash LIO maps.
"""

from __future__ import annotations

import enum
import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np


class TooFewPoints(ValueError):
    """Plane fit requested with fewer points than the configured minimum."""


class DegeneratePlane(ValueError):
    """Plane fit impossible: the points carry no spatial extent."""


class StaleSnapshot(RuntimeError):
    """A map snapshot was queried after the underlying map mutated."""


class UpdateOutcome(enum.Enum):
    CREATED = "created"
    MERGED = "merged"
    REPLACED = "replaced"
    REJECTED = "rejected"


_HASH_PRIMES = (73856093, 19349669, 83492791)


def quantize(p: np.ndarray, side: float):
    """Integer voxel key(s): component-wise floor(p / side)."""
    if side <= 0:
        raise ValueError("voxel side must be positive")
    q = np.floor(np.asarray(p, dtype=float) / side).astype(np.int64)
    if q.ndim == 1:
        return (int(q[0]), int(q[1]), int(q[2]))
    return q


def spatial_hash(key) -> int:
    kx, ky, kz = key
    return (int(kx) * _HASH_PRIMES[0]) ^ (int(ky) * _HASH_PRIMES[1]) ^ (int(kz) * _HASH_PRIMES[2])


def fit_plane(points: np.ndarray, min_points: int = 6, eps: float = 1e-12):
    """Fit a plane to points by eigendecomposition of their sample covariance.

    Returns:
        (centroid, covariance, normal, planarity). The normal is the smallest
        eigenvector, sign-normalized so its largest-magnitude component is
        positive; planarity is lambda_mid / lambda_min with the denominator
        clamped at eps.

    Raises:
        TooFewPoints: fewer than min_points samples.
        DegeneratePlane: all points coincide (no measurable scatter).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected an (N, 3) point array")
    if len(pts) < min_points:
        raise TooFewPoints(f"plane fit needs >= {min_points} points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = (d.T @ d) / (len(pts) - 1)
    if np.trace(cov) < 1e-18:
        raise DegeneratePlane("all points coincide")
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, 0]
    if normal[np.argmax(np.abs(normal))] < 0:
        normal = -normal
    planarity = evals[1] / max(evals[0], eps)
    return centroid, cov, normal, float(planarity)


def frame_gate(s_deg: float, tau_global: float) -> bool:
    """Frame-level map-update gate: False (exclude the frame) iff s_deg < tau."""
    return not (s_deg < tau_global)


@dataclass
class Voxel:
    """One grid cell: running point statistics, fitted plane, and confidence q_v.

    mean/m2 are Welford accumulators over the integrated points; the derived
    plane (centroid, covariance, normal, planarity) is refreshed on merges until
    the refit budget is exhausted, after which geometry freezes and only the
    confidence keeps updating.
    """

    key: tuple
    mean: np.ndarray
    m2: np.ndarray
    point_count: int
    q_v: float
    centroid: np.ndarray = None
    covariance: np.ndarray = None
    normal: np.ndarray = None
    planarity: float = 0.0
    frozen: bool = False

    @staticmethod
    def from_point(key: tuple, p: np.ndarray, s_deg: float) -> "Voxel":
        return Voxel(key=key, mean=np.array(p, dtype=float), m2=np.zeros((3, 3)),
                     point_count=1, q_v=float(s_deg))

    @property
    def plane_ready(self) -> bool:
        return self.normal is not None

    def _accumulate(self, p: np.ndarray) -> None:
        delta = p - self.mean
        self.mean = self.mean + delta / self.point_count
        self.m2 = self.m2 + np.outer(delta, p - self.mean)

    def _refit(self, min_points: int) -> None:
        if self.point_count < min_points:
            return
        cov = self.m2 / (self.point_count - 1)
        if np.trace(cov) < 1e-18:
            return
        evals, evecs = np.linalg.eigh(cov)
        normal = evecs[:, 0]
        if normal[np.argmax(np.abs(normal))] < 0:
            normal = -normal
        self.centroid = self.mean.copy()
        self.covariance = cov
        self.normal = normal
        self.planarity = float(evals[1] / max(evals[0], 1e-12))


class VoxelMap:
    """Spatially hashed voxel grid; one voxel per slot, collisions replace."""

    def __init__(self, side: float = 0.5, capacity: int = 2**20,
                 min_points_for_plane: int = 6, beta: float = 0.9,
                 refit_max_points: int = 50, per_voxel_gate: bool = False,
                 delta_margin: float = 0.3, neighbor_fallback: bool = True):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError("capacity must be a positive power of two")
        self.side = float(side)
        self.capacity = capacity
        self._mask = capacity - 1
        self.min_points_for_plane = min_points_for_plane
        self.beta = float(beta)
        self.refit_max_points = refit_max_points
        self.per_voxel_gate = per_voxel_gate
        self.delta_margin = float(delta_margin)
        self.neighbor_fallback = neighbor_fallback
        self._slots: dict[int, Voxel] = {}
        self.generation = 0

    def __len__(self) -> int:
        return len(self._slots)

    def _slot(self, key) -> int:
        return spatial_hash(key) & self._mask

    def voxels(self):
        """Voxels in deterministic key order."""
        return sorted(self._slots.values(), key=lambda v: v.key)

    # -- updates ------------------------------------------------------------

    def insert_point(self, p: np.ndarray, s_deg: float) -> UpdateOutcome:
        """Integrate one world-frame point carrying the frame's degeneracy score.

        Assumes the frame-level gate already passed. New key -> Created with
        q_v = s_deg; same key -> Merged with q_v <- beta*q_v + (1-beta)*s_deg;
        hash collision with a different key -> old voxel Replaced; optional
        per-voxel acceptance check -> Rejected.
        """
        p = np.asarray(p, dtype=float)
        key = quantize(p, self.side)
        outcome = self._insert_with_key(key, p, float(s_deg), refit=True)
        return outcome

    def _insert_with_key(self, key, p, s_deg, refit: bool) -> UpdateOutcome:
        slot = self._slot(key)
        voxel = self._slots.get(slot)
        self.generation += 1
        if voxel is None:
            self._slots[slot] = Voxel.from_point(key, p, s_deg)
            return UpdateOutcome.CREATED
        if voxel.key != key:
            self._slots[slot] = Voxel.from_point(key, p, s_deg)
            return UpdateOutcome.REPLACED
        if self.per_voxel_gate and s_deg < voxel.q_v - self.delta_margin:
            return UpdateOutcome.REJECTED
        voxel.point_count += 1
        if voxel.point_count <= self.refit_max_points:
            voxel._accumulate(p)
            if refit:
                voxel._refit(self.min_points_for_plane)
        else:
            voxel.frozen = True
        voxel.q_v = self.beta * voxel.q_v + (1.0 - self.beta) * s_deg
        return UpdateOutcome.MERGED

    def insert_batch(self, points: np.ndarray, s_deg: float) -> dict:
        """Integrate a frame of points (in order); returns outcome counts.

        Equivalent to calling insert_point per point; plane refits are deferred
        to once per touched voxel, which yields identical final geometry since
        a refit is a pure function of the accumulated statistics.
        """
        points = np.asarray(points, dtype=float)
        keys = quantize(points, self.side)
        counts = {o: 0 for o in UpdateOutcome}
        touched: dict[int, Voxel] = {}
        for i in range(len(points)):
            key = (int(keys[i, 0]), int(keys[i, 1]), int(keys[i, 2]))
            outcome = self._insert_with_key(key, points[i], float(s_deg), refit=False)
            counts[outcome] += 1
            if outcome is not UpdateOutcome.REJECTED:
                slot = self._slot(key)
                touched[slot] = self._slots[slot]
        for voxel in touched.values():
            if not voxel.frozen or voxel.normal is None:
                voxel._refit(self.min_points_for_plane)
        return {o.value: n for o, n in counts.items()}

    # -- queries ------------------------------------------------------------

    def query(self, p: np.ndarray):
        """Voxel containing p if it has a fitted plane; optional 6-neighbor fallback."""
        key = quantize(np.asarray(p, dtype=float), self.side)
        return self._query_key(key, p)

    def _get_ready(self, key):
        voxel = self._slots.get(self._slot(key))
        if voxel is not None and voxel.key == key and voxel.plane_ready \
                and voxel.point_count >= self.min_points_for_plane:
            return voxel
        return None

    def _query_key(self, key, p):
        voxel = self._get_ready(key)
        if voxel is not None or not self.neighbor_fallback:
            return voxel
        best, best_d2 = None, np.inf
        for axis in range(3):
            for step in (-1, 1):
                nkey = list(key)
                nkey[axis] += step
                cand = self._get_ready(tuple(nkey))
                if cand is not None:
                    d2 = float(np.sum((cand.centroid - p) ** 2))
                    if d2 < best_d2:
                        best, best_d2 = cand, d2
        return best

    def snapshot(self) -> "MapSnapshot":
        return MapSnapshot(self)

    # -- serialization ------------------------------------------------------

    def to_csv_bytes(self) -> bytes:
        """Deterministic debug dump; zeros stand in for voxels without a plane."""
        buf = io.StringIO()
        buf.write("kx,ky,kz,cx,cy,cz,nx,ny,nz,count,q_v,planarity\n")
        for v in self.voxels():
            c = v.centroid if v.centroid is not None else v.mean
            n = v.normal if v.normal is not None else np.zeros(3)
            buf.write("%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%.9g,%.9g\n"
                      % (v.key[0], v.key[1], v.key[2], c[0], c[1], c[2],
                         n[0], n[1], n[2], v.point_count, v.q_v, v.planarity))
        return buf.getvalue().encode()

    def export_csv(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(self.to_csv_bytes())

    def export_ply(self, path: str) -> None:
        """Binary little-endian PLY of voxel centroids with nx ny nz q_v floats."""
        voxels = self.voxels()
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {len(voxels)}\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property float nx\nproperty float ny\nproperty float nz\n"
            "property float q_v\nend_header\n"
        )
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            for v in voxels:
                c = v.centroid if v.centroid is not None else v.mean
                n = v.normal if v.normal is not None else np.zeros(3)
                f.write(struct.pack("<7f", c[0], c[1], c[2], n[0], n[1], n[2], v.q_v))

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv_bytes()).hexdigest()


class MapSnapshot:
    """Read view of a map frozen at a generation; queries fail if the map moved."""

    def __init__(self, parent: VoxelMap):
        self._map = parent
        self.generation = parent.generation
        self.side = parent.side

    def _check(self):
        if self._map.generation != self.generation:
            raise StaleSnapshot("voxel map mutated after snapshot was taken")

    def __len__(self) -> int:
        return len(self._map)

    def query(self, p: np.ndarray):
        self._check()
        return self._map.query(p)

    def query_batch(self, points: np.ndarray) -> list:
        """Voxel-or-None per point; same semantics as query()."""
        self._check()
        points = np.asarray(points, dtype=float)
        keys = quantize(points, self.side)
        out = []
        for i in range(len(points)):
            key = (int(keys[i, 0]), int(keys[i, 1]), int(keys[i, 2]))
            out.append(self._map._query_key(key, points[i]))
        return out
