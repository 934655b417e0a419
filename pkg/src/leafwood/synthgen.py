"""Synthetic labelled trees for end-to-end testing.

A tree is a trunk cylinder with two levels of branch cylinders. Wood points
lie on the cylinder surfaces with normal-direction noise truncated at
``NOISE_CLIP`` standard deviations. Leaf points fill ellipsoidal clusters
at the branch tips. With ``planar_leaves`` they lie on small randomly
oriented disks instead, which is the hard case for plane-residual sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .io import LEAF, WOOD, PointCloud

NOISE_CLIP = 3.5

PRESET_LEAF_FRACTION = {"leafy": 0.7, "balanced": 0.5, "woody": 0.3}
PRESET_CYCLE = ("leafy", "balanced", "woody")


@dataclass(frozen=True)
class TreeSpec:
    """Geometry and point budget of one synthetic tree (lengths in metres)."""

    n_points: int = 100_000
    leaf_fraction: float = 0.7
    trunk_height: float = 6.0
    trunk_radius: float = 0.15
    n_branches: int = 8
    branch_length: tuple = (1.2, 2.5)
    branch_radius: tuple = (0.04, 0.08)
    twigs_per_branch: int = 4
    twig_length: tuple = (0.5, 1.0)
    twig_radius: tuple = (0.02, 0.035)
    n_clusters: int = 24
    cluster_radius: float = 0.5
    noise_std: float = 0.002
    planar_leaves: bool = False
    leaf_disk_radius: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 2:
            raise ConfigError("a tree needs at least 2 points")
        if not 0.0 <= self.leaf_fraction < 1.0:
            raise ConfigError("leaf_fraction must lie in [0, 1)")
        dims = (self.trunk_height, self.trunk_radius, self.cluster_radius, self.leaf_disk_radius,
                *self.branch_length, *self.branch_radius, *self.twig_length, *self.twig_radius)
        if min(dims) <= 0:
            raise ConfigError("all tree dimensions must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.n_branches < 0 or self.twigs_per_branch < 0 or self.n_clusters < 0:
            raise ConfigError("counts must be non-negative")
        if self.leaf_fraction > 0 and self.n_clusters == 0:
            raise ConfigError("a positive leaf fraction needs at least one leaf cluster")

    @property
    def n_leaf(self):
        return int(round(self.n_points * self.leaf_fraction))

    @property
    def n_wood(self):
        return self.n_points - self.n_leaf


@dataclass(frozen=True)
class Segment:
    base: np.ndarray
    axis: np.ndarray  # unit vector
    length: float
    radius: float

    @property
    def tip(self):
        return self.base + self.length * self.axis

    @property
    def area(self):
        return 2.0 * np.pi * self.radius * self.length

    def surface_distance(self, pts):
        """Distance of each point to the lateral surface of the infinite cylinder."""
        rel = pts - self.base
        along = rel @ self.axis
        radial = rel - along[:, None] * self.axis
        return np.abs(np.linalg.norm(radial, axis=1) - self.radius)


@dataclass
class SyntheticTree:
    cloud: PointCloud
    labels: np.ndarray
    segments: list
    segment_of: np.ndarray  # generating segment per point, -1 for leaves
    spec: TreeSpec = field(repr=False)


def _basis(axis):
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def _direction(rng, elevation_deg, azimuth=None):
    az = rng.uniform(0, 2 * np.pi) if azimuth is None else azimuth
    el = np.radians(rng.uniform(*elevation_deg))
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def _tilt(rng, axis, lo_deg, hi_deg):
    e1, e2 = _basis(axis)
    ang = np.radians(rng.uniform(lo_deg, hi_deg))
    rot = rng.uniform(0, 2 * np.pi)
    d = np.cos(ang) * axis + np.sin(ang) * (np.cos(rot) * e1 + np.sin(rot) * e2)
    return d / np.linalg.norm(d)


def build_skeleton(spec: TreeSpec, rng) -> list:
    segs = [Segment(np.zeros(3), np.array([0.0, 0.0, 1.0]), spec.trunk_height, spec.trunk_radius)]
    az0 = rng.uniform(0, 2 * np.pi)
    for b in range(spec.n_branches):
        h = spec.trunk_height * rng.uniform(0.45, 0.95)
        az = az0 + 2 * np.pi * b / max(spec.n_branches, 1) + rng.uniform(-0.3, 0.3)
        axis = _direction(rng, (15, 55), az)
        radius = min(rng.uniform(*spec.branch_radius), 0.8 * spec.trunk_radius)
        base = np.array([0.0, 0.0, h]) + spec.trunk_radius * 0.5 * np.array(
            [np.cos(az), np.sin(az), 0.0])
        branch = Segment(base, axis, rng.uniform(*spec.branch_length), radius)
        segs.append(branch)
        for _ in range(spec.twigs_per_branch):
            frac = rng.uniform(0.4, 0.9)
            twig_axis = _tilt(rng, axis, 30, 55)
            twig_r = min(rng.uniform(*spec.twig_radius), 0.8 * radius)
            segs.append(Segment(branch.base + frac * branch.length * axis, twig_axis,
                                rng.uniform(*spec.twig_length), twig_r))
    return segs


def _allocate(total, weights):
    """Integer split of ``total`` proportional to ``weights`` (largest remainder)."""
    w = np.asarray(weights, dtype=float)
    if total == 0 or w.size == 0:
        return np.zeros(w.size, dtype=int)
    share = total * w / w.sum()
    base = np.floor(share).astype(int)
    rest = total - base.sum()
    order = np.argsort(-(share - base), kind="stable")
    base[order[:rest]] += 1
    return base


def _clipped_normal(rng, size, std):
    if std == 0:
        return np.zeros(size)
    out = rng.normal(0.0, std, size)
    bad = np.abs(out) > NOISE_CLIP * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, int(bad.sum()))
        bad = np.abs(out) > NOISE_CLIP * std
    return out


def _sample_cylinder(rng, seg: Segment, n, noise):
    e1, e2 = _basis(seg.axis)
    t = rng.uniform(0, seg.length, n)
    theta = rng.uniform(0, 2 * np.pi, n)
    radial = np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2
    r = seg.radius + _clipped_normal(rng, n, noise)
    return seg.base + t[:, None] * seg.axis + r[:, None] * radial


def _uniform_ellipsoid(rng, n, radii):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0, 1, n) ** (1.0 / 3.0)
    return d * r[:, None] * radii


def _cluster_frames(spec, rng, segs):
    tips = segs[1:] if len(segs) > 1 else segs
    # Prefer twig tips, then branch tips, cycling when there are more clusters.
    tips = sorted(tips, key=lambda s: s.radius)
    frames = []
    for c in range(spec.n_clusters):
        seg = tips[c % len(tips)]
        radii = spec.cluster_radius * rng.uniform(0.7, 1.1, 3) * np.array([1.0, 1.0, 0.7])
        center = seg.tip + 0.5 * radii[0] * seg.axis + rng.normal(0, 0.1 * spec.cluster_radius, 3)
        frames.append((center, radii))
    return frames


def _sample_leaves(spec, rng, frames, n_leaf):
    counts = _allocate(n_leaf, [np.prod(r) for _, r in frames])
    parts = []
    for (center, radii), n in zip(frames, counts):
        if n == 0:
            continue
        if not spec.planar_leaves:
            pts = center + _uniform_ellipsoid(rng, n, radii)
            pts += _clipped_normal(rng, (n, 3), spec.noise_std)
        else:
            pts = _sample_disks(spec, rng, center, radii, n)
        parts.append(pts)
    return np.concatenate(parts) if parts else np.empty((0, 3))


def _sample_disks(spec, rng, center, radii, n):
    per_disk = 40
    n_disks = max(1, n // per_disk)
    disk_counts = _allocate(n, np.ones(n_disks))
    centers = center + _uniform_ellipsoid(rng, n_disks, radii)
    out = []
    for dc, cnt in zip(centers, disk_counts):
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        e1, e2 = _basis(normal)
        rr = spec.leaf_disk_radius * np.sqrt(rng.uniform(0, 1, cnt))
        th = rng.uniform(0, 2 * np.pi, cnt)
        pts = dc + (rr * np.cos(th))[:, None] * e1 + (rr * np.sin(th))[:, None] * e2
        pts += _clipped_normal(rng, cnt, spec.noise_std)[:, None] * normal
        out.append(pts)
    return np.concatenate(out)


def generate_tree_detailed(spec: TreeSpec) -> SyntheticTree:
    rng = np.random.default_rng(spec.seed)
    segs = build_skeleton(spec, rng)
    wood_counts = _allocate(spec.n_wood, [s.area for s in segs])
    wood_parts, seg_ids = [], []
    for sid, (seg, n) in enumerate(zip(segs, wood_counts)):
        wood_parts.append(_sample_cylinder(rng, seg, n, spec.noise_std))
        seg_ids.append(np.full(n, sid))
    wood = np.concatenate(wood_parts)
    leaves = np.empty((0, 3))
    if spec.n_leaf > 0:
        frames = _cluster_frames(spec, rng, segs)
        leaves = _sample_leaves(spec, rng, frames, spec.n_leaf)

    points = np.concatenate([wood, leaves])
    labels = np.concatenate([np.full(len(wood), WOOD), np.full(len(leaves), LEAF)]).astype(np.int8)
    segment_of = np.concatenate(seg_ids + [np.full(len(leaves), -1)])
    # Interleave classes so point order carries no label information.
    perm = rng.permutation(len(points))
    cloud = PointCloud(points[perm], name=f"tree_seed{spec.seed}")
    return SyntheticTree(cloud, labels[perm], segs, segment_of[perm], spec)


def generate_tree(spec: TreeSpec):
    """Labelled synthetic tree: ``(PointCloud, labels)``; deterministic per seed."""
    tree = generate_tree_detailed(spec)
    return tree.cloud, tree.labels


def derived_seeds(master_seed: int, count: int) -> list:
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def suite_specs(preset: str, count: int, seed: int, n_points: int = 100_000,
                planar_leaves: bool = False) -> list:
    """Tree specs for a suite; ``preset="cycle"`` rotates leafy, balanced, woody."""
    if preset != "cycle" and preset not in PRESET_LEAF_FRACTION:
        raise ConfigError(f"unknown preset {preset!r}")
    specs = []
    for i, s in enumerate(derived_seeds(seed, count)):
        name = PRESET_CYCLE[i % 3] if preset == "cycle" else preset
        rng = np.random.default_rng(s)
        specs.append(replace(
            TreeSpec(),
            n_points=n_points,
            leaf_fraction=PRESET_LEAF_FRACTION[name],
            trunk_height=float(rng.uniform(5.0, 7.5)),
            trunk_radius=float(rng.uniform(0.12, 0.2)),
            n_branches=int(rng.integers(6, 11)),
            n_clusters=int(rng.integers(18, 30)),
            cluster_radius=float(rng.uniform(0.4, 0.6)),
            planar_leaves=planar_leaves,
            seed=s,
        ))
    return specs


def preset_of(spec: TreeSpec) -> str:
    for name, frac in PRESET_LEAF_FRACTION.items():
        if abs(frac - spec.leaf_fraction) < 1e-12:
            return name
    return "custom"


def generate_suite(preset: str, count: int, seed: int, n_points: int = 100_000,
                   planar_leaves: bool = False) -> list:
    """``count`` labelled trees as ``(PointCloud, labels)`` pairs."""
    out = []
    for i, spec in enumerate(suite_specs(preset, count, seed, n_points, planar_leaves)):
        cloud, labels = generate_tree(spec)
        cloud.name = f"tree_{i + 1:02d}_{preset_of(spec)}"
        out.append((cloud, labels))
    return out
