"""Deterministic kinematic-chain + eye-in-hand camera simulator.

A world is a revolute chain carrying a pinhole camera, plus static tagged
primitives (spheres, boxes, cylinders). Rendering is a pure function of
(world, joint vector): spheres are resolved analytically per pixel, boxes
and cylinders go through a fixed-tessellation triangle rasterizer with a
z-buffer, so identical inputs give byte-identical images. The oracle mask
marks exactly the pixels whose nearest surface belongs to a prompt-matched
primitive or part, standing in for a segmentation network.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .probmap import ProbabilityMap

Z_NEAR = 0.01
CYLINDER_SEGMENTS = 64

_PALETTE = [
    (214, 69, 65),
    (68, 108, 179),
    (77, 175, 124),
    (244, 179, 80),
    (142, 68, 173),
    (52, 152, 219),
    (230, 126, 34),
    (26, 188, 156),
    (192, 57, 43),
    (41, 128, 185),
    (39, 174, 96),
    (241, 196, 15),
]


class SceneFormatError(ValueError):
    """Scene JSON violates the schema (unknown or missing fields, bad values)."""


class JointLimitViolation(ValueError):
    pass


# ---------------------------------------------------------------------------
# rigid transforms


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        raise ValueError("rotation axis must be non-zero")
    x, y, z = axis / norm
    c, s = math.cos(angle), math.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return (
        rotation_about_axis((0, 0, 1), yaw)
        @ rotation_about_axis((0, 1, 0), pitch)
        @ rotation_about_axis((1, 0, 0), roll)
    )


def make_transform(translation=(0.0, 0.0, 0.0), rotation_rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rpy_matrix(*rotation_rpy)
    T[:3, 3] = np.asarray(translation, dtype=np.float64)
    return T


def _translation(offset) -> np.ndarray:
    T = np.eye(4)
    T[:3, 3] = np.asarray(offset, dtype=np.float64)
    return T


# ---------------------------------------------------------------------------
# kinematics


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    origin_offset: np.ndarray
    limits: Tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=np.float64))
        object.__setattr__(
            self, "origin_offset", np.asarray(self.origin_offset, dtype=np.float64)
        )
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError(f"joint limits must satisfy low < high, got {self.limits}")


@dataclass(frozen=True)
class KinematicChain:
    joints: Tuple[Joint, ...]
    controlled_indices: Tuple[int, ...]
    tool_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(
            self, "tool_offset", np.asarray(self.tool_offset, dtype=np.float64)
        )
        idx = tuple(int(i) for i in self.controlled_indices)
        if not idx:
            raise ValueError("chain needs at least one controlled joint")
        if len(set(idx)) != len(idx) or any(i < 0 or i >= len(self.joints) for i in idx):
            raise ValueError(f"bad controlled_indices {idx} for {len(self.joints)} joints")
        object.__setattr__(self, "controlled_indices", idx)

    @property
    def dof(self) -> int:
        return len(self.joints)

    def clamp(self, q: np.ndarray) -> Tuple[np.ndarray, bool]:
        lo = np.array([j.limits[0] for j in self.joints])
        hi = np.array([j.limits[1] for j in self.joints])
        clamped = np.clip(q, lo, hi)
        return clamped, bool(np.any(clamped != q))


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """End-effector pose: product of per-joint offset translations and
    rotations about the joint axes, then the fixed tool offset."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint values, got shape {q.shape}")
    for i, (joint, qi) in enumerate(zip(chain.joints, q)):
        if not joint.limits[0] <= qi <= joint.limits[1]:
            raise JointLimitViolation(
                f"joint {i} at {qi:.4f} outside limits {joint.limits}"
            )
    T = np.eye(4)
    for joint, qi in zip(chain.joints, q):
        R = np.eye(4)
        R[:3, :3] = rotation_about_axis(joint.axis, qi)
        T = T @ _translation(joint.origin_offset) @ R
    return T @ _translation(chain.tool_offset)


# ---------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class EyeInHandCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    mount_transform: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        object.__setattr__(
            self, "mount_transform", np.asarray(self.mount_transform, dtype=np.float64)
        )

    def ray_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """(dx, dy) per-pixel ray slopes; ray direction is (dx, dy, 1)."""
        xs = (np.arange(self.width, dtype=np.float64) - self.cx) / self.fx
        ys = (np.arange(self.height, dtype=np.float64) - self.cy) / self.fy
        return np.meshgrid(xs, ys)

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Project camera-frame points (N, 3) to pixel coords (N, 2)."""
        pts_cam = np.atleast_2d(pts_cam)
        z = pts_cam[:, 2]
        u = self.fx * pts_cam[:, 0] / z + self.cx
        v = self.fy * pts_cam[:, 1] / z + self.cy
        return np.column_stack([u, v])


# ---------------------------------------------------------------------------
# scene primitives


@dataclass(frozen=True)
class Sphere:
    radius: float


@dataclass(frozen=True)
class Box:
    extents: Tuple[float, float, float]


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float


TAG_CATEGORIES = ("AffordanceEnriched", "ObjectOriented")


@dataclass(frozen=True)
class PromptTag:
    text: str
    category: str

    def __post_init__(self):
        if self.category not in TAG_CATEGORIES:
            raise ValueError(f"unknown tag category {self.category!r}")
        if not normalize_prompt(self.text):
            raise ValueError("tag text is empty after normalization")


@dataclass(frozen=True)
class PartRegion:
    shape: object
    pose: np.ndarray
    prompt_tags: Tuple[PromptTag, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=np.float64))
        if not self.prompt_tags:
            raise ValueError("part region needs at least one prompt tag")


@dataclass(frozen=True)
class ScenePrimitive:
    shape: object
    pose: np.ndarray
    prompt_tags: Tuple[PromptTag, ...]
    parts: Tuple[PartRegion, ...] = ()
    color: Optional[Tuple[int, int, int]] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=np.float64))
        if not self.prompt_tags:
            raise ValueError("primitive needs at least one prompt tag")

    @property
    def centroid(self) -> np.ndarray:
        return self.pose[:3, 3]


_WORD_RE = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_prompt(text: str) -> Tuple[str, ...]:
    """Lowercase, trim, strip punctuation; returns the word tokens."""
    cleaned = _WORD_RE.sub(" ", text.lower().strip())
    return tuple(cleaned.split())


def prompt_matches_tag(prompt: str, tag_text: str) -> bool:
    """Exact alias equality, else whole-word contiguous substring of the tag."""
    p = normalize_prompt(prompt)
    t = normalize_prompt(tag_text)
    if not p or not t:
        return False
    if p == t:
        return True
    if len(p) > len(t):
        return False
    return any(t[i : i + len(p)] == p for i in range(len(t) - len(p) + 1))


# ---------------------------------------------------------------------------
# world


@dataclass
class SimWorld:
    camera: EyeInHandCamera
    chain: KinematicChain
    primitives: List[ScenePrimitive]
    q: np.ndarray = None
    background: Tuple[int, int, int] = (24, 24, 28)
    step_count: int = 0
    last_command_clamped: bool = False

    def __post_init__(self):
        if self.q is None:
            self.q = np.zeros(self.chain.dof)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.last_applied_dq = np.zeros(len(self.chain.controlled_indices))
        self._surfaces = _build_surfaces(self.primitives)
        self._render_cache = None

    @property
    def controlled_q(self) -> np.ndarray:
        return self.q[list(self.chain.controlled_indices)]

    def set_controlled(self, qc: np.ndarray) -> None:
        q = self.q.copy()
        q[list(self.chain.controlled_indices)] = np.asarray(qc, dtype=np.float64)
        clamped, flag = self.chain.clamp(q)
        self.q = clamped
        self.last_command_clamped = flag

    def effector_pose(self, q: Optional[np.ndarray] = None) -> np.ndarray:
        return forward_kinematics(self.chain, self.q if q is None else q)

    def camera_pose(self, q: Optional[np.ndarray] = None) -> np.ndarray:
        return self.effector_pose(q) @ self.camera.mount_transform

    def find_primitive(self, prompt: str) -> Optional[ScenePrimitive]:
        for prim in self.primitives:
            if any(prompt_matches_tag(prompt, tag.text) for tag in prim.prompt_tags):
                return prim
        return None


@dataclass(frozen=True)
class _Surface:
    """One renderable solid with a stable id: a primitive body or a part."""

    surface_id: int
    prim_index: int
    part_index: Optional[int]
    shape: object
    pose: np.ndarray
    color: Tuple[int, int, int]


def _build_surfaces(primitives) -> List[_Surface]:
    surfaces = []
    next_id = 1
    for pi, prim in enumerate(primitives):
        color = prim.color or _PALETTE[pi % len(_PALETTE)]
        surfaces.append(
            _Surface(next_id, pi, None, prim.shape, prim.pose, tuple(color))
        )
        next_id += 1
        for ki, part in enumerate(prim.parts):
            part_color = _PALETTE[(pi + ki + 5) % len(_PALETTE)]
            surfaces.append(
                _Surface(
                    next_id, pi, ki, part.shape, prim.pose @ part.pose, part_color
                )
            )
            next_id += 1
    return surfaces


def apply_joint_command(world: SimWorld, dq: np.ndarray) -> SimWorld:
    """Kinematic command: controlled joints move by dq, clamped to limits.

    Clamping is flagged on the world, not raised. Returns the mutated world;
    the actually applied controlled-joint delta is in world.last_applied_dq.
    """
    dq = np.asarray(dq, dtype=np.float64)
    idx = list(world.chain.controlled_indices)
    if dq.shape != (len(idx),):
        raise ValueError(f"expected {len(idx)} command values, got shape {dq.shape}")
    before = world.q[idx].copy()
    q = world.q.copy()
    q[idx] += dq
    clamped, flag = world.chain.clamp(q)
    world.q = clamped
    world.last_command_clamped = flag
    world.last_applied_dq = world.q[idx] - before
    world.step_count += 1
    return world


# ---------------------------------------------------------------------------
# meshes


def _box_triangles(extents) -> np.ndarray:
    hx, hy, hz = (e / 2.0 for e in extents)
    v = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    )
    faces = [
        (0, 1, 2), (0, 2, 3), (4, 6, 5), (4, 7, 6),
        (0, 4, 5), (0, 5, 1), (3, 2, 6), (3, 6, 7),
        (0, 3, 7), (0, 7, 4), (1, 5, 6), (1, 6, 2),
    ]
    return np.array([[v[a], v[b], v[c]] for a, b, c in faces])


def _cylinder_triangles(radius: float, height: float) -> np.ndarray:
    n = CYLINDER_SEGMENTS
    theta = 2.0 * np.pi * np.arange(n) / n
    bot = np.column_stack([radius * np.cos(theta), radius * np.sin(theta), np.full(n, -height / 2.0)])
    top = bot.copy()
    top[:, 2] = height / 2.0
    cb = np.array([0.0, 0.0, -height / 2.0])
    ct = np.array([0.0, 0.0, height / 2.0])
    tris = []
    for k in range(n):
        k2 = (k + 1) % n
        tris.append([bot[k], bot[k2], top[k2]])
        tris.append([bot[k], top[k2], top[k]])
        tris.append([cb, bot[k2], bot[k]])
        tris.append([ct, top[k], top[k2]])
    return np.array(tris)


def _shape_triangles(shape) -> Optional[np.ndarray]:
    if isinstance(shape, Box):
        return _box_triangles(shape.extents)
    if isinstance(shape, Cylinder):
        return _cylinder_triangles(shape.radius, shape.height)
    return None  # spheres are analytic


# ---------------------------------------------------------------------------
# rendering


def _clip_polygon_znear(pts: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a camera-space polygon against z >= Z_NEAR."""
    out = []
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        da, db = a[2] - Z_NEAR, b[2] - Z_NEAR
        if da >= 0.0:
            out.append(a)
        if (da > 0.0) != (db > 0.0) and da != db:
            t = da / (da - db)
            out.append(a + t * (b - a))
    return np.array(out) if len(out) >= 3 else np.empty((0, 3))


def _raster_triangle(cam, tri_cam, surface_id, depth, ids):
    poly = _clip_polygon_znear(tri_cam)
    if poly.shape[0] < 3:
        return
    for k in range(1, poly.shape[0] - 1):
        _raster_clipped(cam, poly[[0, k, k + 1]], surface_id, depth, ids)


def _raster_clipped(cam, tri_cam, surface_id, depth, ids):
    z = tri_cam[:, 2]
    uv = cam.project(tri_cam)
    x0 = max(int(math.floor(uv[:, 0].min())), 0)
    x1 = min(int(math.ceil(uv[:, 0].max())), cam.width - 1)
    y0 = max(int(math.floor(uv[:, 1].min())), 0)
    y1 = min(int(math.ceil(uv[:, 1].max())), cam.height - 1)
    if x0 > x1 or y0 > y1:
        return
    (ax, ay), (bx, by), (cx, cy) = uv
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if abs(area) < 1e-12:
        return
    px, py = np.meshgrid(
        np.arange(x0, x1 + 1, dtype=np.float64),
        np.arange(y0, y1 + 1, dtype=np.float64),
    )
    w0 = ((cx - bx) * (py - by) - (cy - by) * (px - bx)) / area
    w1 = ((ax - cx) * (py - cy) - (ay - cy) * (px - cx)) / area
    w2 = 1.0 - w0 - w1
    inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
    if not inside.any():
        return
    inv_z = w0 / z[0] + w1 / z[1] + w2 / z[2]
    with np.errstate(divide="ignore"):
        pix_z = 1.0 / inv_z
    window_depth = depth[y0 : y1 + 1, x0 : x1 + 1]
    window_ids = ids[y0 : y1 + 1, x0 : x1 + 1]
    update = inside & (pix_z > Z_NEAR) & (pix_z < window_depth)
    window_depth[update] = pix_z[update]
    window_ids[update] = surface_id


def _raster_sphere(cam, center_cam, radius, surface_id, depth, ids):
    dx, dy = cam.ray_grid()
    a = dx * dx + dy * dy + 1.0
    b = dx * center_cam[0] + dy * center_cam[1] + center_cam[2]
    c = float(center_cam @ center_cam) - radius * radius
    disc = b * b - a * c
    hit = disc >= 0.0
    if not hit.any():
        return
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = (b - sq) / a
    t2 = (b + sq) / a
    t = np.where(t1 > Z_NEAR, t1, t2)
    update = hit & (t > Z_NEAR) & (t < depth)
    depth[update] = t[update]
    ids[update] = surface_id


def render_buffers(world: SimWorld, q: Optional[np.ndarray] = None):
    """(rgb uint8 HxWx3, surface-id int32 HxW) at the given joint vector."""
    q = world.q if q is None else np.asarray(q, dtype=np.float64)
    key = q.tobytes()
    if world._render_cache is not None and world._render_cache[0] == key:
        return world._render_cache[1], world._render_cache[2]
    cam = world.camera
    view = np.linalg.inv(world.camera_pose(q))
    depth = np.full((cam.height, cam.width), np.inf)
    ids = np.zeros((cam.height, cam.width), dtype=np.int32)
    for surf in world._surfaces:
        pose_cam = view @ surf.pose
        if isinstance(surf.shape, Sphere):
            _raster_sphere(cam, pose_cam[:3, 3], surf.shape.radius, surf.surface_id, depth, ids)
        else:
            tris = _shape_triangles(surf.shape)
            R, t = pose_cam[:3, :3], pose_cam[:3, 3]
            tris_cam = tris @ R.T + t
            for tri in tris_cam:
                _raster_triangle(cam, tri, surf.surface_id, depth, ids)
    rgb = np.empty((cam.height, cam.width, 3), dtype=np.uint8)
    rgb[:] = np.array(world.background, dtype=np.uint8)
    for surf in world._surfaces:
        rgb[ids == surf.surface_id] = surf.color
    world._render_cache = (key, rgb, ids)
    return rgb, ids


def render_view(world: SimWorld, q: Optional[np.ndarray] = None) -> np.ndarray:
    rgb, _ = render_buffers(world, q)
    return rgb


def matched_surface_ids(world: SimWorld, prompt: str) -> set:
    matched = set()
    for surf in world._surfaces:
        prim = world.primitives[surf.prim_index]
        if surf.part_index is None:
            tags = prim.prompt_tags
        else:
            tags = prim.parts[surf.part_index].prompt_tags
        if any(prompt_matches_tag(prompt, tag.text) for tag in tags):
            if surf.part_index is None:
                # a matched body claims the whole object, parts included
                matched.update(
                    s.surface_id for s in world._surfaces if s.prim_index == surf.prim_index
                )
            else:
                matched.add(surf.surface_id)
    return matched


def render_oracle_mask(world: SimWorld, q, prompt: str) -> ProbabilityMap:
    """Binary silhouette of the prompt-matched primitives/parts.

    No match yields an all-zero map; the composer reports the shortfall
    downstream.
    """
    _, ids = render_buffers(world, q)
    matched = matched_surface_ids(world, prompt)
    if not matched:
        return ProbabilityMap(np.zeros(ids.shape, dtype=np.float32))
    mask = np.isin(ids, sorted(matched)).astype(np.float32)
    return ProbabilityMap(mask)


def encode_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.astype(np.uint8).tobytes()


# ---------------------------------------------------------------------------
# scene files


def _take(d: dict, allowed, context: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise SceneFormatError(f"{context}: unknown fields {sorted(unknown)}")


def _require(d: dict, key: str, context: str):
    if key not in d:
        raise SceneFormatError(f"{context}: missing field {key!r}")
    return d[key]


def _parse_transform(d: dict, context: str) -> np.ndarray:
    _take(d, {"translation", "rotation_rpy"}, context)
    translation = d.get("translation", (0.0, 0.0, 0.0))
    rotation = d.get("rotation_rpy", (0.0, 0.0, 0.0))
    if len(translation) != 3 or len(rotation) != 3:
        raise SceneFormatError(f"{context}: translation/rotation_rpy must have 3 entries")
    return make_transform(translation, rotation)


def _parse_shape(d: dict, context: str):
    kind = _require(d, "type", context)
    if kind == "sphere":
        _take(d, {"type", "radius"}, context)
        return Sphere(radius=float(_require(d, "radius", context)))
    if kind == "box":
        _take(d, {"type", "extents"}, context)
        extents = _require(d, "extents", context)
        if len(extents) != 3:
            raise SceneFormatError(f"{context}: box extents must have 3 entries")
        return Box(extents=tuple(float(e) for e in extents))
    if kind == "cylinder":
        _take(d, {"type", "radius", "height"}, context)
        return Cylinder(
            radius=float(_require(d, "radius", context)),
            height=float(_require(d, "height", context)),
        )
    raise SceneFormatError(f"{context}: unknown shape type {kind!r}")


def _parse_tags(items, context: str) -> Tuple[PromptTag, ...]:
    tags = []
    for i, item in enumerate(items):
        ctx = f"{context}.prompt_tags[{i}]"
        _take(item, {"text", "category"}, ctx)
        try:
            tag = PromptTag(
                text=_require(item, "text", context),
                category=_require(item, "category", context),
            )
        except ValueError as exc:
            raise SceneFormatError(f"{ctx}: {exc}") from exc
        tags.append(tag)
    return tuple(tags)


def load_scene_dict(doc: dict) -> SimWorld:
    _take(doc, {"camera", "chain", "primitives", "background"}, "scene")

    cam_doc = _require(doc, "camera", "scene")
    _take(cam_doc, {"intrinsics", "mount_transform", "resolution"}, "camera")
    intr = _require(cam_doc, "intrinsics", "camera")
    _take(intr, {"fx", "fy", "cx", "cy"}, "camera.intrinsics")
    resolution = _require(cam_doc, "resolution", "camera")
    if len(resolution) != 2:
        raise SceneFormatError("camera.resolution must be [width, height]")
    camera = EyeInHandCamera(
        fx=float(_require(intr, "fx", "camera.intrinsics")),
        fy=float(_require(intr, "fy", "camera.intrinsics")),
        cx=float(_require(intr, "cx", "camera.intrinsics")),
        cy=float(_require(intr, "cy", "camera.intrinsics")),
        width=int(resolution[0]),
        height=int(resolution[1]),
        mount_transform=_parse_transform(
            cam_doc.get("mount_transform", {}), "camera.mount_transform"
        ),
    )

    chain_doc = _require(doc, "chain", "scene")
    _take(chain_doc, {"joints", "controlled_indices", "tool_offset", "home_q"}, "chain")
    joints = []
    for i, jd in enumerate(_require(chain_doc, "joints", "chain")):
        ctx = f"chain.joints[{i}]"
        _take(jd, {"axis", "origin_offset", "limits"}, ctx)
        limits = _require(jd, "limits", ctx)
        try:
            joint = Joint(
                axis=_require(jd, "axis", ctx),
                origin_offset=_require(jd, "origin_offset", ctx),
                limits=(float(limits[0]), float(limits[1])),
            )
        except (ValueError, TypeError) as exc:
            raise SceneFormatError(f"{ctx}: {exc}") from exc
        joints.append(joint)
    try:
        chain = KinematicChain(
            joints=tuple(joints),
            controlled_indices=tuple(_require(chain_doc, "controlled_indices", "chain")),
            tool_offset=np.asarray(chain_doc.get("tool_offset", (0.0, 0.0, 0.0)), dtype=np.float64),
        )
    except (ValueError, TypeError) as exc:
        raise SceneFormatError(f"chain: {exc}") from exc

    primitives = []
    for i, pd in enumerate(_require(doc, "primitives", "scene")):
        ctx = f"primitives[{i}]"
        _take(pd, {"shape", "pose", "prompt_tags", "parts", "color", "name"}, ctx)
        parts = []
        for k, part_doc in enumerate(pd.get("parts", [])):
            part_ctx = f"{ctx}.parts[{k}]"
            _take(part_doc, {"shape", "pose", "prompt_tags", "name"}, part_ctx)
            parts.append(
                PartRegion(
                    shape=_parse_shape(_require(part_doc, "shape", part_ctx), part_ctx),
                    pose=_parse_transform(part_doc.get("pose", {}), part_ctx),
                    prompt_tags=_parse_tags(
                        _require(part_doc, "prompt_tags", part_ctx), part_ctx
                    ),
                    name=part_doc.get("name", ""),
                )
            )
        color = pd.get("color")
        primitives.append(
            ScenePrimitive(
                shape=_parse_shape(_require(pd, "shape", ctx), ctx),
                pose=_parse_transform(pd.get("pose", {}), ctx),
                prompt_tags=_parse_tags(_require(pd, "prompt_tags", ctx), ctx),
                parts=tuple(parts),
                color=tuple(int(c) for c in color) if color else None,
                name=pd.get("name", ""),
            )
        )

    background = doc.get("background", (24, 24, 28))
    home_q = chain_doc.get("home_q")
    try:
        world = SimWorld(
            camera=camera,
            chain=chain,
            primitives=primitives,
            q=np.asarray(home_q, dtype=np.float64) if home_q is not None else None,
            background=tuple(int(c) for c in background),
        )
    except (ValueError, TypeError) as exc:
        raise SceneFormatError(f"scene: {exc}") from exc
    return world


def load_scene(path) -> SimWorld:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SceneFormatError(f"{path}: top level must be an object")
    return load_scene_dict(doc)


def _transform_to_dict(T: np.ndarray) -> dict:
    R = T[:3, :3]
    # inverse of Rz(yaw) @ Ry(pitch) @ Rx(roll)
    pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    if abs(R[2, 0]) < 1.0 - 1e-9:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    else:
        roll = math.atan2(-R[1, 2], R[1, 1])
        yaw = 0.0
    return {
        "translation": [float(x) for x in T[:3, 3]],
        "rotation_rpy": [roll, pitch, yaw],
    }


def _shape_to_dict(shape) -> dict:
    if isinstance(shape, Sphere):
        return {"type": "sphere", "radius": shape.radius}
    if isinstance(shape, Box):
        return {"type": "box", "extents": list(shape.extents)}
    if isinstance(shape, Cylinder):
        return {"type": "cylinder", "radius": shape.radius, "height": shape.height}
    raise TypeError(f"unknown shape {type(shape).__name__}")


def _tags_to_list(tags) -> list:
    return [{"text": t.text, "category": t.category} for t in tags]


def scene_to_dict(world: SimWorld) -> dict:
    cam = world.camera
    doc = {
        "camera": {
            "intrinsics": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy},
            "resolution": [cam.width, cam.height],
            "mount_transform": _transform_to_dict(cam.mount_transform),
        },
        "chain": {
            "joints": [
                {
                    "axis": [float(x) for x in j.axis],
                    "origin_offset": [float(x) for x in j.origin_offset],
                    "limits": [j.limits[0], j.limits[1]],
                }
                for j in world.chain.joints
            ],
            "controlled_indices": list(world.chain.controlled_indices),
            "tool_offset": [float(x) for x in world.chain.tool_offset],
            "home_q": [float(x) for x in world.q],
        },
        "primitives": [],
        "background": list(world.background),
    }
    for prim in world.primitives:
        pd = {
            "shape": _shape_to_dict(prim.shape),
            "pose": _transform_to_dict(prim.pose),
            "prompt_tags": _tags_to_list(prim.prompt_tags),
        }
        if prim.parts:
            pd["parts"] = [
                {
                    "shape": _shape_to_dict(part.shape),
                    "pose": _transform_to_dict(part.pose),
                    "prompt_tags": _tags_to_list(part.prompt_tags),
                    "name": part.name,
                }
                for part in prim.parts
            ]
        if prim.color:
            pd["color"] = list(prim.color)
        if prim.name:
            pd["name"] = prim.name
        doc["primitives"].append(pd)
    return doc


def save_scene(world: SimWorld, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(world), indent=2) + "\n")
