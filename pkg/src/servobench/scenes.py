"""Canonical worlds: a 4-joint arm with a wrist camera over a tabletop.

The camera hangs above the tool tip, tilted so the tip itself projects to
the effector anchor pixel (W/2, 4H/5). Driving a target's centroid to that
pixel therefore steers it onto the camera-to-tip ray, which is as close to
"reach toward it" as a pure image-space loop gets. Seeded scene generators
back the convergence suites and the bundled demo scenes.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from .simworld import (
    Box,
    Cylinder,
    EyeInHandCamera,
    Joint,
    KinematicChain,
    PartRegion,
    PromptTag,
    ScenePrimitive,
    SimWorld,
    Sphere,
    make_transform,
)

IMAGE_SIZE = 352
FOCAL_PX = 300.0
CAMERA_TILT_RAD = 0.70  # optical axis tilt forward from straight down
CAMERA_TIP_RANGE_M = 0.25  # tool tip distance along its anchor pixel ray


def default_camera(width: int = IMAGE_SIZE, height: int = IMAGE_SIZE) -> EyeInHandCamera:
    """Wrist camera tilted forward from straight-down by CAMERA_TILT_RAD.

    In the tool frame (x forward, z up at the home pose) the optical axis
    is (sin t, 0, -cos t) and image u runs along -y. The mount translation
    is solved so the tool tip projects exactly to the anchor pixel
    (W/2, 4H/5) at CAMERA_TIP_RANGE_M along the tip ray: a tilt-dominated
    image keeps v-motion tied to wrist pitch instead of pure descent.
    """
    cx, cy = width / 2.0, height / 2.0
    tip_slope = (0.8 * height - cy) / FOCAL_PX
    s, c = math.sin(CAMERA_TILT_RAD), math.cos(CAMERA_TILT_RAD)
    x_cam = np.array([0.0, -1.0, 0.0])
    z_cam = np.array([s, 0.0, -c])
    y_cam = np.cross(z_cam, x_cam)
    translation = -CAMERA_TIP_RANGE_M * (tip_slope * y_cam + z_cam)
    mount = np.eye(4)
    mount[:3, 0], mount[:3, 1], mount[:3, 2] = x_cam, y_cam, z_cam
    mount[:3, 3] = translation
    return EyeInHandCamera(
        fx=FOCAL_PX, fy=FOCAL_PX, cx=cx, cy=cy,
        width=width, height=height, mount_transform=mount,
    )


def default_chain() -> KinematicChain:
    """Pan, two pitches, and a wrist roll; all four controlled."""
    return KinematicChain(
        joints=(
            Joint(axis=(0, 0, 1), origin_offset=(0.0, 0.0, 0.40), limits=(-2.6, 2.6)),
            Joint(axis=(0, 1, 0), origin_offset=(0.0, 0.0, 0.10), limits=(-1.8, 1.8)),
            Joint(axis=(0, 1, 0), origin_offset=(0.30, 0.0, 0.0), limits=(-2.0, 2.0)),
            Joint(axis=(0, 0, 1), origin_offset=(0.25, 0.0, 0.0), limits=(-2.6, 2.6)),
        ),
        controlled_indices=(0, 1, 2, 3),
        tool_offset=(0.15, 0.0, 0.0),
    )


def _food_tags(name: str) -> Tuple[PromptTag, ...]:
    return (
        PromptTag(name, "ObjectOriented"),
        PromptTag(f"the edible {name} to pick up", "AffordanceEnriched"),
    )


def sphere_scene(
    ball_xy: Tuple[float, float],
    ball_radius: float = 0.04,
    home_q: Optional[Sequence[float]] = None,
    name: str = "orange",
    extra: Sequence[ScenePrimitive] = (),
) -> SimWorld:
    """One tagged sphere resting on the table plane z=0."""
    ball = ScenePrimitive(
        shape=Sphere(ball_radius),
        pose=make_transform((ball_xy[0], ball_xy[1], ball_radius)),
        prompt_tags=_food_tags(name),
        name=name,
    )
    world = SimWorld(
        camera=default_camera(),
        chain=default_chain(),
        primitives=[ball, *extra],
        q=np.asarray(home_q, dtype=np.float64) if home_q is not None else None,
    )
    return world


def tip_position(world: SimWorld, q: Optional[np.ndarray] = None) -> np.ndarray:
    return world.effector_pose(q)[:3, 3]


def random_sphere_scene(seed: int) -> SimWorld:
    """Seeded reachable-target scene for the convergence suites.

    The arm starts in a mild crouch; the ball lands in the camera's central
    field with tens of pixels of initial error, never hugging the frame
    border (probing must not push it out of view).
    """
    rng = np.random.default_rng([873213, seed])
    home_q = np.array(
        [
            rng.uniform(-0.15, 0.15),
            rng.uniform(0.25, 0.45),
            rng.uniform(-0.05, 0.15),
            rng.uniform(-0.2, 0.2),
        ]
    )
    world = sphere_scene((0.0, 0.0), home_q=home_q)  # placeholder target
    cam_pose = world.camera_pose()
    cam_pos, optical = cam_pose[:3, 3], cam_pose[:3, 2]
    # drop the ball near the optical axis' table intersection, jittered
    t = -cam_pos[2] / optical[2]
    look_at = cam_pos + t * optical
    radius = rng.uniform(0.03, 0.05)
    ball_xy = (
        look_at[0] + rng.uniform(-0.05, 0.05),
        look_at[1] + rng.uniform(-0.05, 0.05),
    )
    return sphere_scene(ball_xy, ball_radius=radius, home_q=home_q)


def close_sphere_scene(name: str = "orange") -> SimWorld:
    """Reach-and-grasp range: from this crouched home pose the converged
    tip sits within the default grasp radius of the ball."""
    return sphere_scene((0.52, 0.01), ball_radius=0.04, home_q=[0.0, 0.65, 0.0, 0.0], name=name)


def _marker_tags(color: str) -> Tuple[PromptTag, ...]:
    return (
        PromptTag(f"{color} marker pen", "ObjectOriented"),
        PromptTag(f"the {color} pen to write with", "AffordanceEnriched"),
    )


def marker_scene(
    center_xy: Tuple[float, float],
    yaw: float,
    color: str,
    home_q: Optional[Sequence[float]] = None,
) -> SimWorld:
    """A marker pen: a thin cylinder lying on the table, axis horizontal."""
    pen = ScenePrimitive(
        shape=Cylinder(radius=0.012, height=0.14),
        pose=make_transform(
            (center_xy[0], center_xy[1], 0.012), (0.0, math.pi / 2.0, yaw)
        ),
        prompt_tags=_marker_tags(color),
        name=f"{color}-marker",
    )
    return SimWorld(
        camera=default_camera(),
        chain=default_chain(),
        primitives=[pen],
        q=np.asarray(home_q, dtype=np.float64) if home_q is not None else None,
    )


def mug_scene(
    center_xy: Tuple[float, float],
    home_q: Optional[Sequence[float]] = None,
) -> SimWorld:
    """A mug stand-in: a cylinder body with a tagged handle part."""
    body = ScenePrimitive(
        shape=Cylinder(radius=0.045, height=0.10),
        pose=make_transform((center_xy[0], center_xy[1], 0.05)),
        prompt_tags=(
            PromptTag("blue mug", "ObjectOriented"),
            PromptTag("the mug of coffee to drink", "AffordanceEnriched"),
        ),
        parts=(
            PartRegion(
                shape=Box((0.02, 0.06, 0.07)),
                pose=make_transform((0.0, 0.075, 0.0)),
                prompt_tags=(
                    PromptTag("mug handle", "AffordanceEnriched"),
                    PromptTag("handle", "ObjectOriented"),
                ),
                name="handle",
            ),
        ),
        name="mug",
    )
    return SimWorld(
        camera=default_camera(),
        chain=default_chain(),
        primitives=[body],
        q=np.asarray(home_q, dtype=np.float64) if home_q is not None else None,
    )


def box_scene(
    center_xy: Tuple[float, float],
    extents: Tuple[float, float, float],
    name: str,
    yaw: float = 0.0,
    home_q: Optional[Sequence[float]] = None,
) -> SimWorld:
    block = ScenePrimitive(
        shape=Box(extents),
        pose=make_transform(
            (center_xy[0], center_xy[1], extents[2] / 2.0), (0.0, 0.0, yaw)
        ),
        prompt_tags=(
            PromptTag(name, "ObjectOriented"),
            PromptTag(f"the {name} to grab", "AffordanceEnriched"),
        ),
        name=name,
    )
    return SimWorld(
        camera=default_camera(),
        chain=default_chain(),
        primitives=[block],
        q=np.asarray(home_q, dtype=np.float64) if home_q is not None else None,
    )
