"""Session orchestration: the perception-to-control loop and the batch runner.

One session drives one world: perceive a probability map, compose the
requested constraints, servo one step, repeat until the residual converges,
diverges, times out on perception, hits the step cap, or is aborted. The
batch runner replays a task manifest with up to three attempts per task and
aggregates per-category success rates.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .composer import IllDefinedLine, TooFewCandidates, compose_from_map
from .controller import (
    ControllerConfig,
    ServoState,
    ServoStatus,
    SingularInitialization,
    TraceStep,
    initialize_jacobian,
    servo_step,
    trace_to_jsonl,
)
from .geometry import ConstraintKind, stack_residuals
from .providers import (
    DEFAULT_CORRUPTION,
    CorruptionConfig,
    OracleProvider,
    CorruptedProvider,
    RemoteProvider,
    SegmentationProvider,
)
from .simworld import SimWorld, apply_joint_command, forward_kinematics, load_scene, render_view

MAX_ATTEMPTS = 3

TASK_CATEGORIES = ("Food", "MarkerPen", "Utility", "Custom")


class SessionOutcome(enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    PERCEPTION_TIMEOUT = "PerceptionTimeout"
    STEP_LIMIT = "StepLimit"
    ABORTED = "Aborted"


class PerceptionTimeout(RuntimeError):
    """Composition failed on this many consecutive frames; pose was held."""


class ManifestParseError(ValueError):
    pass


@dataclass
class SessionConfig:
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    probe_delta: float = 0.02
    max_steps: int = 500
    perception_hold_frames: int = 10
    grasp_radius: float = 0.03
    seed: int = 0
    corruption: Optional[CorruptionConfig] = None
    score_weighted: bool = False
    projected_extreme_endpoints: bool = False
    stack_line_terms: bool = False

    def __post_init__(self):
        if self.probe_delta <= 0:
            raise ValueError("probe_delta must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.perception_hold_frames < 1:
            raise ValueError("perception_hold_frames must be >= 1")
        if self.grasp_radius <= 0:
            raise ValueError("grasp_radius must be > 0")


@dataclass
class SessionResult:
    outcome: SessionOutcome
    trace: List[TraceStep]
    steps: int
    final_error_norm: Optional[float]
    grasp_success: bool
    reinit_count: int
    frames: int
    prompt: str
    kinds: Tuple[ConstraintKind, ...]

    def trace_jsonl(self) -> str:
        return trace_to_jsonl(self.trace)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "steps": self.steps,
            "final_error_norm": self.final_error_norm,
            "grasp_success": self.grasp_success,
            "reinit_count": self.reinit_count,
            "frames": self.frames,
            "prompt": self.prompt,
            "kinds": [k.value for k in self.kinds],
        }


def constraints_overlay(constraints) -> dict:
    """Pixel-space geometry of the composed constraints, for display."""
    points = []
    lines = []
    for con in constraints:
        for pt in con.points:
            points.append([float(pt.u), float(pt.v)])
        for ln in con.lines:
            lines.append([float(ln.a), float(ln.b), float(ln.c)])
    return {"points": points, "lines": lines}


def resolve_provider(
    provider: Union[str, SegmentationProvider],
    world: SimWorld,
    cfg: SessionConfig,
) -> SegmentationProvider:
    """Accepts a provider instance or a spec string:
    'oracle', 'corrupt', or 'remote:HOST:PORT'."""
    if not isinstance(provider, str):
        return provider
    if provider == "oracle":
        return OracleProvider(world)
    if provider == "corrupt":
        corruption = cfg.corruption or dataclasses.replace(
            DEFAULT_CORRUPTION, seed=cfg.seed
        )
        return CorruptedProvider(OracleProvider(world), corruption)
    if provider.startswith("remote:"):
        parts = provider.split(":")
        if len(parts) != 3:
            raise ValueError(f"remote provider spec must be remote:HOST:PORT, got {provider!r}")
        return RemoteProvider(parts[1], int(parts[2]))
    raise ValueError(f"unknown provider spec {provider!r}")


def _parse_kinds(kinds) -> Tuple[ConstraintKind, ...]:
    if isinstance(kinds, (str, ConstraintKind)):
        kinds = [kinds]
    parsed = tuple(
        k if isinstance(k, ConstraintKind) else ConstraintKind.parse(k) for k in kinds
    )
    if not parsed:
        raise ValueError("at least one constraint kind is required")
    return parsed


def run_session(
    scene: Union[SimWorld, str, Path],
    prompt: str,
    kinds,
    provider: Union[str, SegmentationProvider] = "oracle",
    cfg: Optional[SessionConfig] = None,
    abort_event: Optional[threading.Event] = None,
    on_step: Optional[Callable[[TraceStep, dict, ServoState], None]] = None,
) -> SessionResult:
    """One servo attempt: compose, probe a Jacobian, loop until terminal.

    Perception failures (too few candidates, no dominant axis) hold the pose
    and retry; perception_hold_frames consecutive failures end the attempt
    with PerceptionTimeout. The first divergence triggers one Jacobian
    re-initialization; the second is final.
    """
    cfg = cfg or SessionConfig()
    world = scene if isinstance(scene, SimWorld) else load_scene(scene)
    kinds = _parse_kinds(kinds)
    prov = resolve_provider(provider, world, cfg)

    frame_count = 0
    last_overlay: dict = {"points": [], "lines": []}

    def perceive(qc: np.ndarray):
        nonlocal frame_count, last_overlay
        world.set_controlled(qc)
        image = render_view(world, world.q)
        failures = 0
        while True:
            frame_count += 1
            probmap = prov.segment(image, prompt)
            try:
                constraints = compose_from_map(
                    probmap,
                    kinds,
                    score_weighted=cfg.score_weighted,
                    projected_extreme_endpoints=cfg.projected_extreme_endpoints,
                    stack_line_terms=cfg.stack_line_terms,
                )
            except (TooFewCandidates, IllDefinedLine) as exc:
                failures += 1
                if failures >= cfg.perception_hold_frames:
                    raise PerceptionTimeout(
                        f"composition failed on {failures} consecutive frames: {exc}"
                    ) from exc
                continue
            last_overlay = constraints_overlay(constraints)
            return stack_residuals(constraints)

    def finish(outcome: SessionOutcome, state: Optional[ServoState]) -> SessionResult:
        trace = state.history if state is not None else []
        final_norm = None
        if state is not None and state.e is not None:
            final_norm = float(np.linalg.norm(state.e))
        return SessionResult(
            outcome=outcome,
            trace=trace,
            steps=state.step_index if state is not None else 0,
            final_error_norm=final_norm,
            grasp_success=_grasp_success(world, prompt, outcome, cfg.grasp_radius),
            reinit_count=state.reinit_count if state is not None else 0,
            frames=frame_count,
            prompt=prompt,
            kinds=kinds,
        )

    home = world.controlled_q.copy()
    try:
        J = initialize_jacobian(cfg.probe_delta, perceive, home)
    except PerceptionTimeout:
        return finish(SessionOutcome.PERCEPTION_TIMEOUT, None)
    except SingularInitialization:
        return finish(SessionOutcome.DIVERGED, None)

    state = ServoState(q=home.copy(), J=J)

    while True:
        if abort_event is not None and abort_event.is_set():
            state.status = ServoStatus.ABORTED
            return finish(SessionOutcome.ABORTED, state)
        if state.step_index >= cfg.max_steps:
            return finish(SessionOutcome.STEP_LIMIT, state)
        try:
            residual = perceive(state.q)
        except PerceptionTimeout:
            return finish(SessionOutcome.PERCEPTION_TIMEOUT, state)

        servo_step(state, residual, cfg.controller)
        apply_joint_command(world, state.last_dq)
        if world.last_command_clamped:
            # the world is authoritative; the next Broyden update must see
            # the joint motion that actually happened
            state.q = world.controlled_q.copy()
            state.last_dq = world.last_applied_dq.copy()

        if on_step is not None:
            on_step(state.history[-1], dict(last_overlay), state)

        if state.status is ServoStatus.CONVERGED:
            return finish(SessionOutcome.CONVERGED, state)
        if state.status is ServoStatus.DIVERGED:
            if state.reinit_count > 0:
                return finish(SessionOutcome.DIVERGED, state)
            try:
                J2 = initialize_jacobian(cfg.probe_delta, perceive, state.q)
            except PerceptionTimeout:
                return finish(SessionOutcome.PERCEPTION_TIMEOUT, state)
            except SingularInitialization:
                return finish(SessionOutcome.DIVERGED, state)
            state.resume_with_jacobian(J2)


def _grasp_success(
    world: SimWorld, prompt: str, outcome: SessionOutcome, radius: float
) -> bool:
    """Converged and the tool frame sits within the grasp radius of the
    matched primitive's centroid. Stands in for physical grasping."""
    if outcome is not SessionOutcome.CONVERGED:
        return False
    target = world.find_primitive(prompt)
    if target is None:
        return False
    effector = forward_kinematics(world.chain, world.q)[:3, 3]
    return bool(np.linalg.norm(effector - target.centroid) <= radius)


# ---------------------------------------------------------------------------
# batch runner


@dataclass(frozen=True)
class TaskSpec:
    name: str
    scene: Path
    prompt: str
    kinds: Tuple[ConstraintKind, ...]
    category: str


@dataclass
class TaskRecord:
    name: str
    category: str
    attempts: int
    success: bool
    outcome: SessionOutcome
    steps: int
    final_error_norm: Optional[float]

    def __post_init__(self):
        if self.success and self.attempts > MAX_ATTEMPTS:
            raise ValueError("success with more than the allowed attempts")


_MANIFEST_FIELDS = {"name", "scene", "prompt", "kinds", "category"}


def parse_manifest(path: Union[str, Path]) -> List[TaskSpec]:
    """JSONL, one task per line: {name, scene, prompt, kinds, category}.
    Scene paths are resolved relative to the manifest's directory."""
    path = Path(path)
    base = path.parent
    tasks = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"line {lineno}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ManifestParseError(f"line {lineno}: task must be a JSON object")
        unknown = set(doc) - _MANIFEST_FIELDS
        if unknown:
            raise ManifestParseError(f"line {lineno}: unknown fields {sorted(unknown)}")
        missing = _MANIFEST_FIELDS - set(doc)
        if missing:
            raise ManifestParseError(f"line {lineno}: missing fields {sorted(missing)}")
        if doc["category"] not in TASK_CATEGORIES:
            raise ManifestParseError(
                f"line {lineno}: category {doc['category']!r} not one of {TASK_CATEGORIES}"
            )
        try:
            kinds = _parse_kinds(doc["kinds"])
        except ValueError as exc:
            raise ManifestParseError(f"line {lineno}: {exc}") from exc
        scene_path = Path(doc["scene"])
        if not scene_path.is_absolute():
            scene_path = base / scene_path
        tasks.append(
            TaskSpec(
                name=str(doc["name"]),
                scene=scene_path,
                prompt=str(doc["prompt"]),
                kinds=kinds,
                category=str(doc["category"]),
            )
        )
    return tasks


@dataclass
class BatchReport:
    records: List[TaskRecord]

    def category_stats(self) -> dict:
        stats: dict = {}
        for rec in self.records:
            entry = stats.setdefault(rec.category, {"tasks": 0, "successes": 0})
            entry["tasks"] += 1
            entry["successes"] += int(rec.success)
        for entry in stats.values():
            entry["rate"] = entry["successes"] / entry["tasks"]
        return stats

    def overall(self) -> dict:
        tasks = len(self.records)
        successes = sum(int(r.success) for r in self.records)
        return {
            "tasks": tasks,
            "successes": successes,
            "rate": successes / tasks if tasks else 0.0,
        }

    def to_csv(self) -> str:
        lines = ["category,tasks,successes,rate"]
        for category, entry in sorted(self.category_stats().items()):
            lines.append(
                f"{category},{entry['tasks']},{entry['successes']},{entry['rate']:.4f}"
            )
        overall = self.overall()
        lines.append(
            f"overall,{overall['tasks']},{overall['successes']},{overall['rate']:.4f}"
        )
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "tasks": [
                    {
                        "name": r.name,
                        "category": r.category,
                        "attempts": r.attempts,
                        "success": r.success,
                        "outcome": r.outcome.value,
                        "steps": r.steps,
                        "final_error_norm": r.final_error_norm,
                    }
                    for r in self.records
                ],
                "categories": self.category_stats(),
                "overall": self.overall(),
            },
            indent=2,
        )


def run_batch(
    manifest: Union[str, Path],
    provider: str = "oracle",
    cfg: Optional[SessionConfig] = None,
    max_attempts: int = MAX_ATTEMPTS,
) -> BatchReport:
    """Runs every manifest task with up to max_attempts fresh attempts.

    Each attempt reloads the scene (the world returns to its home pose) and,
    for the corrupting provider, shifts the noise seed so retries are not
    replays.
    """
    cfg = cfg or SessionConfig()
    tasks = parse_manifest(manifest)
    records = []
    for ti, task in enumerate(tasks):
        attempts = 0
        result: Optional[SessionResult] = None
        for attempt in range(max_attempts):
            attempts += 1
            attempt_cfg = _attempt_config(cfg, ti, attempt)
            result = run_session(
                load_scene(task.scene), task.prompt, task.kinds, provider, attempt_cfg
            )
            if result.grasp_success:
                break
        records.append(
            TaskRecord(
                name=task.name,
                category=task.category,
                attempts=attempts,
                success=result.grasp_success,
                outcome=result.outcome,
                steps=result.steps,
                final_error_norm=result.final_error_norm,
            )
        )
    return BatchReport(records)


def _attempt_config(cfg: SessionConfig, task_index: int, attempt_index: int) -> SessionConfig:
    shift = 1009 * task_index + attempt_index
    corruption = cfg.corruption
    if corruption is not None:
        corruption = dataclasses.replace(corruption, seed=corruption.seed + shift)
    return dataclasses.replace(cfg, seed=cfg.seed + shift, corruption=corruption)
