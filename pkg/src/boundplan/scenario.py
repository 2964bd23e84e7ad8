"""Scenario files: JSON schema, validation and conversion to runtime objects.

Poses are stored as a position plus a unit quaternion in ``(w, x, y, z)``
order. Obstacles are either explicit vertex lists or axis-aligned boxes
given by ``min``/``max`` corners; both forms are kept as written so a
parse/serialize round trip reproduces the file exactly.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .geometry import ConvexBody, quat_to_matrix
from .inflation import InflationConfig, Workspace
from .planner import EndEffectorModel, PlanRequest
from .set_graph import CostParams
from .tracker import CollisionPoint, GoalChange, TrackerConfig

SCHEMA_VERSION = 1

Vec3 = List[float]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScenarioError(ValueError):
    """Input problem with a scenario file; ``where`` names the line or field."""

    def __init__(self, where, message):
        super().__init__(f"{where}: {message}")
        self.where = where


def _vec3(v):
    if len(v) != 3 or not all(np.isfinite(v)):
        raise ValueError("expected 3 finite numbers")
    return v


class Box(_Model):
    min: Vec3
    max: Vec3

    @field_validator("min", "max")
    @classmethod
    def _corner(cls, v):
        return _vec3(v)

    @model_validator(mode="after")
    def _ordered(self):
        if not all(a < b for a, b in zip(self.min, self.max)):
            raise ValueError("box min must be strictly below max on every axis")
        return self


class Pose(_Model):
    position: Vec3
    quaternion: List[float] = Field(description="unit quaternion (w, x, y, z)")

    @field_validator("position")
    @classmethod
    def _pos(cls, v):
        return _vec3(v)

    @field_validator("quaternion")
    @classmethod
    def _unit(cls, q):
        if len(q) != 4 or not all(np.isfinite(q)):
            raise ValueError("quaternion needs 4 finite numbers (w, x, y, z)")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion must be unit norm within 1e-6, got norm {n:.9g}")
        return q

    @property
    def p(self):
        return np.asarray(self.position, dtype=float)

    @property
    def R(self):
        return quat_to_matrix(np.asarray(self.quaternion, dtype=float))


class Obstacle(_Model):
    name: str
    vertices: Optional[List[Vec3]] = None
    box: Optional[Box] = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.vertices is None) == (self.box is None):
            raise ValueError("give exactly one of 'vertices' or 'box'")
        if self.vertices is not None:
            if not self.vertices:
                raise ValueError("vertex list is empty")
            for v in self.vertices:
                _vec3(v)
        return self

    def body(self) -> ConvexBody:
        if self.box is not None:
            return ConvexBody.box(self.box.min, self.box.max)
        return ConvexBody(self.vertices)


class EndEffector(_Model):
    hull_offsets: Optional[List[Vec3]] = None
    box_half_extents: Optional[Vec3] = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.hull_offsets is None) == (self.box_half_extents is None):
            raise ValueError("give exactly one of 'hull_offsets' or 'box_half_extents'")
        if self.box_half_extents is not None and not all(h >= 0 for h in self.box_half_extents):
            raise ValueError("half extents must be non-negative")
        return self

    def model(self) -> EndEffectorModel:
        if self.box_half_extents is not None:
            return EndEffectorModel.box(self.box_half_extents)
        return EndEffectorModel(tuple(map(tuple, self.hull_offsets)))


class CollisionPointSpec(_Model):
    name: str
    offset: Vec3
    margin: float = Field(0.0, ge=0.0)


class PlannerParams(_Model):
    c_bias: float = Field(0.1, gt=0)
    w_size: float = Field(0.5, gt=0, le=1)
    w_alpha: float = Field(1.0, gt=0)
    sample_budget: int = Field(200, ge=0)
    rng_seed: int = 0
    position_only: bool = False
    smooth: bool = True
    max_iterations: int = Field(10, ge=1)
    volume_rel_tol: float = Field(1e-2, gt=0)
    obstacle_margin: float = Field(0.0, ge=0)


class TrackerParams(_Model):
    horizon_steps: int = Field(20, ge=2)
    dt: float = Field(0.05, gt=0)
    v_max: float = Field(0.5, gt=0)
    a_max: float = Field(2.0, gt=0)
    eps_phi: float = Field(0.02, ge=0)
    progress_weight: float = Field(1.0, ge=0)
    deviation_weight: float = Field(100.0, gt=0)
    t_max: Optional[float] = Field(None, gt=0)


class ReplanEvent(_Model):
    name: str
    time: Optional[float] = Field(None, ge=0)
    phi: Optional[float] = None
    goal: Pose

    @model_validator(mode="after")
    def _one_trigger(self):
        if (self.time is None) == (self.phi is None):
            raise ValueError("give exactly one trigger, 'time' or 'phi'")
        return self


class Scenario(_Model):
    schema_version: int
    name: str
    domain: Box
    obstacles: List[Obstacle] = []
    start: Pose
    goal: Pose
    end_effector: EndEffector
    collision_points: List[CollisionPointSpec] = []
    planner: PlannerParams = PlannerParams()
    tracker: TrackerParams = TrackerParams()
    replan_events: List[ReplanEvent] = []

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v

    @model_validator(mode="after")
    def _unique_names(self):
        for label, items in (("obstacles", self.obstacles), ("collision_points", self.collision_points),
                             ("replan_events", self.replan_events)):
            names = [x.name for x in items]
            dup = sorted({n for n in names if names.count(n) > 1})
            if dup:
                raise ValueError(f"duplicate names in {label}: {', '.join(dup)}")
        return self

    # -- runtime objects ------------------------------------------------------
    def workspace(self) -> Workspace:
        return Workspace.box(self.domain.min, self.domain.max, [o.body() for o in self.obstacles])

    def plan_request(self, seed: int | None = None, position_only: bool | None = None) -> PlanRequest:
        pp = self.planner
        return PlanRequest(
            p0=self.start.p, R0=self.start.R, pf=self.goal.p, Rf=self.goal.R,
            workspace=self.workspace(), ee=self.end_effector.model(),
            cost_params=CostParams(pp.c_bias, pp.w_size),
            inflation=InflationConfig(pp.max_iterations, pp.volume_rel_tol, pp.obstacle_margin),
            rng_seed=pp.rng_seed if seed is None else int(seed), sample_budget=pp.sample_budget,
            w_alpha=pp.w_alpha, position_only=pp.position_only if position_only is None else position_only,
            smooth=pp.smooth)

    def tracker_config(self) -> TrackerConfig:
        t = self.tracker
        return TrackerConfig(t.horizon_steps, t.dt, t.v_max, t.a_max, t.eps_phi, t.progress_weight,
                             t.deviation_weight)

    def collision_point_models(self):
        return [CollisionPoint(tuple(c.offset), c.margin) for c in self.collision_points]

    def goal_changes(self):
        return [GoalChange(e.time, tuple(e.goal.position), tuple(map(tuple, e.goal.R.tolist())), phi=e.phi)
                for e in self.replan_events]


# --- files ----------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def dump_scenario(sc: Scenario) -> str:
    return canonical_json(sc.model_dump(mode="json", exclude_none=True))


def _loc(err):
    return ".".join(str(x) for x in err["loc"]) or "<root>"


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate; problems raise :class:`ScenarioError` naming the line or field."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as ex:
        raise ScenarioError(f"{source}:{ex.lineno}:{ex.colno}", ex.msg) from None
    try:
        return Scenario.model_validate(data)
    except ValidationError as ex:
        first = ex.errors()[0]
        msg = first["msg"].removeprefix("Value error, ")
        raise ScenarioError(f"{source}: field {_loc(first)}", msg) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as ex:
        raise ScenarioError(str(path), ex.strerror or str(ex)) from None
    return parse_scenario(text, str(path))


def bundled_dir() -> Path:
    return Path(__file__).resolve().parent / "scenarios"


def bundled(name: str) -> Scenario:
    return load_scenario(bundled_dir() / f"{name}.json")
