"""Bounded reference paths through convex free-space sets.

Geometry and set inflation build obstacle-free polytopes, the set graph and
planner connect start and goal through them, and the tracker follows the
resulting tunnel with a receding-horizon QP.
"""

from .errors import (BoundPlanError, BudgetExceeded, EmptySet, ExplorationSaturated, GoalInCollision,
                     HullInCollision, NoPath, PathInfeasible, PredictedCollision, SeedInCollision,
                     SeedNotInterior, SeedOutsideDomain, StartInCollision, TunnelViolation, Unbounded)
from .geometry import ConvexBody, ConvexPolytope, Ellipsoid, closest_points, geodesic, is_empty
from .inflation import InflationConfig, Workspace, inflate, mvie, set_convex_hull
from .path import ReferencePath, phi_min, smooth_corners
from .planner import EndEffectorModel, PlanRequest, plan
from .set_graph import CostParams, SetGraph, shortest_set_path
from .tracker import CollisionPoint, GoalChange, TrackerConfig, simulate, split_index, step
from .viapoints import optimize_path

__version__ = "0.1.0"
