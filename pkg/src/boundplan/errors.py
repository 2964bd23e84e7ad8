"""Exception hierarchy shared by all modules."""


class BoundPlanError(Exception):
    """Base class for planner, tracker and geometry failures."""

    code = "BoundPlanError"

    def __init__(self, message="", **details):
        super().__init__(message or self.code)
        self.details = details


class EmptySet(BoundPlanError):
    code = "EmptySet"


class Unbounded(BoundPlanError):
    code = "Unbounded"


class SeedNotInterior(BoundPlanError):
    code = "SeedNotInterior"


class SeedInCollision(BoundPlanError):
    code = "SeedInCollision"


class SeedOutsideDomain(BoundPlanError):
    code = "SeedOutsideDomain"


class HullInCollision(BoundPlanError):
    code = "HullInCollision"

    def __init__(self, obstacle_index, distance=None):
        super().__init__(
            f"hull intersects obstacle {obstacle_index}",
            obstacle_index=obstacle_index,
            distance=distance,
        )
        self.obstacle_index = obstacle_index


class StartInCollision(HullInCollision):
    code = "StartInCollision"


class GoalInCollision(HullInCollision):
    code = "GoalInCollision"


class NoPath(BoundPlanError):
    code = "NoPath"


class ExplorationSaturated(BoundPlanError):
    code = "ExplorationSaturated"


class BudgetExceeded(BoundPlanError):
    code = "BudgetExceeded"

    def __init__(self, message="", graph=None):
        super().__init__(message or "sample budget exceeded")
        self.graph = graph


class PathInfeasible(BoundPlanError):
    code = "PathInfeasible"

    def __init__(self, set_pair, message=""):
        super().__init__(message or f"end-effector cannot pass between sets {set_pair}")
        self.set_pair = set_pair


class TunnelViolation(BoundPlanError):
    code = "TunnelViolation"

    def __init__(self, step, violation):
        super().__init__(f"left the tunnel at step {step} by {violation:.3g} m")
        self.step = step
        self.violation = violation


class PredictedCollision(BoundPlanError):
    code = "PredictedCollision"
