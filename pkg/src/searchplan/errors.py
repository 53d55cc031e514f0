"""Exception types raised by the planning library."""


class PlanningError(Exception):
    """Base class for all library errors."""


class MapFormatError(PlanningError):
    """A map or prior file is malformed; the message names the offending field."""


class DegeneratePriorError(PlanningError):
    """A prior would have zero total mass after masking obstacles."""


class EmptySubgraphError(PlanningError):
    """An agent's restricted areas removed every usable node."""


class InvalidPoseError(PlanningError):
    """A sensor or agent pose lies inside an obstacle."""


class DeadEndError(PlanningError):
    """A path construction reached a node with no outgoing arcs."""


class InvalidPlanError(PlanningError):
    """A plan references unknown nodes or non-adjacent consecutive nodes."""


class EmptyAgentPriorError(PlanningError):
    """A preference split assigned zero mass to some agent; widen the areas."""


class InvalidSpecError(PlanningError):
    """A scenario specification is inconsistent (e.g. target on an obstacle)."""


class ProtocolError(PlanningError):
    """A session command arrived in a phase that does not permit it."""
