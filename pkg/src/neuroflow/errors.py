"""Exception hierarchy shared across the package."""

from __future__ import annotations


class NeuroFlowError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(NeuroFlowError):
    """A scenario, catalog or file could not be resolved or parsed."""


class GraphError(NeuroFlowError):
    pass


class DuplicateNodeId(GraphError):
    pass


class UnknownEdgeEndpoint(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class CycleDetected(GraphError):
    """The dataflow graph is not acyclic.

    ``nodes`` lists the ids that lie on at least one cycle, sorted.
    """

    def __init__(self, nodes):
        self.nodes = tuple(sorted(nodes))
        super().__init__(f"cycle through nodes: {', '.join(self.nodes)}")


class NonPositiveDimension(NeuroFlowError):
    pass


class UnknownPair(NeuroFlowError):
    """No base latency is configured for a (model, platform) pair."""


class MemoryOvercommit(NeuroFlowError):
    """Tasks on a platform need more memory than it has. Always a scheduler bug."""


class EmptyDataset(NeuroFlowError):
    pass


class DegenerateLabels(NeuroFlowError):
    pass


class ZeroTarget(NeuroFlowError):
    pass


class MissingSnapshot(NeuroFlowError):
    pass


class UnknownPlatform(NeuroFlowError):
    pass


class DimensionMismatch(NeuroFlowError):
    pass


class BudgetExceeded(NeuroFlowError):
    """Serialized predictor parameters exceed the size budget."""


class PredictorUnavailable(NeuroFlowError):
    pass


class NiceOutOfRange(NeuroFlowError):
    pass


class UnknownSubgraph(NeuroFlowError):
    pass
