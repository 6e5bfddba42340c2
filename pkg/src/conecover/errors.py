"""Exception hierarchy shared by all conecover modules."""


class ConeCoverError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class SpecError(ConeCoverError):
    pass


class RowNotStochastic(SpecError):
    def __init__(self, vertex, total):
        self.vertex = vertex
        self.total = total
        super().__init__(f"RowNotStochastic: row of vertex {vertex!r} sums to {total!r}")


class BackwardProbOutOfRange(SpecError):
    def __init__(self, vertex, value, epsilon):
        self.vertex = vertex
        self.value = value
        self.epsilon = epsilon
        super().__init__(
            f"BackwardProbOutOfRange: p(-{vertex!r}) = {value!r} not in "
            f"({epsilon!r}, {1 - epsilon!r})"
        )


class MultiEdgeDetected(SpecError):
    def __init__(self, source, target):
        self.source = source
        self.target = target
        super().__init__(
            f"MultiEdgeDetected: parallel edges {source!r} -> {target!r}; "
            "run expand_multiedges first"
        )


class UnreachableVertex(SpecError):
    def __init__(self, vertex):
        self.vertex = vertex
        super().__init__(f"UnreachableVertex: {vertex!r} is not reachable from the root")


class UnknownVertex(ConeCoverError):
    def __init__(self, vertex):
        self.vertex = vertex
        super().__init__(f"UnknownVertex: {vertex!r}")


class GeneratorFailure(ConeCoverError):
    def __init__(self, vertex, reason):
        self.vertex = vertex
        super().__init__(f"GeneratorFailure at {vertex!r}: {reason}")


class UnboundedGeometry(ConeCoverError):
    pass


# spectral
class ZeroMatrix(ConeCoverError):
    pass


class NonConvergence(ConeCoverError):
    def __init__(self, max_iters, last_estimates=None):
        self.max_iters = max_iters
        self.last_estimates = last_estimates
        super().__init__(
            f"NonConvergence after {max_iters} iterations (last estimates {last_estimates})"
        )


class NonPositiveTestFunction(ConeCoverError):
    def __init__(self, vertex, value):
        self.vertex = vertex
        super().__init__(f"NonPositiveTestFunction: f({vertex!r}) = {value!r}")


class BudgetExceeded(ConeCoverError):
    def __init__(self, n_reached, partial):
        self.n_reached = n_reached
        self.partial = partial
        super().__init__(
            f"BudgetExceeded: label support too large at level {n_reached}"
        )


class SingularCollapse(ConeCoverError):
    pass


# walks
class NotTransientEnough(ConeCoverError):
    def __init__(self, escape_fraction, threshold):
        self.escape_fraction = escape_fraction
        super().__init__(
            f"NotTransientEnough: escape fraction {escape_fraction:.4g} <= {threshold}"
        )


# generating functions
class MaxIterExceeded(ConeCoverError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"MaxIterExceeded: residual {residual:.3g}")


class TruncationRequired(ConeCoverError):
    pass


class SingularSystem(ConeCoverError):
    pass


class RecurrentType(ConeCoverError):
    def __init__(self, vertex):
        self.vertex = vertex
        super().__init__(f"RecurrentType: F(-{vertex!r}) = 1, exit chain undefined")


class Reducible(ConeCoverError):
    def __init__(self, classes):
        self.classes = classes
        super().__init__(f"Reducible: closed classes {classes}")
