"""Exception vocabulary shared across the package.

Every failure mode that callers are expected to catch gets its own class so
that tests and the CLI can dispatch on type rather than on message text.
"""


class LyapboundError(Exception):
    """Base class for all package-specific errors."""


# ---------------------------------------------------------------------------
# linear algebra kernel
# ---------------------------------------------------------------------------

class NotSpd(LyapboundError):
    """Matrix expected to be symmetric positive definite is not."""


# ---------------------------------------------------------------------------
# dynamical systems / integration
# ---------------------------------------------------------------------------

class Overflow(LyapboundError):
    """Iterated map state left the admissible range."""


class NoRealFixedPoint(LyapboundError):
    """Fixed-point equation has no real solution for these parameters."""


class StepFailure(LyapboundError):
    """Adaptive integrator could not achieve the error tolerance."""


class NonFinite(LyapboundError):
    """NaN or infinity appeared in a trajectory or variational state."""


class NoConvergence(LyapboundError):
    """Iterative refinement exceeded its iteration budget."""


class SingularJacobian(LyapboundError):
    """Newton system is numerically singular."""


class ComplexEquilibria(LyapboundError):
    """Equilibrium branch is complex-valued for these parameters."""


# ---------------------------------------------------------------------------
# metric families
# ---------------------------------------------------------------------------

class DimMismatch(LyapboundError):
    """Input dimension does not match the metric family."""


class NotAGroup(LyapboundError):
    """Matrix set is not closed under multiplication/inverse."""


class NoRealLogarithm(LyapboundError):
    """Monodromy matrix admits no real logarithm."""


class IllConditioned(LyapboundError):
    """Condition-number monitor tripped during metric construction."""


class NotASymmetry(LyapboundError):
    """Candidate map does not conjugate the system/orbit as claimed."""


class FamilyMismatch(LyapboundError):
    """Serialized parameters belong to a differently-shaped family."""


# ---------------------------------------------------------------------------
# coverings and symbolic images
# ---------------------------------------------------------------------------

class TooManyCubes(LyapboundError):
    """Covering would exceed the hard cube cap."""


class EscapedDomain(LyapboundError):
    """Image points left the covering box (strict mode)."""


class EmptyGraph(LyapboundError):
    """Graph has no vertices/edges left."""


class NotEdgePreserving(LyapboundError):
    """Vertex permutation does not map the edge set onto itself."""


class GridMismatch(LyapboundError):
    """Linear map does not act on the cube grid."""


class InvarianceViolation(LyapboundError):
    """Quantity expected to be constant on group orbits is not."""


class VersionMismatch(LyapboundError):
    """Graph file version is not supported."""


class ChecksumError(LyapboundError):
    """Graph file checksum does not match its contents."""


# ---------------------------------------------------------------------------
# weights / optimization
# ---------------------------------------------------------------------------

class OptimFailure(LyapboundError):
    """Per-cube maximization failed beyond the tolerated fraction."""


class DifferentiationFailure(LyapboundError):
    """A gradient evaluation returned non-finite values."""


class NoPath(LyapboundError):
    """No admissible path of the requested length exists."""


class BadBounds(LyapboundError):
    """Bisection bracket endpoints do not straddle the target."""


class NoCycleFound(LyapboundError):
    """Path contains no repeated vertex."""


class TooLarge(LyapboundError):
    """Problem size exceeds the brute-force guard."""


class BracketError(LyapboundError):
    """Dimension-search bracket does not contain a sign change."""


# ---------------------------------------------------------------------------
# CLI / configuration
# ---------------------------------------------------------------------------

class ConfigError(LyapboundError):
    """Run configuration is malformed or inconsistent."""
