"""Exception types shared across the package."""


class HorolabError(Exception):
    """Base class for all package-specific failures."""


class IntegrationBlowupError(HorolabError):
    """Geodesic integration produced a non-finite state.

    Carries the last parameter value at which the state was still finite.
    """

    def __init__(self, last_valid_time: float):
        self.last_valid_time = last_valid_time
        super().__init__(
            f"geodesic integration blew up; last finite state at t={last_valid_time:.6g}"
        )


class DistanceConvergenceError(HorolabError):
    """Two-point distance refinement did not converge.

    ``best_value`` is the shortest polyline length found (a true upper
    bound); ``bound_gap`` is the last inter-refinement decrease.
    """

    def __init__(self, best_value: float, bound_gap: float):
        self.best_value = best_value
        self.bound_gap = bound_gap
        super().__init__(
            f"distance refinement stalled at {best_value:.9g} "
            f"(last refinement gain {bound_gap:.3g})"
        )


class DegeneratePlaneError(HorolabError):
    """Curvature was requested for a numerically degenerate 2-plane."""


class RhoViolationError(HorolabError):
    """A sampled pair had rho < distance beyond tolerance.

    This indicates a distance-solver failure, not a geometry failure:
    rho is a curve length, hence always >= the true distance.
    """

    def __init__(self, pair, gap: float):
        self.pair = pair
        self.gap = gap
        super().__init__(f"rho fell below distance by {gap:.3g} on pair {pair}")


class MeshBuildError(HorolabError):
    """Surface mesh construction produced an unusable graph."""


class TruncationError(HorolabError):
    """A ball radius exceeds the range certified by the mesh truncation."""

    def __init__(self, r: float, required_t_max: float, t_max: float):
        self.r = r
        self.required_t_max = required_t_max
        self.t_max = t_max
        super().__init__(
            f"radius {r:.4g} needs t_max >= {required_t_max:.4g} "
            f"but the mesh is truncated at {t_max:.4g}"
        )


class InsufficientDataError(HorolabError):
    """Not enough data points inside the requested fitting window."""


class SamplingError(HorolabError):
    """Level-set sampling failed at a lattice node."""

    def __init__(self, node, message: str):
        self.node = node
        super().__init__(f"sampling failed at node {node}: {message}")


class MatchingError(HorolabError):
    """Vertex matching between two meshes exceeded its distance budget."""


class WindowError(HorolabError):
    """Growth fits were requested on non-overlapping windows."""


class SandwichViolationError(HorolabError):
    """A mesh vertex violated the horoball sandwich band."""

    def __init__(self, violations):
        self.violations = violations
        super().__init__(
            f"{len(violations)} vertices violate the sandwich band; first: {violations[0]}"
        )


class ConfigError(HorolabError):
    """Configuration file is missing, malformed, or invalid."""
