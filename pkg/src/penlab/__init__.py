"""penlab: numerical laboratory for quasi-local energy with static references.

The package builds static spherically symmetric reference manifolds,
foliates them by surfaces moving at unit normal speed, solves the
prescribed-scalar-curvature equation that deforms the reference metric
in the normal direction, and tracks the quasi-local energy of the
leaves, including the monotonicity and horizon-area bounds that make up
a Penrose-type inequality check.
"""

from .sphere import SphereGrid

__all__ = ["SphereGrid"]
__version__ = "0.1.0"
