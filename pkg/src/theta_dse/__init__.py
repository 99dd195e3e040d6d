"""Design space exploration via a single-step, compound-action sampling policy.

The engine trains a policy network that reads a constant input and emits one
categorical distribution per design dimension; sampled designs are scored by
an environment (synthetic benchmark or external evaluator process) and the
policy is updated with a proximal surrogate loss. A genetic-algorithm baseline
and a CLI for multi-seed experiments round out the package.
"""

__version__ = "0.1.0"

from .design_space import DesignSpace, Dimension, OutputLayout, parse_space, load_space
from .envs import (
    EvalResult,
    Environment,
    SyntheticSpec,
    brute_force_optimum,
    make_synthetic,
    synthetic_for_space,
)
from .policy import (
    MLPConfig,
    TransformerConfig,
    build_policy,
    forward_policy,
    sample_designs,
)

__all__ = [
    "DesignSpace",
    "Dimension",
    "OutputLayout",
    "parse_space",
    "load_space",
    "EvalResult",
    "Environment",
    "SyntheticSpec",
    "brute_force_optimum",
    "make_synthetic",
    "synthetic_for_space",
    "MLPConfig",
    "TransformerConfig",
    "build_policy",
    "forward_policy",
    "sample_designs",
]
