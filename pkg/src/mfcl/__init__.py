"""Mean-field laboratory for Cucker-Smale particles with chemotaxis."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    BoundConstants,
    BumpSource,
    CuckerSmaleKernel,
    DomainError,
    ExternalForce,
    FieldInit,
    ParticleEnsemble,
    Physics,
    SimConfig,
    TableKernel,
    rate_cd,
    support_radius,
)
