from .kernel import KernelParams, kernel_dwdr, kernel_grad, kernel_w
from .operators import (
    grad_normalized,
    grad_standard,
    pair_geometry,
    rhs_density,
    rhs_energy,
    rhs_momentum,
)
from .poiseuille import (
    Approach,
    PoiseuilleConfig,
    poiseuille_displacement,
    poiseuille_theory,
    run,
    setup,
    step_mixed,
)

__all__ = [
    "KernelParams",
    "kernel_w",
    "kernel_dwdr",
    "kernel_grad",
    "grad_normalized",
    "grad_standard",
    "pair_geometry",
    "rhs_density",
    "rhs_energy",
    "rhs_momentum",
    "Approach",
    "PoiseuilleConfig",
    "poiseuille_theory",
    "poiseuille_displacement",
    "run",
    "setup",
    "step_mixed",
]
