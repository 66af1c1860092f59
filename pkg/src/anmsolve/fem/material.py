"""Constitutive models as graph builders on a batched deformation gradient."""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError
from ..graph import Var

MODELS = ("NC", "NI", "ARAP")


@dataclass
class MaterialSpec:
    """``model`` is NC (compressible neo-Hookean), NI (incompressible) or ARAP."""

    model: str = "NC"
    mu: float = 1.0
    lam: float = 1.0      # Lamé first parameter, NC only
    kappa: float = 1.0    # bulk modulus, NI only
    density: float = 1.0

    def __post_init__(self):
        self.model = str(self.model).upper()
        if self.model not in MODELS:
            raise ConfigError(f"unknown material model {self.model!r}; expected one of {MODELS}")
        if not self.mu > 0:
            raise ConfigError("mu must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if self.density < 0:
            raise ConfigError("density must be non-negative")


def _inv_t(F: Var) -> Var:
    g = F.graph
    return g.apply("transpose", g.apply("inv", F))


def build_pk1(material: MaterialSpec, F: Var) -> Var:
    """First Piola-Kirchhoff stress ``P(F)`` for a batch of 3x3 gradients."""
    g = F.graph
    mu = material.mu
    if material.model == "NC":
        FiT = _inv_t(F)
        logJ = g.apply("log", g.apply("det", F))
        return mu * (F - FiT) + material.lam * (logJ * FiT)
    if material.model == "NI":
        FiT = _inv_t(F)
        J = g.apply("det", F)
        # tr(F^T F): the squared Frobenius norm keeps the rest state stress free
        trc = g.apply("sum_items", F * F)
        dev = (J ** (-2.0 / 3.0)) * (F - (trc * FiT) * (1.0 / 3.0))
        return mu * dev + material.kappa * ((J * J - J) * FiT)
    _, _, R = g.apply("svd_w", F, rotation_variant=True)
    return mu * (F - R)


def build_cauchy(material: MaterialSpec, F: Var) -> Var:
    """Cauchy stress ``P F^T / det F``."""
    g = F.graph
    P = build_pk1(material, F)
    return (P @ F.T) / g.apply("det", F)
