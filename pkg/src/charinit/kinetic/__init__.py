"""Vlasov source integrals and surface matter tensors."""

from .quadrature import (BACKEND, DEFAULT_Q, MomentumQuadrature, QuadratureError,
                         SourceIntegralKind, assemble_T_ab, eval_source_integral,
                         gauss_legendre, matter_scalar_rhs, source_integrals)

__all__ = [
    "BACKEND", "DEFAULT_Q", "MomentumQuadrature", "QuadratureError", "SourceIntegralKind",
    "assemble_T_ab", "eval_source_integral", "gauss_legendre", "matter_scalar_rhs",
    "source_integrals",
]
