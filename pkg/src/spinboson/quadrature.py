"""Gauss-Legendre rules on the half line."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class QuadratureConfig:
    """Radial rule used for every pair variable.

    ``mapping="rational"`` sends ``t in (-1, 1)`` to ``s = scale (1+t)/(1-t)``.
    With ``truncation`` set, the rule instead covers ``(0, truncation]`` via
    ``s = truncation ((1+t)/2)^2``, which also clusters nodes near 0.
    """

    nodes_per_dim: int = 64
    mapping: str = "rational"
    scale: float = 1.0
    truncation: Optional[float] = None

    def __post_init__(self):
        if int(self.nodes_per_dim) != self.nodes_per_dim or self.nodes_per_dim < 8:
            raise ValueError(f"nodes_per_dim must be an integer >= 8, got {self.nodes_per_dim}")
        if self.mapping != "rational":
            raise ValueError(f"unknown mapping {self.mapping!r}")
        if not self.scale > 0:
            raise ValueError("mapping scale must be positive")
        if self.truncation is not None and not self.truncation > 0:
            raise ValueError("truncation must be positive")

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``s_i > 0`` and weights ``w_i`` with ``sum w_i g(s_i) ~ int g ds``."""
        return _nodes(int(self.nodes_per_dim), self.scale, self.truncation)

    def refined(self, factor: int = 2) -> "QuadratureConfig":
        return QuadratureConfig(self.nodes_per_dim * factor, self.mapping, self.scale, self.truncation)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def quadrature_config(nodes_per_dim: int = 64, mapping: str = "rational",
                      truncation: Optional[float] = None, scale: float = 1.0) -> QuadratureConfig:
    return QuadratureConfig(nodes_per_dim, mapping, scale, truncation)


@lru_cache(maxsize=64)
def _nodes(n: int, scale: float, truncation: Optional[float]):
    t, w = np.polynomial.legendre.leggauss(n)
    if truncation is None:
        s = scale * (1 + t) / (1 - t)
        ws = w * 2 * scale / (1 - t) ** 2
    else:
        u = (1 + t) / 2
        s = truncation * u * u
        ws = w * truncation * u
    s.setflags(write=False)
    ws.setflags(write=False)
    return s, ws


def radial_measure(cfg: QuadratureConfig) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and the weights of the measure ``4 pi s^2 ds``."""
    s, w = cfg.nodes()
    return s, 4 * math.pi * s * s * w
