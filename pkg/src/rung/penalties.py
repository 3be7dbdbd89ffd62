"""Edge-penalty family: concave-capped (MCP), absolute (l1), and quadratic (l2).

Each penalty is a scalar function ``rho(y)`` of a non-negative edge
difference together with its reweighting derivative ``weight(y) =
d rho / d(y^2)``.  The weight is what turns the non-smooth estimation
problem into a sequence of weighted least-squares problems: at each
iteration every edge is reweighted by ``weight`` evaluated at its current
difference.  For the capped penalty the weight hits exactly zero once the
difference reaches the cap ``gamma``, which prunes the edge.
"""

from dataclasses import dataclass

import numpy as np

KINDS = ("mcp", "l1", "l2")


@dataclass(frozen=True)
class Penalty:
    """Edge penalty with kind in {"mcp", "l1", "l2"}.

    Parameters
    ----------
    kind : str
        "mcp" is the concave capped penalty (l1-like near zero, constant
        gamma/2 for y >= gamma); "l1" is rho(y) = y; "l2" is rho(y) = y**2.
    gamma : float or None
        Cap location, required (and > 0) for "mcp", ignored otherwise.
    eps : float
        Clamp applied to y before division in `weight`, keeping the
        reweighting finite at y = 0.  The product weight(y) * y stays
        bounded as y -> 0, so a large finite weight reproduces the correct
        fixed-point behaviour.
    """

    kind: str
    gamma: float | None = None
    eps: float = 1e-12

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "mcp":
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("mcp penalty requires gamma > 0")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def rho(self, y):
        """Penalty value at non-negative difference y (scalar or array)."""
        y = _check_nonnegative(y)
        if self.kind == "l2":
            return y * y
        if self.kind == "l1":
            return y + 0.0
        g = self.gamma
        return np.where(y < g, y - y * y / (2.0 * g), g / 2.0)

    def weight(self, y):
        """Reweighting derivative d rho / d(y^2) at y, clamped near zero.

        mcp: max(0, 1/(2 y) - 1/(2 gamma));  l1: 1/(2 y);  l2: 1.
        """
        y = _check_nonnegative(y)
        if self.kind == "l2":
            return np.ones_like(y)
        yc = np.maximum(y, self.eps)
        if self.kind == "l1":
            return 0.5 / yc
        return np.maximum(0.0, 0.5 / yc - 0.5 / self.gamma)

    def to_config(self):
        if self.kind == "mcp":
            return {"kind": "mcp", "gamma": float(self.gamma)}
        return {"kind": self.kind}


def _check_nonnegative(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("edge differences must be non-negative")
    return y


def mcp(gamma, eps=1e-12):
    return Penalty("mcp", gamma=float(gamma), eps=eps)


def l1(eps=1e-12):
    return Penalty("l1", eps=eps)


def l2(eps=1e-12):
    return Penalty("l2", eps=eps)


def from_config(cfg, eps=1e-12):
    """Build a Penalty from its config form, e.g. {"kind": "mcp", "gamma": 3.0}."""
    if isinstance(cfg, Penalty):
        return cfg
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ValueError(f"penalty config must name a kind, got {cfg!r}")
    extra = set(cfg) - {"kind", "gamma", "eps"}
    if extra:
        raise ValueError(f"unknown penalty config fields: {sorted(extra)}")
    kind = cfg["kind"]
    eps = float(cfg.get("eps", eps))
    if kind == "mcp":
        if "gamma" not in cfg:
            raise ValueError("mcp penalty config requires gamma")
        return Penalty("mcp", gamma=float(cfg["gamma"]), eps=eps)
    if "gamma" in cfg:
        raise ValueError(f"gamma is only meaningful for mcp, not {kind!r}")
    return Penalty(kind, eps=eps)
