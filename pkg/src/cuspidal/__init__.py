"""Weighted function spaces on singular Riemannian manifolds."""
