"""Reproducible random smooth test fields."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .geometry_core import ManifoldModel, TensorFieldSample, sample_field
from .profiles import plateau

__all__ = ["TrigField", "random_trig_field", "radial_bump", "shell_probes", "conical_probe"]


class TrigField:
    """Finite sum of plane waves in natural coordinates, one per component.

    Frequencies along periodic axes are integer multiples of the base
    frequency so the field is single valued.
    """

    def __init__(self, model: ManifoldModel, valence, rng: np.random.Generator, modes: int = 3, scale: float = 1.0,
                 envelope: Callable[[np.ndarray], np.ndarray] | None = None, origin=None):
        self.model = model
        self.valence = (int(valence[0]), int(valence[1]))
        m = model.dim
        ncomp = m ** sum(self.valence)
        periods = model.param.periods
        freq = np.empty((ncomp, modes, m))
        for i in range(m):
            if periods[i]:
                base = 2 * math.pi / periods[i]
                freq[..., i] = base * rng.integers(-2, 3, size=(ncomp, modes))
            else:
                freq[..., i] = scale * rng.uniform(-1.5, 1.5, size=(ncomp, modes))
        self.freq = freq
        self.phase = rng.uniform(0, 2 * math.pi, size=(ncomp, modes))
        self.amp = rng.normal(size=(ncomp, modes))
        self.const = rng.normal(size=ncomp)
        self.envelope = envelope
        # phases are measured from ``origin`` so one draw can be moved along the model
        self.origin = np.zeros(m) if origin is None else np.asarray(origin, dtype=float)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        arg = np.einsum("...i,cki->...ck", q - self.origin, self.freq) + self.phase
        vals = self.const + np.sum(self.amp * np.cos(arg), axis=-1)
        if self.envelope is not None:
            vals = vals * self.envelope(q)[..., None]
        m = self.model.dim
        return vals.reshape(q.shape[:-1] + (m,) * sum(self.valence))

    def sample(self, N: int, support=None) -> TensorFieldSample:
        return sample_field(self.model, N, self.valence, self, support=support)


def random_trig_field(model: ManifoldModel, N: int, valence, seed: int | np.random.Generator = 0, **kw) -> TensorFieldSample:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return TrigField(model, valence, rng, **kw).sample(N)


def radial_bump(center: float, half_width: float, axis: int = 0) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth bump in one natural coordinate, equal to 1 on the middle half."""

    def env(q):
        return plateau((np.asarray(q)[..., axis] - center) / half_width, 0.5, 1.0)

    return env


def shell_probes(
    model: ManifoldModel, valence=(0, 0), per_shell: int = 1, half_width: float = 2.0, seed: int = 0
) -> list[tuple[int, Callable[[np.ndarray], np.ndarray], Callable]]:
    """Localized test fields, one family per dyadic shell of a wedge.

    Each probe is a trig field times a radial bump of ``half_width`` radial
    chart widths, centred on the middle chart of its shell and clipped into
    the core.  The field phases are measured from the bump centre and the
    draws depend only on the probe index, so the same profile is moved
    from shell to shell.  Returns ``(shell, field, support)`` triples where
    ``support(chart)`` selects the charts the bump can reach.
    """
    if model.metadata.get("family") != "wedge":
        raise ValueError("shell probes need a wedge model")
    w = model.metadata["radial_width"]
    hw = half_width * w
    lo, hi = model.core[0]
    by_shell: dict[int, list[float]] = {}
    for uc in model.metadata["u_centers"]:
        r = float(model.param.r_of_u(uc))
        by_shell.setdefault(int(math.floor(-math.log2(r) + 1e-9)), []).append(uc)
    out = []
    for j, us in sorted(by_shell.items()):
        uc = min(max(us[len(us) // 2], lo + hw), hi - hw)
        origin = np.zeros(model.dim)
        origin[0] = uc
        for i in range(per_shell):
            f = TrigField(model, valence, np.random.default_rng([seed, i]), envelope=radial_bump(uc, hw), origin=origin)

            def support(chart, _c=uc):
                a, b = chart.natural_box()
                return a[0] < _c + hw and b[0] > _c - hw

            out.append((j, f, support))
    return out


def conical_probe(r0: float, r1: float, seed: int = 0) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth function on the plane supported in the annulus ``r0 < |X| < r1``.

    The envelope is ``(1 - t^2)^4`` in ``t`` affine in ``log |X|``, so it is
    equally well resolved at every depth of a cone; the oscillating factor
    has wavelengths comparable to ``r1``.  Takes ambient points ``(..., 2)``.
    """
    if not 0 < r0 < r1:
        raise ValueError("need 0 < r0 < r1")
    rng = np.random.default_rng(seed)
    a = rng.normal(size=3)
    kx, ky = rng.uniform(1, 3, 2)
    c, w = 0.5 * math.log(r0 * r1), 0.5 * math.log(r1 / r0)

    def f(X):
        X = np.asarray(X, dtype=float)
        r = np.linalg.norm(X, axis=-1)
        with np.errstate(divide="ignore"):
            t = np.clip((np.log(r) - c) / w, -1.0, 1.0)
        return (1 - t**2) ** 4 * (a[0] + a[1] * np.sin(kx * X[..., 0] / r1) + a[2] * np.cos(ky * X[..., 1] / r1))

    return f
