"""Named manifold presets and the manifold description config.

A description is a flat mapping.  ``family`` is ``translation`` or
``wedge``; every other key is a field of :class:`ManifoldConfig`.  Presets
are descriptions with defaults filled in, and ``ManifoldConfig.from_dict``
followed by ``to_dict`` returns the same mapping.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .geometry_core import GeometryError, ManifoldModel
from .singular_structure import ModelWedgeSpec, build_model_wedge, build_translation_atlas

__all__ = ["ManifoldConfig", "PRESETS", "preset", "build_manifold"]


@dataclass(frozen=True)
class ManifoldConfig:
    family: str = "wedge"
    m: int = 2
    alpha: float = 2.0
    ell: int = 0
    base: str = "interval"
    base_extent: float | None = None
    J_max: int = 6
    N: int = 16
    shrink: float = 0.5
    blend: tuple[float, float] = (0.5, 1.0)
    layout: str = "rho"
    Z: int = 1
    half_space: bool = False
    spacing: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "blend", tuple(float(v) for v in self.blend))

    def validate(self) -> None:
        if self.family not in ("translation", "wedge"):
            raise GeometryError(f"unknown manifold family {self.family!r}")
        if self.N < 2:
            raise GeometryError("mesh N must be ≥ 2")
        if self.family == "wedge":
            self.wedge_spec().validate()

    def wedge_spec(self) -> ModelWedgeSpec:
        return ModelWedgeSpec(
            alpha=float(self.alpha),
            d=2,
            ell=int(self.ell),
            base=self.base,
            base_extent=self.base_extent,
            J_max=int(self.J_max),
            layout=self.layout,
            blend=self.blend,
            shrink=float(self.shrink),
        )

    def build(self) -> ManifoldModel:
        self.validate()
        if self.family == "translation":
            return build_translation_atlas(int(self.m), int(self.Z), bool(self.half_space), float(self.spacing))
        return build_model_wedge(self.wedge_spec())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["blend"] = list(self.blend)
        return out

    @classmethod
    def from_dict(cls, data) -> "ManifoldConfig":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(data) - known)
        if bad:
            raise GeometryError(f"unknown manifold field(s): {', '.join(bad)}")
        return cls(**dict(data))


PRESETS: dict[str, tuple[ManifoldConfig, str]] = {
    "translation": (ManifoldConfig(family="translation", m=2, Z=1), "unit-square translates of R^2, rho = 1"),
    "halfspace": (ManifoldConfig(family="translation", m=2, Z=1, half_space=True), "unit-square translates of the half plane"),
    "misaligned": (ManifoldConfig(family="translation", m=2, Z=1, spacing=43 / 48), "R^2 translates with overlaps off the lattice"),
    "cone": (ManifoldConfig(alpha=1.0, base="sphere", J_max=6), "plane cone over the full circle, rho ~ r"),
    "sector": (ManifoldConfig(alpha=1.0, base="arc", J_max=6), "cone over a quarter arc, with two boundary rays"),
    "cusp2": (ManifoldConfig(alpha=2.0, base="interval", J_max=6), "2-cusp over an interval, rho ~ r^2"),
    "cusp2.5": (ManifoldConfig(alpha=2.5, base="interval", J_max=6), "2.5-cusp over an interval"),
    "wedge": (ManifoldConfig(alpha=2.0, base="interval", ell=1, J_max=2), "2-cusp times a periodic edge direction, m = 3"),
    "broken": (ManifoldConfig(alpha=2.0, base="interval", J_max=8, layout="dyadic"), "2-cusp with dyadic annular charts (not uniformly shrinkable)"),
}


def preset(name: str, **overrides) -> ManifoldConfig:
    try:
        cfg = PRESETS[name][0]
    except KeyError:
        raise GeometryError(f"unknown manifold {name!r}; choose from {', '.join(PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


def build_manifold(name: str, **overrides) -> ManifoldModel:
    return preset(name, **overrides).build()
