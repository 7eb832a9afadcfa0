"""Procedural relief-pattern dataset synthesis."""
from .bases import BASE_CATALOG, BASE_KINDS, make_base_surface, make_named_base
from .heightfield import PATTERNS, HeightField, make_heightfield
from .regions import plan_regions
from .relief import apply_relief

__all__ = ["BASE_CATALOG", "BASE_KINDS", "make_base_surface", "make_named_base",
           "PATTERNS", "HeightField", "make_heightfield", "plan_regions", "apply_relief"]
