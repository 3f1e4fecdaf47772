"""Fixed semantic class palette and road-type vocabulary.

Every grid and graph in this package uses the same 8-class palette; index 0
is always Free so that "empty" and "zero" coincide throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

CLASS_NAMES = ("Free", "Road", "Building", "Vehicle", "Pedestrian", "Pole", "Vegetation", "Other")
COUNTABLE_CLASSES = ("Vehicle", "Pedestrian", "Pole")
ROAD_TYPES = ("StraightRoad", "TJunction", "Crossroad", "BendRoad", "Others")

FREE = 0
ROAD = 1

PALETTE_VERSION = "v1"

# Display colors for BEV rendering (RGB), index-aligned with CLASS_NAMES.
CLASS_COLORS = (
    (40, 40, 40),     # Free
    (128, 128, 128),  # Road
    (204, 102, 51),   # Building
    (51, 102, 230),   # Vehicle
    (230, 51, 51),    # Pedestrian
    (240, 200, 40),   # Pole
    (46, 160, 67),    # Vegetation
    (150, 110, 190),  # Other
)


@dataclass(frozen=True)
class ClassPalette:
    """Ordered semantic classes plus the countable (instance) subset."""

    classes: tuple[str, ...] = CLASS_NAMES
    countable: tuple[str, ...] = COUNTABLE_CLASSES
    version: str = PALETTE_VERSION

    def __post_init__(self) -> None:
        if len(self.classes) != 8 or self.classes[0] != "Free":
            raise ValueError("palette must hold exactly 8 classes with Free at index 0")
        unknown = set(self.countable) - set(self.classes)
        if unknown:
            raise ValueError(f"countable classes not in palette: {sorted(unknown)}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def index(self, name: str) -> int:
        return self.classes.index(name)

    def is_countable(self, name: str) -> bool:
        return name in self.countable


DEFAULT_PALETTE = ClassPalette()

NUM_CLASSES = DEFAULT_PALETTE.num_classes
COUNTABLE_INDICES = tuple(DEFAULT_PALETTE.index(n) for n in COUNTABLE_CLASSES)
