"""Domain-description template bank.

Ninety sentence templates, each carrying a single ``[domain]`` slot that
gets substituted with a domain name ("night rainy", "daytime foggy", ...).
The first entry is the canonical image-level template; the second keeps
the "taken on a" phrasing that also shows up in the wild.  A bank can be
loaded from a UTF-8 text file with one template per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import InputError

PLACEHOLDER = "[domain]"
BANK_SIZE = 90

DEFAULT_TEMPLATES: tuple[str, ...] = (
    "A photo taken in a [domain].",
    "A photo taken on a [domain].",
    "A blurry photo taken in a [domain].",
    "A bright photo taken in a [domain].",
    "A dark photo taken in a [domain].",
    "A grainy photo taken in a [domain].",
    "A high-contrast photo taken in a [domain].",
    "A low-contrast photo taken in a [domain].",
    "A cropped photo taken in a [domain].",
    "A close-up photo taken in a [domain].",
    "A wide-angle photo taken in a [domain].",
    "A photo of a street in a [domain].",
    "A photo of a road in a [domain].",
    "A photo of a city in a [domain].",
    "A photo of traffic in a [domain].",
    "A photo of an intersection in a [domain].",
    "A photo of a highway in a [domain].",
    "A photo of a crosswalk in a [domain].",
    "A photo of vehicles in a [domain].",
    "A photo of pedestrians in a [domain].",
    "A driving scene in a [domain].",
    "A street scene in a [domain].",
    "An urban scene in a [domain].",
    "A traffic scene in a [domain].",
    "A road scene in a [domain].",
    "A dashcam photo taken in a [domain].",
    "A surveillance photo taken in a [domain].",
    "A photo captured in a [domain].",
    "A picture taken in a [domain].",
    "An image taken in a [domain].",
    "A snapshot taken in a [domain].",
    "A photo shot in a [domain].",
    "A photo recorded in a [domain].",
    "A scene photographed in a [domain].",
    "A view of a street in a [domain].",
    "A view of a road in a [domain].",
    "A photo of cars driving in a [domain].",
    "A photo of a bus in a [domain].",
    "A photo of a truck in a [domain].",
    "A photo of a bicycle in a [domain].",
    "A photo of a motorcycle in a [domain].",
    "A photo of a person walking in a [domain].",
    "A photo of a rider in a [domain].",
    "A photo of parked cars in a [domain].",
    "A photo of a busy street in a [domain].",
    "A photo of an empty street in a [domain].",
    "A photo of a downtown area in a [domain].",
    "A photo of a residential street in a [domain].",
    "A photo of a suburb in a [domain].",
    "A photo of a parking lot in a [domain].",
    "A low-resolution photo taken in a [domain].",
    "A high-resolution photo taken in a [domain].",
    "A noisy photo taken in a [domain].",
    "A clean photo taken in a [domain].",
    "A washed-out photo taken in a [domain].",
    "A saturated photo taken in a [domain].",
    "A photo with motion blur taken in a [domain].",
    "A photo taken through a windshield in a [domain].",
    "A photo taken from a vehicle in a [domain].",
    "A photo taken from a bridge in a [domain].",
    "A photo taken at street level in a [domain].",
    "A photo taken from above in a [domain].",
    "A wide shot of a street in a [domain].",
    "A long-exposure photo taken in a [domain].",
    "A candid photo taken in a [domain].",
    "A detailed photo taken in a [domain].",
    "A distant view of traffic in a [domain].",
    "A nearby view of traffic in a [domain].",
    "A photo of the skyline in a [domain].",
    "A photo of buildings in a [domain].",
    "A photo of storefronts in a [domain].",
    "A photo of street lights in a [domain].",
    "A photo of road signs in a [domain].",
    "A photo of traffic signals in a [domain].",
    "A photo of lane markings in a [domain].",
    "A photo of a roundabout in a [domain].",
    "A photo of an overpass in a [domain].",
    "A photo of a tunnel entrance in a [domain].",
    "A photo of a bus stop in a [domain].",
    "A photo of a taxi in a [domain].",
    "A photo of a delivery van in a [domain].",
    "A photo of an ambulance in a [domain].",
    "A photo of a police car in a [domain].",
    "A photo of a crowd crossing in a [domain].",
    "A photo of cyclists riding in a [domain].",
    "A photo of wet pavement in a [domain].",
    "A photo of reflections on the road in a [domain].",
    "A photo of headlights in a [domain].",
    "A photo of shadows on the street in a [domain].",
    "A panoramic photo taken in a [domain].",
)

POSITIVE_TEMPLATE = "A [domain] photo of a [class]."
NEGATIVE_TEMPLATE = "A [domain] photo of an unknown class."
BACKGROUND_PHRASE = "unknown class"


@dataclass(frozen=True)
class TemplateBank:
    """Exactly 90 templates, each with one ``[domain]`` slot."""

    templates: tuple[str, ...]

    def __post_init__(self):
        if len(self.templates) != BANK_SIZE:
            raise InputError(f"template bank must hold {BANK_SIZE} entries, got {len(self.templates)}")
        for t in self.templates:
            if t.count(PLACEHOLDER) != 1:
                raise InputError(f"template must contain {PLACEHOLDER!r} exactly once: {t!r}")

    @classmethod
    def default(cls) -> "TemplateBank":
        return cls(DEFAULT_TEMPLATES)

    @classmethod
    def from_file(cls, path) -> "TemplateBank":
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
        return cls(tuple(ln for ln in lines if ln))

    @property
    def canonical(self) -> str:
        return self.templates[0]

    def fill(self, index: int, domain_text: str) -> str:
        return self.templates[index].replace(PLACEHOLDER, domain_text)
