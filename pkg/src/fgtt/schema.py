"""Feature schema for the fused crash dataset.

The default schema holds the 33 modelling features (14 numeric, 19
categorical), the feature group each belongs to, and the published marginal
statistics the synthetic generator is calibrated to.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaError

GROUPS = ("Event", "Traffic", "Environment", "Pavement", "Driver", "Contextual", "Geometric", "Vehicle")
CLASSES = ("Rear-end", "Sideswipe", "Angle")
LABEL = "Crash_type"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # "numeric" | "categorical"
    group: str
    categories: tuple[str, ...] = ()

    @property
    def is_numeric(self) -> bool:
        return self.kind == "numeric"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered features plus auxiliary ingestion-only columns (never encoded)."""

    features: tuple[Feature, ...]
    auxiliary: tuple[str, ...] = ()
    groups: tuple[str, ...] = GROUPS
    classes: tuple[str, ...] = CLASSES
    label: str = LABEL
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")
        for f in self.features:
            if f.kind not in ("numeric", "categorical"):
                raise SchemaError(f"{f.name}: unknown kind {f.kind!r}")
            if f.kind == "categorical" and len(f.categories) < 2:
                raise SchemaError(f"{f.name}: categorical features need at least 2 categories")
            if f.group not in self.groups:
                raise SchemaError(f"{f.name}: group {f.group!r} is not one of {self.groups}")
        object.__setattr__(self, "_index", {f.name: f for f in self.features})

    def __getitem__(self, name: str) -> Feature:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def numeric(self) -> list[str]:
        return [f.name for f in self.features if f.is_numeric]

    @property
    def categorical(self) -> list[str]:
        return [f.name for f in self.features if not f.is_numeric]

    def columns(self) -> list[str]:
        """Header expected in a data file: features, auxiliary columns, then the label."""
        return self.names + list(self.auxiliary) + [self.label]

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f.name, "kind": f.kind, "group": f.group, "categories": list(f.categories)}
                for f in self.features
            ],
            "auxiliary": list(self.auxiliary),
            "groups": list(self.groups),
            "classes": list(self.classes),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        try:
            feats = tuple(
                Feature(d["name"], d["kind"], d["group"], tuple(str(c) for c in d.get("categories", ())))
                for d in doc["features"]
            )
        except KeyError as exc:
            raise SchemaError(f"schema entry missing key {exc}") from None
        return cls(
            feats,
            auxiliary=tuple(doc.get("auxiliary", ())),
            groups=tuple(doc.get("groups", GROUPS)),
            classes=tuple(doc.get("classes", CLASSES)),
            label=doc.get("label", LABEL),
        )

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# name -> (mean, std, min, max)
NUMERIC_STATS: dict[str, tuple[float, float, float, float]] = {
    "Wind_speed": (1.22, 1.89, 0.0, 79.0),
    "Gust": (2.32, 3.07, 0.0, 79.0),
    "Precip_rate": (0.01, 0.09, 0.0, 3.0),
    "Precip_accum": (0.10, 0.33, 0.0, 4.52),
    "Hourly_truck_ratio": (0.08, 0.10, 0.0, 0.88),
    "Hourly_volume": (4370.0, 2884.0, 10.0, 10688.0),
    "Hourly_avg_speed": (49.06, 15.56, 4.18, 80.27),
    "IRI_avg": (61.43, 33.10, 25.0, 251.0),
    "Rut_avg": (0.107, 0.061, 0.0, 0.41),
    "Faulting_avg_3d": (0.005, 0.018, 0.0, 0.39),
    "Heading_angle": (205.0, 120.76, 0.9, 359.9),
    "Percent_grade": (-1.29, 1.91, -7.40, 3.70),
    "Cross_section_slope": (0.361, 1.691, -4.70, 3.4),
    "Crack_percentage": (8.11, 10.74, 0.0, 57.0),
}

# name -> {category: published percentage}
CATEGORY_FREQUENCIES: dict[str, dict[str, float]] = {
    "City": {"Atlanta": 40.16, "Metro Area Outside of Atlanta": 32.33, "Unincorporated": 27.5},
    "Crash_location": {
        "On Roadway - Non-Intersection": 80.95,
        "On Roadway - Crossing/Intersection/Crosswalk/Roundabout": 10.53,
        "Entrance/Exit Ramp": 5.27,
        "Private Property/Off Roadway": 1.95,
        "Shoulder/Median/Gore": 1.29,
    },
    "Lighting": {"Daylight": 74.39, "Dark-Lighted": 15.09, "Dark-Not Lighted": 8.43, "Dawn": 1.13, "Dusk": 0.95},
    "Surface": {"Dry": 80.25, "Wet/Snow/Ice": 19.75},
    "Driver1_safety_equip": {"Lap/Shoulder Belt/Helmet Used": 72.11, "Unknown": 26.24, "None Used": 1.64},
    "Driver2_safety_equip": {"Lap/Shoulder Belt/Helmet Used": 81.37, "Unknown": 17.74, "None Used": 0.90},
    "Veh1_type": {
        "Passenger Car/Pickup/Van/SUV": 88.99,
        "Truck/Trailer": 6.71,
        "Unknown": 3.02,
        "Other": 0.81,
        "Motorcycle/Bicycle/ATV": 0.47,
    },
    "Veh2_type": {
        "Passenger Car/Pickup/Van/SUV": 90.91,
        "Truck/Trailer": 6.06,
        "Unknown": 2.09,
        "Other": 0.69,
        "Motorcycle/Bicycle/ATV": 0.25,
    },
    "Veh1_maneuver": {
        "Straight": 55.93,
        "Changing Lanes/Passing": 27.69,
        "Negotiating a Curve": 5.42,
        "Turning (left, right, u-turn)": 4.19,
        "Other": 3.69,
        "Backing": 1.31,
        "Stopped/Parked": 1.25,
        "Entering/Leaving Parking/Driveway": 0.53,
    },
    "Road_composition": {"Black Top": 86.95, "Concrete/Other": 13.05},
    "Trafficway_layout": {
        "Two-Way Trafficway With A Physical Barrier/Separation": 55.28,
        "One-Way Trafficway": 18.72,
        "Two-Way Trafficway With No Physical Barrier/Separation": 13.86,
        "Continuous Turning Lane": 0.47,
    },
    "Day_of_week": {
        "Monday": 14.14,
        "Tuesday": 16.09,
        "Wednesday": 13.73,
        "Thursday": 16.67,
        "Friday": 18.83,
        "Saturday": 11.51,
        "Sunday": 9.03,
    },
    "Driver1_agerange": {"Under 25": 25.81, "25-34": 23.79, "35-44": 27.25, "45-54": 10.62, "55 and up": 12.53},
    "Driver2_agerange": {"Under 25": 18.27, "25-34": 27.44, "35-44": 22.32, "45-54": 16.33, "55 and up": 15.64},
    "Curvature": {"A": 86.18, "B": 12.76, "C or more": 1.06},
    "Facility_type": {
        "Interstate": 78.44,
        "Principal Arterial - Other": 11.03,
        "Minor Arterial": 5.77,
        "Principal Arterial - Other Freeways and Expressways": 4.76,
    },
    "Area_type": {"Urban": 98.25, "Rural": 1.75},
    "Num_lanes": {"2": 25.64, "3": 9.07, "4": 8.59, "5": 14.01, "6": 10.41, "7": 32.28},
    "Time_of_day": {
        "Early morning": 6.28,
        "Peak morning": 17.40,
        "Midday": 19.31,
        "Peak afternoon": 41.95,
        "Late evening": 15.05,
    },
}

FEATURE_GROUPS: dict[str, tuple[str, ...]] = {
    "Event": ("Crash_location", "Veh1_maneuver"),
    "Traffic": ("Hourly_truck_ratio", "Hourly_volume", "Hourly_avg_speed"),
    "Environment": ("Gust", "Wind_speed", "Precip_rate", "Precip_accum", "Lighting"),
    "Pavement": (
        "IRI_avg", "Rut_avg", "Faulting_avg_3d", "Percent_grade",
        "Cross_section_slope", "Crack_percentage", "Road_composition", "Surface",
    ),
    "Driver": ("Driver1_agerange", "Driver2_agerange", "Driver1_safety_equip", "Driver2_safety_equip"),
    "Contextual": ("Day_of_week", "Time_of_day", "City"),
    "Geometric": ("Heading_angle", "Curvature", "Trafficway_layout", "Num_lanes", "Facility_type", "Area_type"),
    "Vehicle": ("Veh1_type", "Veh2_type"),
}

# column order of the dataset description table
_ORDER = (
    "City", "Crash_location", "Lighting", "Surface", "Driver1_safety_equip", "Driver2_safety_equip",
    "Veh1_type", "Veh2_type", "Veh1_maneuver", "Road_composition", "Trafficway_layout",
    "Wind_speed", "Gust", "Precip_rate", "Precip_accum", "Hourly_truck_ratio", "Hourly_volume",
    "Hourly_avg_speed", "IRI_avg", "Rut_avg", "Faulting_avg_3d", "Heading_angle", "Percent_grade",
    "Cross_section_slope", "Crack_percentage", "Day_of_week", "Driver1_agerange", "Driver2_agerange",
    "Curvature", "Facility_type", "Area_type", "Num_lanes", "Time_of_day",
)

# per-day key used only to group precipitation imputation
DATE_KEY = "Date_element"

PRECIP_GROUPING = ("City", DATE_KEY)
SPEED_GROUPING = ("Num_lanes", "Day_of_week", "Facility_type", "Area_type", "Time_of_day")


def default_schema() -> FeatureSchema:
    group_of = {name: g for g, names in FEATURE_GROUPS.items() for name in names}
    feats = []
    for name in _ORDER:
        if name in NUMERIC_STATS:
            feats.append(Feature(name, "numeric", group_of[name]))
        else:
            feats.append(Feature(name, "categorical", group_of[name], tuple(CATEGORY_FREQUENCIES[name])))
    return FeatureSchema(tuple(feats), auxiliary=(DATE_KEY,))
