"""Regenerates the synthetic Kragerø-style fixture files in this directory.

Locations are scattered around real place names in the municipality; building
mixes, unit counts and pupil numbers are invented.
"""
import csv
import json
import math
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
R = 6_371_000.0

rng = random.Random(20240917)


def offset(lat, lon, north_m, east_m):
    dlat = math.degrees(north_m / R)
    dlon = math.degrees(east_m / (R * math.cos(math.radians(lat))))
    return round(lat + dlat, 6), round(lon + dlon, 6)


# (name, centre, spread in metres, buildings)
SETTLEMENTS = [
    ("Kragerø sentrum", (58.8690, 9.4148), 900, 1500),
    ("Stabbestad", (58.8780, 9.3960), 700, 500),
    ("Sannidal", (58.9040, 9.2760), 1200, 600),
    ("Helle", (58.8880, 9.2050), 900, 300),
    ("Levangsheia", (58.9620, 9.3330), 1100, 250),
    ("Skåtøy", (58.8550, 9.5220), 900, 250),
]

RESIDENTIAL = [
    ("detached_house", 0.55, lambda: rng.choice([1, 1, 1, 2])),
    ("row_house", 0.15, lambda: rng.randint(2, 6)),
    ("studio_apartment", 0.08, lambda: 1),
    ("apartment_complex", 0.07, lambda: rng.randint(6, 24)),
]
OTHER = [("cabin", 0.10), ("garage", 0.05)]


def building_rows():
    rows = []
    next_id = 1
    types = RESIDENTIAL + [(t, p, None) for t, p in OTHER]
    weights = [p for _, p, _ in types]
    for _, (lat, lon), spread, count in SETTLEMENTS:
        for _ in range(count):
            t, _, units = rng.choices(types, weights)[0]
            north, east = rng.gauss(0, spread / 2), rng.gauss(0, spread / 2)
            blat, blon = offset(lat, lon, north, east)
            if units is None:
                u = ""
            elif rng.random() < 0.02:
                u = ""  # missing in the source, counts as one dwelling
            else:
                u = units()
            rows.append([next_id, t, u, blat, blon])
            next_id += 1
    return rows


def grades(kind):
    if kind == "compulsory":
        return [rng.randint(18, 45) for _ in range(10)] + [0, 0, 0]
    return [0] * 10 + [rng.randint(70, 110) for _ in range(3)]


SCHOOLS = [
    (1, "Kragerø skole", "compulsory", offset(58.8690, 9.4148, 350, -200)),
    (2, "Sannidal skole", "compulsory", offset(58.9040, 9.2760, 100, 150)),
    (3, "Helle skole", "compulsory", offset(58.8880, 9.2050, -80, 60)),
    (4, "Levangsheia skole", "compulsory", offset(58.9620, 9.3330, 40, -90)),
    (5, "Skåtøy skole", "compulsory", offset(58.8550, 9.5220, 20, 30)),
    (6, "Kragerø videregående skole", "high_school", offset(58.8690, 9.4148, 600, -450)),
]


def main():
    with open(os.path.join(HERE, "buildings.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "building_type", "dwelling_units", "lat", "lon"])
        w.writerows(building_rows())
    with open(os.path.join(HERE, "schools.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "name", "kind", "lat", "lon"] + [f"g{g}" for g in range(1, 14)])
        for sid, name, kind, (lat, lon) in SCHOOLS:
            w.writerow([sid, name, kind, lat, lon] + grades(kind))


if __name__ == "__main__":
    main()
