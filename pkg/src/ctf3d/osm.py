"""OpenStreetMap building-footprint retrieval through the Overpass API, with
an on-disk response cache keyed by the query so repeat runs are offline and
deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from typing import Optional

import numpy as np

from .crs import transform_points
from .footprints import Footprint, FootprintSet
from .geom import Point2, Polygon

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://overpass-api.de/api/interpreter"


class OsmError(Exception):
    pass


def overpass_query(bbox_lonlat: tuple[float, float, float, float]) -> str:
    """Overpass QL for building ways in a (west, south, east, north) box."""
    w, s, e, n = bbox_lonlat
    return (
        "[out:json][timeout:60];"
        f'way["building"]({s:.8f},{w:.8f},{e:.8f},{n:.8f});'
        "(._;>;);out body;"
    )


def _cache_path(cache_dir: str, endpoint: str, query: str) -> str:
    key = hashlib.sha256((endpoint + "\n" + query).encode("utf-8")).hexdigest()
    return os.path.join(cache_dir, f"overpass_{key}.json")


def fetch_osm_footprints(
    bbox_lonlat: tuple[float, float, float, float],
    target_crs: str,
    endpoint: str = DEFAULT_ENDPOINT,
    cache_dir: Optional[str] = None,
) -> FootprintSet:
    """Building footprints inside the lon/lat box, as polygons in target_crs.

    Closed building ways become footprints keyed by way id; open ways and
    ways with missing nodes are skipped with a warning. With cache_dir set,
    the raw Overpass response is cached and reused byte-for-byte.
    """
    query = overpass_query(bbox_lonlat)
    text: Optional[str] = None
    cpath = None
    if cache_dir:
        cpath = _cache_path(cache_dir, endpoint, query)
        if os.path.exists(cpath):
            with open(cpath, "r", encoding="utf-8") as f:
                text = f.read()
            log.debug("using cached Overpass response %s", cpath)
    if text is None:
        text = _http_fetch(endpoint, query)
        if cpath:
            os.makedirs(cache_dir, exist_ok=True)
            with open(cpath, "w", encoding="utf-8") as f:
                f.write(text)
    return parse_overpass_json(text, target_crs)


def _http_fetch(endpoint: str, query: str) -> str:
    import requests

    last_err: Optional[Exception] = None
    for attempt in range(2):
        try:
            resp = requests.post(endpoint, data={"data": query}, timeout=90)
            if resp.status_code != 200:
                raise OsmError(f"Overpass returned HTTP {resp.status_code}")
            return resp.text
        except OsmError:
            raise
        except Exception as e:  # connection errors, timeouts
            last_err = e
            log.warning("Overpass request failed (attempt %d): %s", attempt + 1, e)
    raise OsmError(f"Overpass request failed: {last_err}")


def parse_overpass_json(text: str, target_crs: str) -> FootprintSet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise OsmError(f"Overpass response is not valid JSON: {e}") from e
    elements = doc.get("elements", [])
    nodes: dict[int, tuple[float, float]] = {}
    ways: list[dict] = []
    for el in elements:
        if el.get("type") == "node":
            nodes[el["id"]] = (float(el["lon"]), float(el["lat"]))
        elif el.get("type") == "way":
            ways.append(el)

    feats: list[Footprint] = []
    for way in ways:
        wid = way.get("id")
        refs = way.get("nodes", [])
        if len(refs) < 4 or refs[0] != refs[-1]:
            log.warning("skipping open way %s (%d nodes)", wid, len(refs))
            continue
        try:
            lonlat = np.array([nodes[r] for r in refs[:-1]], dtype=np.float64)
        except KeyError as e:
            log.warning("skipping way %s: node %s missing from response", wid, e)
            continue
        xy = transform_points(lonlat, "EPSG:4326", target_crs)
        try:
            poly = Polygon(tuple(Point2(x, y) for x, y in xy))
        except ValueError as e:
            log.warning("skipping degenerate way %s: %s", wid, e)
            continue
        feats.append(Footprint(id=int(wid), polygon=poly, source="osm"))
    return FootprintSet(features=feats, crs_id=target_crs)
