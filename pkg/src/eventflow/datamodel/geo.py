"""Great-circle geometry, adjacency kernels and affected-sensor selection."""

from __future__ import annotations

import numpy as np

from eventflow.datamodel.records import (
    AffectedSet,
    NoCoveredSensorsError,
    SensorGraph,
    ValidationError,
    _check_coords,
)

EARTH_RADIUS_KM = 6371.0088


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over array arguments."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def bearing_rad(lat1, lon1, lat2, lon2):
    """Initial bearing from point 1 to point 2, radians clockwise from north."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    y = np.sin(dlmb) * np.cos(p2)
    x = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dlmb)
    return np.arctan2(y, x)


def pairwise_km(coords: np.ndarray) -> np.ndarray:
    lat, lon = coords[:, 0], coords[:, 1]
    return haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])


def build_adjacency(graph: SensorGraph, sigma_km: float = 2.0, threshold: float = 0.1) -> np.ndarray:
    """Thresholded Gaussian kernel of pairwise distance with a unit diagonal."""
    if sigma_km <= 0:
        raise ValidationError("sigma_km must be positive")
    if not 0.0 <= threshold < 1.0:
        raise ValidationError("threshold must lie in [0, 1)")
    _check_coords(graph.coords[:, 0], graph.coords[:, 1])
    d = pairwise_km(graph.coords)
    a = np.exp(-(d**2) / sigma_km**2)
    a[a < threshold] = 0.0
    np.fill_diagonal(a, 1.0)
    return a


def row_normalize(a: np.ndarray) -> np.ndarray:
    s = a.sum(axis=1, keepdims=True)
    return np.divide(a, s, out=np.zeros_like(a, dtype=np.float64), where=s > 0)


def affected_sensors(graph: SensorGraph, venue_coords, radius_km: float, venue_id: str = "") -> AffectedSet:
    """Sensors within ``radius_km`` of the venue, nearest first (ties by id)."""
    if radius_km <= 0:
        raise ValidationError("radius_km must be positive")
    vlat, vlon = float(venue_coords[0]), float(venue_coords[1])
    _check_coords(vlat, vlon)
    lat, lon = graph.coords[:, 0], graph.coords[:, 1]
    dist = haversine_km(vlat, vlon, lat, lon)
    inside = np.flatnonzero(dist <= radius_km)
    if inside.size == 0:
        raise NoCoveredSensorsError(
            f"no covered sensors within {radius_km:g} km of venue {venue_id or (vlat, vlon)}"
        )
    order = sorted(inside.tolist(), key=lambda i: (dist[i], graph.sensor_ids[i]))
    idx = np.asarray(order, dtype=np.intp)
    theta = bearing_rad(vlat, vlon, lat[idx], lon[idx])
    D = np.column_stack([dist[idx], np.sin(theta), np.cos(theta)])
    adj = None
    if graph.adjacency is not None:
        adj = row_normalize(graph.adjacency[np.ix_(idx, idx)])
    return AffectedSet(
        venue_id=venue_id,
        radius_km=float(radius_km),
        sensor_indices=idx,
        D=D,
        adjacency=adj,
        sensor_ids=[graph.sensor_ids[i] for i in idx],
    )
