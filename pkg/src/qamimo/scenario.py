"""Multicell geometry, user drops, path loss and pilot assignment.

Cells are squares on a ``rows x cols`` grid with the base station at each
cell center.  Distances are in kilometres, gains are linear.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration."""


SUPPORTED_REUSE = (1, 3)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class NetworkConfig:
    """Scalar parameters of the multicell network.

    Defaults are the desk-scale setup (2x2 grid, K=3, M=16); use
    :meth:`paper_scale` for the 3x3, K=5, M=30 configuration.
    """

    L: int = 4
    K: int = 3
    M: int = 16
    f: int = 3
    tau_c: int = 200
    cell_side_km: float = 0.25
    bandwidth_hz: float = 20e6
    noise_power_dbm: float = -94.0
    asd_deg: float = 10.0
    tx_power_dbm: float = 30.0
    rng_seed: int = 0
    grid_shape: tuple[int, int] | None = None
    min_distance_km: float = 0.01

    @classmethod
    def paper_scale(cls, **overrides) -> "NetworkConfig":
        base = cls(L=9, K=5, M=30, f=3)
        return replace(base, **overrides)

    @property
    def tau_p(self) -> int:
        return self.f * self.K

    @property
    def tau_u(self) -> int:
        return self.tau_c - self.tau_p

    @property
    def prelog(self) -> float:
        return self.tau_u / self.tau_c

    @property
    def sigma2(self) -> float:
        return float(dbm_to_watt(self.noise_power_dbm))

    @property
    def shape(self) -> tuple[int, int]:
        if self.grid_shape is not None:
            return tuple(int(s) for s in self.grid_shape)
        g = math.isqrt(self.L)
        return (g, g)

    def powers(self) -> np.ndarray:
        """Uniform transmit powers in watts, shape ``(L, K)``."""
        return np.full((self.L, self.K), float(dbm_to_watt(self.tx_power_dbm)))

    def problems(self) -> list[str]:
        """All violated invariants, as human-readable messages."""
        out = []
        for name in ("L", "K", "M", "f", "tau_c"):
            if int(getattr(self, name)) < 1:
                out.append(f"{name} must be >= 1")
        if self.f not in SUPPORTED_REUSE:
            out.append(f"pilot reuse factor f={self.f} unsupported (use 1 or 3)")
        rows, cols = self.shape
        if rows * cols != self.L:
            if self.grid_shape is None:
                out.append(f"L={self.L} is not a perfect square; give grid_shape")
            else:
                out.append(f"grid_shape {self.grid_shape} does not hold L={self.L} cells")
        if self.tau_u <= 0:
            out.append(f"tau_u = tau_c - f*K = {self.tau_u} must be positive")
        if self.cell_side_km <= 0:
            out.append("cell_side_km must be positive")
        if not 0 <= self.min_distance_km < self.cell_side_km / 2:
            out.append("min_distance_km must lie in [0, cell_side_km/2)")
        if self.asd_deg < 0:
            out.append("asd_deg must be >= 0")
        return out

    def validate(self) -> "NetworkConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        return self


@dataclass(frozen=True)
class Grid:
    centers: np.ndarray  # (L, 2) km
    rows: np.ndarray  # (L,)
    cols: np.ndarray  # (L,)
    pilot_group: np.ndarray  # (L,)
    side_km: float

    @property
    def L(self) -> int:
        return len(self.centers)


def build_grid(config: NetworkConfig) -> Grid:
    """Square cells on a grid, BS at every center.

    With ``f = 3`` the pilot group of a cell is ``(row + 2*col) mod 3``, a
    three-colouring in which edge-adjacent cells never share a group.
    """
    config.validate()
    n_rows, n_cols = config.shape
    idx = np.arange(config.L)
    rows, cols = idx // n_cols, idx % n_cols
    side = config.cell_side_km
    centers = np.stack([(cols + 0.5) * side, (rows + 0.5) * side], axis=1)
    if config.f == 3:
        group = (rows + 2 * cols) % 3
    else:
        group = np.zeros(config.L, dtype=int)
    return Grid(centers=centers, rows=rows, cols=cols, pilot_group=group, side_km=side)


@dataclass(frozen=True)
class UserDrop:
    positions: np.ndarray  # (L, K, 2) km
    distances: np.ndarray  # (L_bs, L_cell, K) km, [j, i, k]
    angles: np.ndarray  # (L_bs, L_cell, K) rad, azimuth from BS j to user (i, k)


def _geometry(grid: Grid, positions: np.ndarray):
    delta = positions[None, :, :, :] - grid.centers[:, None, None, :]
    distances = np.hypot(delta[..., 0], delta[..., 1])
    angles = np.arctan2(delta[..., 1], delta[..., 0])
    return distances, angles


def drop_users(config: NetworkConfig, grid: Grid, rng: np.random.Generator) -> UserDrop:
    """K users per cell, uniform over the cell square.

    Points closer than ``config.min_distance_km`` to their own BS are
    redrawn; the far-field model does not hold there.
    """
    side = grid.side_km
    L, K = config.L, config.K
    offsets = rng.uniform(-side / 2, side / 2, size=(L, K, 2))
    too_close = np.hypot(offsets[..., 0], offsets[..., 1]) < config.min_distance_km
    while np.any(too_close):
        offsets[too_close] = rng.uniform(-side / 2, side / 2, size=(int(too_close.sum()), 2))
        too_close = np.hypot(offsets[..., 0], offsets[..., 1]) < config.min_distance_km
    positions = grid.centers[:, None, :] + offsets
    return drop_from_positions(grid, positions)


def drop_from_positions(grid: Grid, positions) -> UserDrop:
    """Build a drop from explicit user positions, shape ``(L, K, 2)`` in km."""
    positions = np.asarray(positions, dtype=float)
    distances, angles = _geometry(grid, positions)
    if np.any(distances <= 0):
        raise ValueError("a user coincides with a base station")
    return UserDrop(positions=positions, distances=distances, angles=angles)


def large_scale_gain(d_km):
    """Linear channel gain for the -148.1 dB / 37.6 log10(d) path-loss law."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    gain_db = -148.1 - 37.6 * np.log10(d)
    out = 10.0 ** (gain_db / 10.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PilotBook:
    pilot_index: np.ndarray  # (L, K) ints
    tau_p: int
    sets: dict = field(repr=False)  # (j, k) -> list of (i, k') sharing the pilot

    @property
    def L(self) -> int:
        return self.pilot_index.shape[0]

    @property
    def K(self) -> int:
        return self.pilot_index.shape[1]

    def copilot_mask(self) -> np.ndarray:
        """Boolean ``(L, K, L, K)``; entry ``[j, k, i, k']`` is True iff the
        two users share a pilot (the diagonal included)."""
        p = self.pilot_index
        return p[:, :, None, None] == p[None, None, :, :]

    def users_on_pilot(self, t: int) -> list[tuple[int, int]]:
        i, k = np.nonzero(self.pilot_index == t)
        return list(zip(i.tolist(), k.tolist()))

    def used_pilots(self) -> np.ndarray:
        return np.unique(self.pilot_index)


def build_pilot_book(config: NetworkConfig, grid: Grid) -> PilotBook:
    K = config.K
    pilot_index = grid.pilot_group[:, None] * K + np.arange(K)[None, :]
    return pilot_book_from_indices(pilot_index, config.tau_p)


def pilot_book_from_indices(pilot_index, tau_p: int) -> PilotBook:
    pilot_index = np.asarray(pilot_index, dtype=int)
    L, K = pilot_index.shape
    for j in range(L):
        if len(set(pilot_index[j].tolist())) != K:
            raise ConfigError(f"users in cell {j} do not have distinct pilots")
    if pilot_index.max() >= tau_p or pilot_index.min() < 0:
        raise ConfigError("pilot index out of range")
    sets = {}
    for j in range(L):
        for k in range(K):
            ii, kk = np.nonzero(pilot_index == pilot_index[j, k])
            sets[(j, k)] = list(zip(ii.tolist(), kk.tolist()))
    return PilotBook(pilot_index=pilot_index, tau_p=int(tau_p), sets=sets)


def export_drop_csv(path, drop: UserDrop, pilots: PilotBook) -> Path:
    path = Path(path)
    L, K = pilots.pilot_index.shape
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "user_id", "x_km", "y_km", "pilot_index"])
        for i in range(L):
            for k in range(K):
                x, y = drop.positions[i, k]
                writer.writerow([i, k, f"{x:.6f}", f"{y:.6f}", int(pilots.pilot_index[i, k])])
    return path
