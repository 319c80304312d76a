"""Damped-pendulum ground truth, dataset generation, and rollout metrics.

The benchmark system is

    dq/dt = p / M
    dp/dt = -M g L sin(q) - gamma p

with energy E(q, p) = p^2 / (2 M) + M g L (1 - cos q), which decays at the
exact rate dE/dt = -gamma p^2 / M. Trajectories are integrated with a fine
fixed-step RK4 and subsampled onto the coarse observation grid; the learned
models only ever see consecutive state pairs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

DEFAULT_GAMMA_RANGE = (0.05, 0.30)
DEFAULT_Q_RANGE = (-0.8 * np.pi, 0.8 * np.pi)
DEFAULT_P_RANGE = (-1.5, 1.5)


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    gravity: float = 1.0
    length: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.mass <= 0 or self.gravity <= 0 or self.length <= 0:
            raise ValueError("mass, gravity, and length must be positive")

    @property
    def mgl(self):
        return self.mass * self.gravity * self.length


def pendulum_rhs(params, x):
    """Time derivative (dq/dt, dp/dt) of the damped pendulum."""
    q, p = x[..., 0], x[..., 1]
    return np.stack(
        [p / params.mass, -params.mgl * np.sin(q) - params.gamma * p], axis=-1
    )


def pendulum_energy(params, x):
    q, p = x[..., 0], x[..., 1]
    return 0.5 * p * p / params.mass + params.mgl * (1.0 - np.cos(q))


def pendulum_energy_grad(params, x):
    q, p = x[..., 0], x[..., 1]
    return np.stack([params.mgl * np.sin(q), p / params.mass], axis=-1)


def _rk4(rhs, x, h):
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_reference(params, x0, dt, n_steps, substeps=100):
    """Ground-truth trajectory on a coarse grid via fine-step RK4.

    Works on a single state (2,) or a batch (n, 2); with a batch, gamma may
    be an array of per-trajectory damping coefficients.
    """
    x = np.asarray(x0, dtype=np.float64)
    single = x.ndim == 1
    states = np.empty((n_steps + 1,) + x.shape)
    states[0] = x
    gamma = np.asarray(params.gamma, dtype=np.float64)
    if not single and gamma.ndim == 1:
        gamma = gamma[:, None]

    def rhs(y):
        q, p = y[..., 0:1], y[..., 1:2]
        return np.concatenate(
            [p / params.mass, -params.mgl * np.sin(q) - gamma * p], axis=-1
        )

    h = dt / substeps
    for k in range(n_steps):
        for _ in range(substeps):
            x = _rk4(rhs, x, h)
        states[k + 1] = x
    return states


# ---------------------------------------------------------------------------
# dataset


@dataclass
class Trajectory:
    gamma: float
    dt: float
    states: np.ndarray  # (n_steps + 1, 2)

    @property
    def times(self):
        return np.arange(len(self.states)) * self.dt


@dataclass
class Dataset:
    seed: int
    dt: float
    horizon: float
    params: PendulumParams
    gamma_range: tuple
    q_range: tuple
    p_range: tuple
    train: list
    test: list

    def pairs(self, split="train"):
        """All consecutive transitions (x_k, x_{k+1}) of one split, stacked."""
        trajs = self.train if split == "train" else self.test
        xs = np.concatenate([t.states[:-1] for t in trajs], axis=0)
        ys = np.concatenate([t.states[1:] for t in trajs], axis=0)
        return xs, ys

    def initial_states(self, split="test"):
        trajs = self.train if split == "train" else self.test
        return np.stack([t.states[0] for t in trajs])

    def terminal_states(self, split="test"):
        trajs = self.train if split == "train" else self.test
        return np.stack([t.states[-1] for t in trajs])

    def manifest(self):
        return {
            "seed": self.seed,
            "dt": self.dt,
            "horizon": self.horizon,
            "counts": {"train": len(self.train), "test": len(self.test)},
            "gamma_range": list(self.gamma_range),
            "q_range": list(self.q_range),
            "p_range": list(self.p_range),
            "params": {
                "mass": self.params.mass,
                "gravity": self.params.gravity,
                "length": self.params.length,
            },
        }


def generate_dataset(
    seed=0,
    n_train=500,
    n_test=100,
    dt=0.1,
    horizon=5.0,
    gamma_range=DEFAULT_GAMMA_RANGE,
    q_range=DEFAULT_Q_RANGE,
    p_range=DEFAULT_P_RANGE,
    params=None,
    fine_substeps=100,
):
    """Sample damped trajectories on a uniform grid, split train/test.

    Initial conditions and damping coefficients come from per-trajectory
    counter-based seed streams, so any subset is reproducible independent of
    generation order.
    """
    if n_train <= 0 or n_test <= 0:
        raise ValueError("trajectory counts must be positive")
    params = params or PendulumParams()
    n_steps = int(round(horizon / dt))
    total = n_train + n_test
    streams = np.random.SeedSequence(seed).spawn(total)
    q0 = np.empty(total)
    p0 = np.empty(total)
    gammas = np.empty(total)
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        gammas[i] = rng.uniform(*gamma_range)
        q0[i] = rng.uniform(*q_range)
        p0[i] = rng.uniform(*p_range)
    x0 = np.stack([q0, p0], axis=1)
    batch_params = PendulumParams(params.mass, params.gravity, params.length, gammas)
    states = integrate_reference(batch_params, x0, dt, n_steps, substeps=fine_substeps)

    trajs = [
        Trajectory(gamma=float(gammas[i]), dt=dt, states=states[:, i, :].copy())
        for i in range(total)
    ]
    return Dataset(
        seed=seed, dt=dt, horizon=horizon, params=params,
        gamma_range=tuple(gamma_range), q_range=tuple(q_range), p_range=tuple(p_range),
        train=trajs[:n_train], test=trajs[n_train:],
    )


def _write_traj_csv(path, traj):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "q", "p", "gamma"])
        for k, (q, p) in enumerate(traj.states):
            writer.writerow([repr(k * traj.dt), repr(float(q)), repr(float(p)), repr(traj.gamma)])


def _read_traj_csv(path):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    states = np.array([[float(r["q"]), float(r["p"])] for r in rows])
    times = np.array([float(r["t"]) for r in rows])
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    return Trajectory(gamma=float(rows[0]["gamma"]), dt=dt, states=states)


def save_dataset(dataset, outdir):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(dataset.manifest(), fh, indent=1, sort_keys=True)
    for split, trajs in (("train", dataset.train), ("test", dataset.test)):
        split_dir = os.path.join(outdir, split)
        os.makedirs(split_dir, exist_ok=True)
        for i, traj in enumerate(trajs):
            _write_traj_csv(os.path.join(split_dir, f"traj_{i:04d}.csv"), traj)


def load_dataset(outdir):
    with open(os.path.join(outdir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    splits = {}
    for split in ("train", "test"):
        split_dir = os.path.join(outdir, split)
        names = sorted(
            n for n in os.listdir(split_dir) if n.startswith("traj_") and n.endswith(".csv")
        )
        splits[split] = [_read_traj_csv(os.path.join(split_dir, n)) for n in names]
    p = manifest["params"]
    return Dataset(
        seed=manifest["seed"], dt=manifest["dt"], horizon=manifest["horizon"],
        params=PendulumParams(p["mass"], p["gravity"], p["length"]),
        gamma_range=tuple(manifest["gamma_range"]),
        q_range=tuple(manifest["q_range"]), p_range=tuple(manifest["p_range"]),
        train=splits["train"], test=splits["test"],
    )


# ---------------------------------------------------------------------------
# metrics


def physics_metrics(energies, rates):
    """Per-trajectory physical-consistency metrics of one rollout.

    energies: recorded E at every grid point; rates: recorded dE/dt. Both
    fraction metrics are normalized by the number of transitions. Returns
    None when E(0) is not positive (ratio metrics undefined).
    """
    e = np.asarray(energies, dtype=np.float64)
    r = np.asarray(rates, dtype=np.float64)
    if len(e) < 2:
        raise ValueError("need at least two grid points")
    if not e[0] > 0.0:
        return None
    transitions = len(e) - 1
    return {
        "increase_fraction": float(np.sum(e[1:] > e[:-1]) / transitions),
        "max_energy_ratio": float(np.max(e) / e[0]),
        "final_energy_ratio": float(e[-1] / e[0]),
        "sign_error_fraction": float(np.sum(r[:-1] > 0.0) / transitions),
    }


def aggregate_metrics(per_traj):
    """Mean of each metric over trajectories, skipping flagged (None) ones."""
    valid = [m for m in per_traj if m is not None]
    if not valid:
        raise ValueError("no valid trajectories to aggregate")
    keys = valid[0].keys()
    agg = {k: float(np.mean([m[k] for m in valid])) for k in keys}
    agg["n_valid"] = len(valid)
    agg["n_excluded"] = len(per_traj) - len(valid)
    return agg


def sliced_w2(a, b, n_projections=128, seed=0):
    """Sliced 2-Wasserstein distance between two point sets.

    Averages squared 1-d optimal-transport costs (sorted matching) over
    random unit directions and returns the square root. Unequal sizes are
    reconciled by subsampling the larger set with the same seed stream.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty point set")
    if n_projections < 1:
        raise ValueError("need at least one projection")
    rng = np.random.default_rng(seed)
    if len(a) != len(b):
        n = min(len(a), len(b))
        if len(a) > n:
            a = a[rng.choice(len(a), size=n, replace=False)]
        else:
            b = b[rng.choice(len(b), size=n, replace=False)]
    d = a.shape[1]
    dirs = rng.normal(size=(n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(a @ dirs.T, axis=0)
    pb = np.sort(b @ dirs.T, axis=0)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))
