"""Learned vector fields with a conservative/dissipative split.

A metriplectic field composes a skew channel J*grad(H) with a dissipative
channel -G*grad(Phi), where G = L L^T is positive semidefinite by
construction. Degeneracy of the dissipative channel with respect to H is
enforced either hard (orthogonal projection of G against grad(H)) or soft
(penalty terms during training). The unconstrained baseline maps the same
features straight to a velocity.

All learned scalars are tanh MLPs of [x, phi(t)] where phi is a Fourier
time embedding. Graphs are built per batch size and cached; parameters are
read live from the store, so optimizer updates need no graph rebuilds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError

TWO_PI = 2.0 * np.pi

CHECKPOINT_FORMAT = "metriflow-checkpoint-v1"


# ---------------------------------------------------------------------------
# time embedding


def default_frequencies(k):
    """Octave ladder 1, 2, 4, ... over the normalized time unit."""
    return np.array([2.0 ** i for i in range(k)], dtype=np.float64)


def embed_time(t, frequencies):
    """[sin(2 pi f_i t) ... , cos(2 pi f_i t) ...] for scalar t."""
    freqs = np.asarray(frequencies, dtype=np.float64)
    ang = (float(t) * freqs) * TWO_PI
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _time_features(t_node, frequencies):
    # t_node: (B, 1) -> (B, 2K), sin block then cos block
    k = len(frequencies)
    row = ad.constant(np.asarray(frequencies, dtype=np.float64).reshape(1, k))
    ang = ad.scale(ad.matmul(t_node, row), TWO_PI)
    return ad.concat([ad.sin(ang), ad.cos(ang)], axis=1)


# ---------------------------------------------------------------------------
# structure operators


def skew_matrix(d):
    """Canonical symplectic block [[0, I], [-I, 0]]; exactly antisymmetric."""
    if d % 2 != 0:
        raise ValueError(f"canonical skew operator needs even dimension, got {d}")
    half = d // 2
    j = np.zeros((d, d))
    j[:half, half:] = np.eye(half)
    j[half:, :half] = -np.eye(half)
    return j


def deg_project(g_matrix, grad_h, eps=1e-12):
    """Project a PSD metric so its range is orthogonal to grad_h.

    Returns P G P with P = I - g g^T / (|g|^2 + eps). Symmetry and positive
    semidefiniteness survive because the result is a congruence of G. A
    near-zero gradient leaves G untouched.
    """
    g = np.asarray(grad_h, dtype=np.float64)
    gm = np.asarray(g_matrix, dtype=np.float64)
    nrm2 = float(g @ g)
    if np.sqrt(nrm2) < 1e-12:
        return gm.copy()
    p = np.eye(len(g)) - np.outer(g, g) / (nrm2 + eps)
    return p @ gm @ p


def _project_rows(vec, grad_rows, eps):
    # graph-side row-wise projector: vec - g * <g, vec> / (|g|^2 + eps)
    b, d = vec.shape
    ones_col = ad.constant(np.ones((d, 1)))
    ones_row = ad.constant(np.ones((1, d)))
    dots = ad.matmul(ad.mul(grad_rows, vec), ones_col)
    nrm2 = ad.matmul(ad.mul(grad_rows, grad_rows), ones_col)
    coef = ad.div(dots, ad.add(nrm2, ad.constant(np.full((b, 1), eps))))
    return ad.sub(vec, ad.mul(grad_rows, ad.matmul(coef, ones_row)))


def _row_dot(a, b):
    d = a.shape[1]
    return ad.matmul(ad.mul(a, b), ad.constant(np.ones((d, 1))))


def _row_broadcast(col, d):
    return ad.matmul(col, ad.constant(np.ones((1, d))))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class FieldConfig:
    kind: str = "metriplectic"        # "metriplectic" | "baseline"
    d: int = 2
    hidden: int = 2
    width: int = 64
    n_frequencies: int = 8
    degeneracy: str = "hard"          # "hard" | "soft"
    h_mode: str = "learned"           # "learned" | "e_phys"
    shrink: bool = True
    rank: int = 2
    range_restrict: bool = False
    eps_proj: float = 1e-12
    time_scale: float = 5.0           # physical seconds spanned by t in [0, 1]
    mass: float = 1.0
    gravity: float = 1.0
    length: float = 1.0

    def __post_init__(self):
        if self.kind not in ("metriplectic", "baseline"):
            raise ValueError(f"unknown field kind '{self.kind}'")
        if self.degeneracy not in ("hard", "soft"):
            raise ValueError(f"unknown degeneracy mode '{self.degeneracy}'")
        if self.h_mode not in ("learned", "e_phys"):
            raise ValueError(f"unknown h_mode '{self.h_mode}'")

    @property
    def feature_dim(self):
        return self.d + 2 * self.n_frequencies

    @property
    def frequencies(self):
        return default_frequencies(self.n_frequencies)

    def descriptor(self):
        return {
            "kind": self.kind,
            "d": self.d,
            "hidden": self.hidden,
            "width": self.width,
            "K": self.n_frequencies,
            "degeneracy": self.degeneracy,
            "h_mode": self.h_mode,
            "shrink": self.shrink,
            "rank": self.rank,
            "range_restrict": self.range_restrict,
            "eps_proj": self.eps_proj,
            "time_scale": self.time_scale,
            "mass": self.mass,
            "gravity": self.gravity,
            "length": self.length,
        }

    @classmethod
    def from_descriptor(cls, desc):
        desc = dict(desc)
        desc["n_frequencies"] = desc.pop("K")
        names = {f.name for f in dataclass_fields(cls)}
        return cls(**{k: v for k, v in desc.items() if k in names})


# ---------------------------------------------------------------------------
# MLP helpers


def init_mlp(store, prefix, sizes, rng):
    """Uniform +-1/sqrt(fan-in) weights, zero biases."""
    for i, (din, dout) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(din)
        store.add(f"{prefix}.w{i}", rng.uniform(-bound, bound, size=(din, dout)))
        store.add(f"{prefix}.b{i}", np.zeros((1, dout)))


def apply_mlp(store, prefix, x, n_layers):
    h = x
    b_rows = ad.constant(np.ones((x.shape[0], 1)))
    for i in range(n_layers):
        w = ad.parameter(store, f"{prefix}.w{i}")
        b = ad.parameter(store, f"{prefix}.b{i}")
        z = ad.add(ad.matmul(h, w), ad.matmul(b_rows, b))
        h = ad.tanh(z) if i < n_layers - 1 else z
    return h


# ---------------------------------------------------------------------------
# graph assembly


@dataclass
class FieldGraph:
    """Nodes of one batched field evaluation (and training penalty terms)."""

    x: ad.Node
    t: ad.Node
    v: ad.Node
    v_degenerate: ad.Node | None = None
    conservative: ad.Node | None = None
    dissipative: ad.Node | None = None
    grad_h: ad.Node | None = None
    grad_phi: ad.Node | None = None
    h: ad.Node | None = None
    phi: ad.Node | None = None
    gamma: ad.Node | None = None
    l_flat: ad.Node | None = None
    pen_soft: ad.Node | None = None
    pen_reg: ad.Node | None = None
    param_names: tuple = ()


def _energy_graph(cfg, x):
    # physical pendulum energy p^2 / (2M) + MgL (1 - cos q), row-wise
    b = x.shape[0]
    q = ad.slice_(x, 1, 0, 1)
    p = ad.slice_(x, 1, 1, 2)
    kinetic = ad.scale(ad.square(p), 0.5 / cfg.mass)
    mgl = cfg.mass * cfg.gravity * cfg.length
    potential = ad.scale(ad.sub(ad.constant(np.ones((b, 1))), ad.cos(q)), mgl)
    return ad.add(kinetic, potential)


def build_metriplectic_graph(cfg, store, batch):
    if cfg.d != 2 and (cfg.shrink or cfg.h_mode == "e_phys"):
        raise GraphError("shrink and e_phys modes assume a planar (q, p) state")
    b = int(batch)
    d = cfg.d
    x = ad.input_node("x", (b, d))
    t = ad.input_node("t", (b, 1))
    feats = ad.concat([x, _time_features(t, cfg.frequencies)], axis=1)

    if cfg.h_mode == "learned":
        h_val = apply_mlp(store, "h", feats, cfg.hidden + 1)
    else:
        h_val = _energy_graph(cfg, x)
    grad_h = ad.gradients(ad.sum_all(h_val), [x])[0]

    if cfg.shrink:
        p = ad.slice_(x, 1, d - 1, d)
        phi_val = ad.scale(ad.square(p), 0.5)
        grad_phi = ad.concat([ad.constant(np.zeros((b, d - 1))), p], axis=1)
        gamma = ad.softplus(apply_mlp(store, "gamma", feats, cfg.hidden + 1))
        l_flat = None

        def metric_apply(z):
            zp = ad.slice_(z, 1, d - 1, d)
            return ad.concat([ad.constant(np.zeros((b, d - 1))), ad.mul(gamma, zp)], axis=1)

        pen_gh = ad.scale(ad.sum_all(ad.square(ad.mul(gamma, ad.slice_(grad_h, 1, d - 1, d)))), 1.0 / b)
        pen_gf = ad.scale(ad.sum_all(ad.square(gamma)), 1.0 / b)
    else:
        phi_val = apply_mlp(store, "phi", feats, cfg.hidden + 1)
        grad_phi = ad.gradients(ad.sum_all(phi_val), [x])[0]
        gamma = None
        l_flat = apply_mlp(store, "l", feats, cfg.hidden + 1)
        if l_flat.shape[1] != d * cfg.rank:
            raise GraphError("metric factor head width must be d * rank")
        if cfg.range_restrict:
            # zero the q-block rows of every column of L
            mask = np.zeros((1, d * cfg.rank))
            for j in range(cfg.rank):
                mask[0, j * d + d // 2 : (j + 1) * d] = 1.0
            l_flat = ad.mul(l_flat, ad.matmul(ad.constant(np.ones((b, 1))), ad.constant(mask)))
        cols = [ad.slice_(l_flat, 1, j * d, (j + 1) * d) for j in range(cfg.rank)]

        def metric_apply(z):
            out = None
            for col in cols:
                term = ad.mul(col, _row_broadcast(_row_dot(col, z), d))
                out = term if out is None else ad.add(out, term)
            return out

        pen_gh = ad.scale(ad.sum_all(ad.square(metric_apply(grad_h))), 1.0 / b)
        pen_gf = None
        for j in range(cfg.rank):
            for k in range(cfg.rank):
                term = ad.sum_all(ad.square(_row_dot(cols[j], cols[k])))
                pen_gf = term if pen_gf is None else ad.add(pen_gf, term)
        pen_gf = ad.scale(pen_gf, 1.0 / b)

    if cfg.degeneracy == "hard":
        def degenerate_metric(z):
            return _project_rows(metric_apply(_project_rows(z, grad_h, cfg.eps_proj)),
                                 grad_h, cfg.eps_proj)
    else:
        degenerate_metric = metric_apply

    j_t = ad.constant(skew_matrix(d).T)
    conservative = ad.matmul(grad_h, j_t)
    # shrink mode keeps its raw momentum-damping channel (that is the channel
    # definition, and what the closed-form dissipative substep discretizes);
    # otherwise hard mode evaluates with the projected metric
    if cfg.shrink:
        dissipative = ad.scale(metric_apply(grad_phi), -1.0)
    else:
        dissipative = ad.scale(degenerate_metric(grad_phi), -1.0)
    v = ad.add(conservative, dissipative)
    v_degenerate = ad.add(conservative, ad.scale(degenerate_metric(grad_phi), -1.0))

    pen_jphi = ad.scale(ad.sum_all(ad.square(ad.matmul(grad_phi, j_t))), 1.0 / b)
    pen_soft = ad.add(pen_gh, pen_jphi)
    pen_reg = ad.add(ad.scale(ad.sum_all(ad.square(grad_h)), 1.0 / b), pen_gf)

    names = tuple(sorted(store.values))
    return FieldGraph(
        x=x, t=t, v=v, v_degenerate=v_degenerate,
        conservative=conservative, dissipative=dissipative,
        grad_h=grad_h, grad_phi=grad_phi, h=h_val, phi=phi_val,
        gamma=gamma, l_flat=l_flat,
        pen_soft=pen_soft, pen_reg=pen_reg, param_names=names,
    )


def build_baseline_graph(cfg, store, batch):
    b = int(batch)
    x = ad.input_node("x", (b, cfg.d))
    t = ad.input_node("t", (b, 1))
    feats = ad.concat([x, _time_features(t, cfg.frequencies)], axis=1)
    v = apply_mlp(store, "f", feats, cfg.hidden + 1)
    return FieldGraph(x=x, t=t, v=v, param_names=tuple(sorted(store.values)))


# ---------------------------------------------------------------------------
# field classes


class _FieldBase:
    """Shared program caching and single-point evaluation plumbing."""

    def __init__(self, config, store):
        self.config = config
        self.store = store
        self._graphs = {}
        self._programs = {}

    def graph(self, batch):
        if batch not in self._graphs:
            self._graphs[batch] = self._build(batch)
        return self._graphs[batch]

    def _program(self, batch, names):
        key = (batch, names)
        if key not in self._programs:
            g = self.graph(batch)
            outputs = {n: getattr(g, n) for n in names if getattr(g, n) is not None}
            self._programs[key] = ad.Program(outputs, inputs={"x": g.x, "t": g.t})
        return self._programs[key]

    def _run_point(self, x, t, names):
        prog = self._program(1, names)
        xv = np.asarray(x, dtype=np.float64).reshape(1, self.config.d)
        out = prog.run(x=xv, t=np.array([[float(t)]]))
        if not all(np.all(np.isfinite(v)) for v in out.values()):
            g = self.graph(1)
            bad = ad.find_nonfinite([g.v], {g.x: xv, g.t: np.array([[float(t)]])})
            raise GraphError(f"non-finite intermediate at node {bad}")
        return out

    def velocity_batch(self, xs, ts):
        xs = np.asarray(xs, dtype=np.float64)
        prog = self._program(xs.shape[0], ("v",))
        return prog.run(x=xs, t=np.asarray(ts, dtype=np.float64).reshape(-1, 1))["v"]

    def velocity(self, x, t):
        return self._run_point(x, t, ("v",))["v"][0].copy()


class MetriplecticField(_FieldBase):
    """Learned skew/metric split with hard or soft degeneracy."""

    def __init__(self, config=None, store=None, seed=0):
        cfg = config or FieldConfig()
        if cfg.kind != "metriplectic":
            raise ValueError("MetriplecticField needs kind='metriplectic'")
        if store is None:
            store = ParameterInit.metriplectic(cfg, seed)
        super().__init__(cfg, store)
        self.J = skew_matrix(cfg.d)

    def _build(self, batch):
        return build_metriplectic_graph(self.config, self.store, batch)

    _DIAG = ("v", "conservative", "dissipative", "grad_h", "grad_phi", "h", "phi", "gamma", "l_flat")

    def eval_field(self, x, t):
        """Velocity plus the per-channel diagnostics at one point."""
        out = self._run_point(x, t, self._DIAG)
        diag = {
            "grad_h": out["grad_h"][0].copy(),
            "grad_phi": out["grad_phi"][0].copy(),
            "conservative": out["conservative"][0].copy(),
            "dissipative": out["dissipative"][0].copy(),
            "metric": self.metric_matrix(x, t),
        }
        return out["v"][0].copy(), diag

    def degenerate_velocity(self, x, t):
        """Velocity with the degeneracy-projected dissipative channel.

        Equals velocity() except for hard shrink fields, whose sampled
        channel is deliberately the raw momentum damping.
        """
        return self._run_point(x, t, ("v_degenerate",))["v_degenerate"][0].copy()

    def grad_h(self, x, t):
        return self._run_point(x, t, ("grad_h",))["grad_h"][0].copy()

    def grad_phi(self, x, t):
        return self._run_point(x, t, ("grad_phi",))["grad_phi"][0].copy()

    def h_value(self, x, t):
        return float(self._run_point(x, t, ("h",))["h"][0, 0])

    def phi_value(self, x, t):
        return float(self._run_point(x, t, ("phi",))["phi"][0, 0])

    def gamma_value(self, x, t):
        if not self.config.shrink:
            raise GraphError("field has no scalar damping head")
        return float(self._run_point(x, t, ("gamma",))["gamma"][0, 0])

    def metric_factor(self, x, t):
        """Raw low-rank factor L (d x rank) at one point."""
        cfg = self.config
        if cfg.shrink:
            raise GraphError("shrink-mode field has no explicit factor")
        flat = self._run_point(x, t, ("l_flat",))["l_flat"][0]
        return flat.reshape(cfg.rank, cfg.d).T

    def metric_matrix_raw(self, x, t):
        cfg = self.config
        if cfg.shrink:
            g = np.zeros((cfg.d, cfg.d))
            g[-1, -1] = self.gamma_value(x, t)
            return g
        l = self.metric_factor(x, t)
        return l @ l.T

    def metric_matrix(self, x, t):
        """Effective metric: projected against grad(H) in hard mode."""
        g = self.metric_matrix_raw(x, t)
        if self.config.degeneracy == "hard":
            return deg_project(g, self.grad_h(x, t), self.config.eps_proj)
        return g

    def metric_term(self, x, t):
        """Effective dissipative update direction G~ grad(Phi)."""
        return -self._run_point(x, t, ("dissipative",))["dissipative"][0]

    def dissipation_rate(self, x, t):
        """grad(Phi)^T G~ grad(Phi) as an exact sum of squares (>= 0)."""
        cfg = self.config
        out = self._run_point(x, t, ("grad_h", "grad_phi", "gamma", "l_flat"))
        gp = out["grad_phi"][0]
        if cfg.degeneracy == "hard":
            gh = out["grad_h"][0]
            nrm2 = float(gh @ gh)
            if np.sqrt(nrm2) >= 1e-12:
                gp = gp - gh * (float(gh @ gp) / (nrm2 + cfg.eps_proj))
        if cfg.shrink:
            return float(out["gamma"][0, 0]) * gp[-1] ** 2
        l = out["l_flat"][0].reshape(cfg.rank, cfg.d).T
        w = l.T @ gp
        return float(np.sum(w * w))

    # sampler hooks -------------------------------------------------------

    @property
    def h_separable(self):
        return self.config.h_mode == "e_phys"

    @property
    def kinetic_inv_mass(self):
        return 1.0 / self.config.mass

    def grad_v_potential(self, q):
        cfg = self.config
        return cfg.mass * cfg.gravity * cfg.length * np.sin(q)

    @property
    def supports_shrink(self):
        return self.config.shrink


class BaselineField(_FieldBase):
    """Unconstrained neural velocity field over the same features."""

    def __init__(self, config=None, store=None, seed=0):
        cfg = config or FieldConfig(kind="baseline")
        if cfg.kind != "baseline":
            raise ValueError("BaselineField needs kind='baseline'")
        if store is None:
            store = ParameterInit.baseline(cfg, seed)
        super().__init__(cfg, store)

    def _build(self, batch):
        return build_baseline_graph(self.config, self.store, batch)

    def eval_field(self, x, t):
        return self.velocity(x, t), {}


class ShrinkPendulumField:
    """Closed-form planar field: known energy plus constant momentum damping.

    The sampled velocity is the damped pendulum itself, written as a skew
    channel plus a raw momentum shrink. The degeneracy-projected channel is
    exposed separately for the conservation checks. h_mode 'const' freezes
    the conservative channel.
    """

    def __init__(self, gamma=0.15, mass=1.0, gravity=1.0, length=1.0,
                 h_mode="e_phys", eps_proj=1e-12):
        if h_mode not in ("e_phys", "const"):
            raise ValueError(f"unknown h_mode '{h_mode}'")
        self.gamma = float(gamma)
        self.mass = float(mass)
        self.mgl = float(mass) * float(gravity) * float(length)
        self.h_mode = h_mode
        self.eps_proj = eps_proj
        self.config = FieldConfig(
            kind="metriplectic", d=2, degeneracy="hard",
            h_mode="e_phys", shrink=True, mass=mass, gravity=gravity, length=length,
        )
        self.J = skew_matrix(2)

    def h_value(self, x, t=0.0):
        if self.h_mode == "const":
            return 0.0
        q, p = x
        return 0.5 * p * p / self.mass + self.mgl * (1.0 - np.cos(q))

    def grad_h(self, x, t=0.0):
        if self.h_mode == "const":
            return np.zeros(2)
        q, p = x
        return np.array([self.mgl * np.sin(q), p / self.mass])

    def phi_value(self, x, t=0.0):
        return 0.5 * float(x[1]) ** 2

    def grad_phi(self, x, t=0.0):
        return np.array([0.0, float(x[1])])

    def gamma_value(self, x, t=0.0):
        return self.gamma

    def metric_matrix_raw(self, x, t=0.0):
        return np.array([[0.0, 0.0], [0.0, self.gamma]])

    def metric_matrix(self, x, t=0.0):
        return deg_project(self.metric_matrix_raw(x, t), self.grad_h(x, t), self.eps_proj)

    def metric_term(self, x, t=0.0):
        return np.array([0.0, self.gamma * float(x[1])])

    def _projected_grad_phi(self, x, t):
        gp = self.grad_phi(x, t)
        gh = self.grad_h(x, t)
        nrm2 = float(gh @ gh)
        if np.sqrt(nrm2) < 1e-12:
            return gp
        return gp - gh * (float(gh @ gp) / (nrm2 + self.eps_proj))

    def dissipation_rate(self, x, t=0.0):
        gp = self._projected_grad_phi(x, t)
        return self.gamma * gp[1] ** 2

    def velocity(self, x, t=0.0):
        return self.J @ self.grad_h(x, t) - self.metric_term(x, t)

    def degenerate_velocity(self, x, t=0.0):
        gh = self.grad_h(x, t)
        nrm2 = float(gh @ gh)
        gp = self._projected_grad_phi(x, t)
        term = np.array([0.0, self.gamma * gp[1]])
        if np.sqrt(nrm2) >= 1e-12:
            term = term - gh * (float(gh @ term) / (nrm2 + self.eps_proj))
        return self.J @ gh - term

    def eval_field(self, x, t=0.0):
        cons = self.J @ self.grad_h(x, t)
        diss = -self.metric_term(x, t)
        diag = {
            "grad_h": self.grad_h(x, t),
            "grad_phi": self.grad_phi(x, t),
            "conservative": cons,
            "dissipative": diss,
            "metric": self.metric_matrix(x, t),
        }
        return cons + diss, diag

    # sampler hooks -------------------------------------------------------

    @property
    def h_separable(self):
        return True

    @property
    def kinetic_inv_mass(self):
        return 0.0 if self.h_mode == "const" else 1.0 / self.mass

    def grad_v_potential(self, q):
        if self.h_mode == "const":
            return np.zeros_like(np.asarray(q, dtype=np.float64))
        return self.mgl * np.sin(q)

    @property
    def supports_shrink(self):
        return True


class ParameterInit:
    """Seed-controlled parameter creation for each field kind."""

    @staticmethod
    def metriplectic(cfg, seed):
        rng = np.random.default_rng(seed)
        store = ad.ParameterStore()
        layers = [cfg.feature_dim] + [cfg.width] * cfg.hidden
        if cfg.h_mode == "learned":
            init_mlp(store, "h", layers + [1], rng)
        if cfg.shrink:
            init_mlp(store, "gamma", layers + [1], rng)
        else:
            init_mlp(store, "phi", layers + [1], rng)
            init_mlp(store, "l", layers + [cfg.d * cfg.rank], rng)
        return store

    @staticmethod
    def baseline(cfg, seed):
        rng = np.random.default_rng(seed)
        store = ad.ParameterStore()
        layers = [cfg.feature_dim] + [cfg.width] * cfg.hidden + [cfg.d]
        init_mlp(store, "f", layers, rng)
        return store


def make_field(config, seed=0, store=None):
    if config.kind == "metriplectic":
        return MetriplecticField(config, store=store, seed=seed)
    return BaselineField(config, store=store, seed=seed)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, field, meta=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "architecture": field.config.descriptor(),
        "parameters": field.store.state_dict(),
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a metriflow checkpoint: {path}")
    cfg = FieldConfig.from_descriptor(payload["architecture"])
    store = ad.ParameterStore.from_state_dict(payload["parameters"])
    return make_field(cfg, store=store), payload.get("meta", {})
