"""Numeric checks of the structural guarantees.

Three families of checks, all reported as plain dictionaries suitable for
JSON emission:

* conservation/dissipation: at random points, the velocity of a
  hard-degenerate field is orthogonal to grad(H) and the dissipation rate
  is a non-positive quadratic form;
* step guarantees: over a geometric step-size grid, the conservative
  substeps drift H at third order in h, and the dissipative substep
  decreases Phi by at least h times the local rate up to a bounded h^2
  term;
* projected descent: an explicit step along a projected velocity cannot
  raise the trusted energy beyond the curvature term of the descent lemma.
"""

from __future__ import annotations

import numpy as np

from . import integrators
from .pendulum import PendulumParams, pendulum_energy, pendulum_energy_grad

DEFAULT_Q_BOX = (-np.pi, np.pi)
DEFAULT_P_BOX = (-2.0, 2.0)


def _sample_points(n, seed, q_box, p_box):
    rng = np.random.default_rng(seed)
    qs = rng.uniform(q_box[0], q_box[1], size=n)
    ps = rng.uniform(p_box[0], p_box[1], size=n)
    ts = rng.uniform(0.0, 1.0, size=n)
    return np.stack([qs, ps], axis=1), ts


def fit_loglog_slope(xs, ys):
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


def verify_conservation_dissipation(
    field, n_points=1000, seed=0,
    q_box=DEFAULT_Q_BOX, p_box=DEFAULT_P_BOX,
    conservation_tol=1e-9, dissipation_tol=1e-12,
):
    """Pointwise conservation and dissipation residuals of a field.

    Checks |<grad H, v>| <= tol and that the dissipation-channel rate
    -grad(Phi)^T G~ grad(Phi) is non-positive. The full <grad Phi, v>,
    which also carries the skew channel, is reported separately since the
    skew operator is not degenerate against Phi.
    """
    if not hasattr(field, "degenerate_velocity"):
        raise ValueError("conservation check requires a split-structure field")
    xs, ts = _sample_points(n_points, seed, q_box, p_box)
    cons_resid = np.empty(n_points)
    diss_rate = np.empty(n_points)
    full_phi_rate = np.empty(n_points)
    sampled_h_rate = np.empty(n_points)
    for i in range(n_points):
        v_deg = field.degenerate_velocity(xs[i], ts[i])
        v, diag = field.eval_field(xs[i], ts[i])
        cons_resid[i] = abs(float(diag["grad_h"] @ v_deg))
        diss_rate[i] = -field.dissipation_rate(xs[i], ts[i])
        full_phi_rate[i] = float(diag["grad_phi"] @ v_deg)
        sampled_h_rate[i] = float(diag["grad_h"] @ v)
    cons_pass = int(np.sum(cons_resid <= conservation_tol))
    diss_pass = int(np.sum(diss_rate <= dissipation_tol))
    return {
        "n_points": n_points,
        "degeneracy": getattr(field.config, "degeneracy", "n/a"),
        "conservation": {
            "tolerance": conservation_tol,
            "max_abs_rate": float(np.max(cons_resid)),
            "pass_count": cons_pass,
            "pass": cons_pass == n_points,
        },
        "dissipation": {
            "tolerance": dissipation_tol,
            "max_rate": float(np.max(diss_rate)),
            "pass_count": diss_pass,
            "pass": diss_pass == n_points,
        },
        "full_phi_rate": {
            "min": float(np.min(full_phi_rate)),
            "max": float(np.max(full_phi_rate)),
            "nonpositive_count": int(np.sum(full_phi_rate <= 0.0)),
        },
        "sampled_channel_h_rate": {
            "min": float(np.min(sampled_h_rate)),
            "max": float(np.max(sampled_h_rate)),
        },
    }


def verify_step_guarantees(
    field, h_grid=(0.1, 0.05, 0.025, 0.0125), x0=(1.2, 0.7),
    horizon=1.0, slope_tol=0.3, order=2, grad_phi_floor=1e-6,
    prox_mode=None,
):
    """Convergence-order and decay checks of the split sampler.

    (i) mean per-step |dH| over the two conservative substeps must scale as
    h^(order+1) (log-log slope within slope_tol of order+1 from below);
    the dissipative substep is excluded since it is the channel meant to
    move energy-like quantities.
    (ii) per-step dPhi of the dissipative substep must satisfy
    dPhi <= -h r + C h^2 with r the local rate grad(Phi)^T G grad(Phi) and
    a finite fitted C, and be strictly negative whenever |grad Phi| exceeds
    the floor.
    """
    h_grid = sorted(h_grid, reverse=True)
    if len(h_grid) < 2:
        raise ValueError("need at least two step sizes")
    mean_dh = []
    c_fits = []
    neg_violations = 0
    checked = 0
    for h in h_grid:
        steps = max(1, int(round(horizon / h)))
        x = np.asarray(x0, dtype=np.float64)
        dh_vals = np.empty(steps)
        excess = []
        for k in range(steps):
            rate = field.gamma_value(x, 0.0) * field.grad_phi(x, 0.0)[-1] ** 2 \
                if getattr(field, "supports_shrink", False) else field.dissipation_rate(x, 0.0)
            grad_phi_norm = float(np.linalg.norm(field.grad_phi(x, 0.0)))
            x, diag = integrators.strang_step(field, x, 0.0, h, prox_mode=prox_mode)
            dh_vals[k] = abs(diag["dH_ham"])
            excess.append((diag["dPhi_metric"] + h * rate) / (h * h))
            checked += 1
            if grad_phi_norm > grad_phi_floor and not diag["dPhi_metric"] < 0.0:
                neg_violations += 1
        mean_dh.append(float(np.mean(dh_vals)))
        c_fits.append(float(max(0.0, np.max(excess))))
    slope = fit_loglog_slope(h_grid, mean_dh)
    slope_target = order + 1 - slope_tol
    c_const = float(np.max(c_fits))
    return {
        "h_grid": list(h_grid),
        "conservation_order": {
            "mean_abs_dh": mean_dh,
            "slope": slope,
            "slope_min": slope_target,
            "pass": slope >= slope_target,
        },
        "decay_bound": {
            "fitted_c": c_const,
            "finite": bool(np.isfinite(c_const)),
            "steps_checked": checked,
            "strict_negativity_violations": neg_violations,
            "pass": bool(np.isfinite(c_const)) and neg_violations == 0,
        },
    }


def verify_projected_descent(
    field, params=None, n_points=500, h=1e-3, eps=1e-9, seed=0,
    q_box=DEFAULT_Q_BOX, p_box=DEFAULT_P_BOX,
):
    """Descent-lemma check of the explicit projected step.

    For x+ = x + h v_proj(x) with a curvature bound L of the trusted
    energy, checks E(x+) <= E(x) - h [<grad E, v>]_+ + (L/2) h^2 |v_proj|^2.
    For the planar pendulum the Hessian of E is diag(MgL cos q, 1/M), so
    L = max(MgL, 1/M).
    """
    params = params or PendulumParams()
    lips = max(params.mgl, 1.0 / params.mass)
    xs, ts = _sample_points(n_points, seed, q_box, p_box)
    violations = 0
    max_excess = -np.inf
    nonpositive_rates = 0
    for i in range(n_points):
        x = xs[i]
        v = field.velocity(x, ts[i])
        g = pendulum_energy_grad(params, x)
        v_proj = integrators.project_velocity(v, g, eps)
        if float(g @ v_proj) <= 0.0:
            nonpositive_rates += 1
        e0 = pendulum_energy(params, x)
        e1 = pendulum_energy(params, x + h * v_proj)
        bound = e0 - h * max(0.0, float(g @ v)) + 0.5 * lips * h * h * float(v_proj @ v_proj)
        excess = e1 - bound
        max_excess = max(max_excess, excess)
        if excess > 1e-12:
            violations += 1
    return {
        "n_points": n_points,
        "h": h,
        "curvature_bound": lips,
        "max_excess": float(max_excess),
        "violations": violations,
        "projected_rate_nonpositive_count": nonpositive_rates,
        "pass": violations == 0 and nonpositive_rates == n_points,
    }
