"""Flow-matching regression on one-step transitions.

Each transition (x_k, x_{k+1}, dt) yields a bridge sample: a point on the
straight segment between the endpoints at a uniformly drawn coordinate tau,
paired with the constant target velocity (x_{k+1} - x_k) / dt. The field is
regressed onto these targets at (x_tau, tau); soft-degeneracy and magnitude
penalties are added for metriplectic fields. Optimization is AdamW with a
cosine-annealed learning rate and global-norm gradient clipping.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class TrainingPair:
    x_k: np.ndarray
    x_next: np.ndarray
    dt: float
    tau: float
    x_tau: np.ndarray
    u_tau: np.ndarray


def make_pair(x_k, x_next, dt, rng):
    """Bridge sample with tau drawn uniformly from the given generator."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x_k = np.asarray(x_k, dtype=np.float64)
    x_next = np.asarray(x_next, dtype=np.float64)
    tau = float(rng.uniform(0.0, 1.0))
    return TrainingPair(
        x_k=x_k, x_next=x_next, dt=float(dt), tau=tau,
        x_tau=(1.0 - tau) * x_k + tau * x_next,
        u_tau=(x_next - x_k) / dt,
    )


@dataclass(frozen=True)
class LossConfig:
    lambda_soft: float = 1e-2
    lambda_reg: float = 1e-4
    batch_size: int = 256
    epochs: int = 200
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    clip_norm: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self):
        if min(self.lambda_soft, self.lambda_reg, self.lr_max, self.lr_min) < 0:
            raise ValueError("rates and penalty weights must be non-negative")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def from_dict(cls, d):
        names = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in names})


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good_store):
        super().__init__(message)
        self.last_good_store = last_good_store


# ---------------------------------------------------------------------------
# loss graph


def _loss_program(field, batch, cfg):
    key = ("loss", batch, cfg.lambda_soft, cfg.lambda_reg)
    cache = field.__dict__.setdefault("_loss_programs", {})
    if key in cache:
        return cache[key]
    g = field.graph(batch)
    u = ad.input_node("u", (batch, field.config.d))
    mse = ad.scale(ad.sum_all(ad.square(ad.sub(g.v, u))), 1.0 / batch)
    loss = mse
    if g.pen_soft is not None and cfg.lambda_soft > 0.0:
        soft = ad.scale(g.pen_soft, cfg.lambda_soft)
    else:
        soft = ad.constant(np.asarray(0.0))
    if g.pen_reg is not None and cfg.lambda_reg > 0.0:
        reg = ad.scale(g.pen_reg, cfg.lambda_reg)
    else:
        reg = ad.constant(np.asarray(0.0))
    loss = ad.add(ad.add(mse, soft), reg)
    # differentiate against the graph's own parameter nodes (one per name)
    seen = {}
    for node in ad.topo_order([loss]):
        if node.op == "param":
            seen[node.name] = node
    names = sorted(seen)
    grads = ad.gradients(loss, [seen[n] for n in names])
    outputs = {"loss": loss, "mse": mse, "soft": soft, "reg": reg}
    for name, grad_node in zip(names, grads):
        outputs["grad::" + name] = grad_node
    prog = ad.Program(outputs, inputs={"x": g.x, "t": g.t, "u": u})
    cache[key] = (prog, names)
    return cache[key]


def _eval_loss(field, xs, taus, us, cfg):
    b = len(xs)
    prog, names = _loss_program(field, b, cfg)
    out = prog.run(x=xs, t=np.asarray(taus, dtype=np.float64).reshape(-1, 1), u=us)
    grads = {name: out["grad::" + name] for name in names}
    parts = {
        "loss": float(out["loss"]),
        "mse": float(out["mse"]),
        "soft_penalty": float(out["soft"]),
        "reg_penalty": float(out["reg"]),
    }
    return parts, grads


def cfm_loss(field, batch, cfg):
    """Loss and parameter gradients over a batch of TrainingPair samples."""
    if not batch:
        raise ValueError("empty batch")
    xs = np.stack([p.x_tau for p in batch])
    taus = np.array([p.tau for p in batch])
    us = np.stack([p.u_tau for p in batch])
    parts, grads = _eval_loss(field, xs, taus, us, cfg)
    if not math.isfinite(parts["loss"]):
        bad = int(np.argmax(~np.isfinite(np.linalg.norm(us, axis=1)))) if len(us) else 0
        raise FloatingPointError(f"non-finite loss (first suspect batch index {bad})")
    return parts["loss"], grads


# ---------------------------------------------------------------------------
# optimizer


def cosine_lr(step, total, lr_max, lr_min):
    """lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2."""
    if not 0 <= step <= total:
        raise ValueError("step must lie in [0, total]")
    if total == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total))


def clip_gradients(grads, max_norm):
    """Scale the whole gradient dict so its global L2 norm is <= max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads, total
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}, total


class AdamW:
    """Decoupled weight decay plus bias-corrected moment updates."""

    def __init__(self, store, cfg):
        self.store = store
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.eps_adam
        self.weight_decay = cfg.weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in store.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.values.items()}

    def update(self, grads, lr):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            theta = self.store.values[name]
            if self.weight_decay:
                theta = theta - lr * self.weight_decay * theta
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            m_hat = self.m[name] / (1.0 - b1 ** t)
            v_hat = self.v[name] / (1.0 - b2 ** t)
            self.store.values[name] = theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    curve: list                # dicts: step, lr, loss, mse, soft_penalty, reg_penalty
    final_loss: float
    steps: int

    def save_curve_csv(self, path):
        cols = ("step", "lr", "loss", "mse", "soft_penalty", "reg_penalty")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.curve:
                writer.writerow([row["step"]] + [repr(row[c]) for c in cols[1:]])


def train(pairs_x, pairs_next, dt, field, cfg, log_every=0):
    """Optimize a field on transition pairs; deterministic for a fixed seed.

    Bridge coordinates are redrawn for every pair each epoch. Divergence
    (non-finite loss) aborts with the parameters from the last finished
    epoch attached to the exception.
    """
    xs_all = np.asarray(pairs_x, dtype=np.float64)
    ys_all = np.asarray(pairs_next, dtype=np.float64)
    if len(xs_all) == 0:
        raise ValueError("empty dataset")
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(field.store, cfg)
    n = len(xs_all)
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = max(1, cfg.epochs * batches_per_epoch)
    inv_dt = 1.0 / dt

    curve = []
    step = 0
    last_good = field.store.copy()
    for _epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            tau = rng.random((len(idx), 1))
            xk = xs_all[idx]
            xn = ys_all[idx]
            x_tau = (1.0 - tau) * xk + tau * xn
            u = (xn - xk) * inv_dt
            parts, grads = _eval_loss(field, x_tau, tau, u, cfg)
            if not math.isfinite(parts["loss"]):
                raise TrainingDiverged(
                    f"loss became non-finite at step {step}", last_good
                )
            lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min)
            grads, _norm = clip_gradients(grads, cfg.clip_norm)
            opt.update(grads, lr)
            curve.append({"step": step, "lr": lr, **parts})
            step += 1
            if log_every and step % log_every == 0:
                print(f"step {step}/{total_steps} loss {parts['loss']:.6f}")
        last_good = field.store.copy()
    final_loss = curve[-1]["loss"] if curve else float("nan")
    return TrainResult(curve=curve, final_loss=final_loss, steps=step)
