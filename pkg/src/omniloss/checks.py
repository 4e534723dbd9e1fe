"""Gradient-check suite over every loss and a generator/discriminator chain,
plus the analytic gradient-balance table of the omni-loss."""

from dataclasses import dataclass

import numpy as np

from . import losses
from .labels import omni_target_batch
from .nn import Dense, Discriminator, Generator, LeakyReLU
from .optim import grad_check

__all__ = ["CheckResult", "run_grad_checks", "gradient_table", "GRAD_CHECK_OPS"]


@dataclass(frozen=True)
class CheckResult:
    op: str
    trials: int
    worst: float

    def passed(self, tol):
        return self.worst <= tol


def _omni_single(rng):
    n = int(rng.integers(2, 13))
    s = rng.normal(0, 1, size=n)
    y = rng.integers(-1, 2, size=n)
    return s, lambda v: losses.omni_loss(v, y).value, losses.omni_loss(s, y).grad


def _omni_batch(rng):
    s = rng.normal(0, 1, size=(int(rng.integers(1, 5)), int(rng.integers(2, 8))))
    y = rng.integers(-1, 2, size=s.shape)
    return s, lambda v: losses.omni_loss(v, y).value, losses.omni_loss(s, y).grad


def _unified(rng):
    p, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    gamma, m = rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5)
    s = rng.normal(0, 1, size=p + n)
    res = losses.unified_loss(s[:p], s[p:], gamma, m)
    f = lambda v: losses.unified_loss(v[:p], v[p:], gamma, m).value
    return s, f, np.concatenate([res.grad_pos, res.grad_neg])


def _multi_hinge(rng):
    L = rng.normal(0, 1, size=(int(rng.integers(1, 4)), int(rng.integers(2, 7))))
    t = rng.integers(0, L.shape[1], size=L.shape[0])
    return L, lambda v: losses.multi_hinge_loss(v, t).value, losses.multi_hinge_loss(L, t).grad


def _softmax_ce(rng):
    L = rng.normal(0, 1, size=(int(rng.integers(1, 4)), int(rng.integers(2, 7))))
    t = rng.integers(0, L.shape[1], size=L.shape[0])
    return L, lambda v: losses.softmax_ce_loss(v, t).value, losses.softmax_ce_loss(L, t).grad


def _hinge(role):
    def case(rng):
        s = rng.normal(0, 1, size=int(rng.integers(1, 6)))
        return s, lambda v: losses.hinge_gan_loss(v, role).value, losses.hinge_gan_loss(s, role).grad
    return case


def _perpixel(rng):
    S = rng.normal(0, 1, size=(4, 3, 3))
    Y = rng.integers(-1, 2, size=S.shape)
    return S, lambda v: losses.perpixel_omni_loss(v, Y).value, losses.perpixel_omni_loss(S, Y).grad


GRAD_CHECK_OPS = {
    "omni_loss": _omni_single,
    "omni_loss[batch]": _omni_batch,
    "unified_loss": _unified,
    "multi_hinge_loss": _multi_hinge,
    "softmax_ce_loss": _softmax_ce,
    "hinge_gan_loss[d_real]": _hinge("d_real"),
    "hinge_gan_loss[d_fake]": _hinge("d_fake"),
    "hinge_gan_loss[g]": _hinge("g"),
    "perpixel_omni_loss": _perpixel,
}


def _reference_loss(G, D, P, z, c, Y):
    """G -> D -> omni-loss recomputed from scratch in the dtype of ``P``.

    ``P`` maps ``'G.<name>'`` / ``'D.<name>'`` to parameter arrays. This is
    an independent forward pass used only as the finite-difference oracle.
    """
    def chain(x, seq, prefix):
        for i, layer in enumerate(seq.layers):
            if isinstance(layer, Dense):
                x = x @ P[f"{prefix}.{i}.W"].T + P[f"{prefix}.{i}.b"]
            elif isinstance(layer, LeakyReLU):
                x = np.where(x > 0, x, layer.slope * x)
            else:
                raise TypeError(f"reference forward has no rule for {type(layer).__name__}")
        return x

    h = np.concatenate([z, P["G.embed.table"][c]], axis=1)
    x = chain(h, G.net, "G.net")
    s = chain(x, D.trunk, "D.trunk") @ P["D.out.W"].T + P["D.out.b"]
    neg = np.where(Y == -1, np.exp(s), 0)
    pos = np.where(Y == 1, np.exp(-s), 0)
    return np.mean(np.log1p(neg.sum(axis=1)) + np.log1p(pos.sum(axis=1)))


def _composition_worst(rng, step):
    """Worst error over z and every parameter of G -> D -> omni-loss.

    The analytic gradients come from the float64 library backward pass; the
    central differences are taken in extended precision on an independent
    forward pass, so tiny gradient components are not swamped by float64
    roundoff (about ``eps * |f| / step``).
    """
    C = 3
    G = Generator(C, 3, hidden=(6,), out_dim=2, output="linear", rng=rng)
    D = Discriminator(2, hidden=(6, 5), out_dim=C + 2, rng=rng)
    z = rng.normal(size=(4, 3))
    c = rng.integers(0, C, size=4)
    Y = omni_target_batch("gen", c, C)

    G.zero_grad()
    D.zero_grad()
    res = losses.omni_loss(D.forward(G.forward(z, c)), Y)
    dz = G.backward(D.backward(res.grad))
    analytic = {f"G.{k}": v.copy() for k, v in G.gradients().items()}
    analytic.update({f"D.{k}": v.copy() for k, v in D.gradients().items()})
    ext = np.longdouble
    P = {f"G.{k}": v.astype(ext) for k, v in G.parameters().items()}
    P.update({f"D.{k}": v.astype(ext) for k, v in D.parameters().items()})

    worst = grad_check(lambda v: _reference_loss(G, D, P, v, c, Y), dz, z, step, dtype=ext)
    for name in P:
        def f(v, name=name):
            saved = P[name]
            P[name] = v
            out = _reference_loss(G, D, P, z.astype(ext), c, Y)
            P[name] = saved
            return out
        worst = max(worst, grad_check(f, analytic[name], P[name], step, dtype=ext))
    return worst


def run_grad_checks(trials=100, seed=0, step=1e-6):
    """Worst relative error per op over ``trials`` random instances each."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    results = []
    for k, (name, case) in enumerate(GRAD_CHECK_OPS.items()):
        rng = np.random.default_rng([seed, k])
        worst = 0.0
        for _ in range(trials):
            point, f, grad = case(rng)
            worst = max(worst, grad_check(f, grad, point, step))
        results.append(CheckResult(name, trials, worst))
    rng = np.random.default_rng([seed, len(GRAD_CHECK_OPS)])
    worst = max(_composition_worst(rng, step) for _ in range(trials))
    results.append(CheckResult("generator->discriminator->omni_loss", trials, worst))
    return results


def gradient_table():
    """Gradient magnitudes of the omni-loss at the balance probe points.

    Panel ``a`` pairs one negative score ``s_n`` with one positive score
    ``s_p = 0`` and reports ``(|dL/ds_n|, |dL/ds_p|)``. Panel ``b`` has two
    positive scores and reports ``(|dL/ds_p1|, |dL/ds_p2|)``.

    Returns a list of ``(panel, point, inputs, first, second)`` tuples.
    """
    rows = []
    for point, s_n in zip("ABC", (4.0, 0.0, -4.0)):
        g = losses.omni_loss(np.array([s_n, 0.0]), np.array([-1, 1])).grad
        rows.append(("a", point, f"s_n={s_n:g}, s_p=0", abs(g[0]), abs(g[1])))
    for point, s_p in zip("ABC", ((-2.0, 0.0), (0.0, 0.0), (0.0, -2.0))):
        g = losses.omni_loss(np.array(s_p), np.array([1, 1])).grad
        rows.append(("b", point, f"s_p=({s_p[0]:g},{s_p[1]:g})", abs(g[0]), abs(g[1])))
    return rows
