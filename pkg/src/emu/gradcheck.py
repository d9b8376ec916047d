"""Finite-difference verification of every autodiff primitive and the full model.

Runs in double precision.  Losses are sum-scaled so gradient entries are O(1),
keeping central differences at h=1e-6 well above roundoff noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import hierarchy as hi
from .model import EmulatorModel, ModelConfig

PRIMITIVE_TOL = 1e-5
MODEL_TOL = 1e-4
FD_STEP = 1e-6


def central_difference(f, array, index, h=FD_STEP) -> float:
    flat = array.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    fp = float(f())
    flat[index] = orig - h
    fm = float(f())
    flat[index] = orig
    return (fp - fm) / (2.0 * h)


def check_gradients(make_loss, tensors, n_sample=40, rng=None):
    """Relative error between analytic and central-difference gradients.

    Per tensor, a random subset of entries is differenced and the l2-norm
    relative error ||fd - an|| / max(||fd||, ||an||) computed over the subset;
    the worst tensor's error is returned.  The norm form keeps FD roundoff on
    near-zero entries from drowning the comparison while any systematic
    gradient bug still dominates the norm.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    loss = make_loss()
    ad.backward(loss)
    worst = 0.0
    for t in tensors:
        grad = t.grad if t.grad is not None else np.zeros_like(t.values)
        size = t.values.size
        idxs = rng.choice(size, size=min(n_sample, size), replace=False)
        fd = np.array(
            [central_difference(lambda: make_loss().values, t.values, i) for i in idxs]
        )
        an = grad.reshape(-1)[idxs]
        denom = max(np.linalg.norm(fd), np.linalg.norm(an), 1e-12)
        worst = max(worst, float(np.linalg.norm(fd - an) / denom))
    return worst


def _sum_sq_against(y, target):
    d = ad.sub(y, ad.Tensor(target))
    return ad.scale(ad.l2_mean(d), float(np.prod(d.shape)))


def primitive_checks(seed: int = 0):
    """(name, worst relative error) for every public primitive."""
    rng = np.random.default_rng(seed)
    out = []

    def randt(*shape, shift=0.0):
        return ad.Tensor(rng.standard_normal(shape) + shift, requires_grad=True)

    x = randt(2, 3, 6, 6)
    y = randt(2, 3, 6, 6)
    c = rng.standard_normal((2, 3, 6, 6))
    out.append(("add", check_gradients(lambda: _sum_sq_against(ad.add(x, y), c), [x, y], rng=rng)))
    out.append(("multiply", check_gradients(lambda: _sum_sq_against(ad.multiply(x, y), c), [x, y], rng=rng)))
    out.append(("sub", check_gradients(lambda: _sum_sq_against(ad.sub(x, y), c), [x, y], rng=rng)))
    out.append(("scale", check_gradients(lambda: _sum_sq_against(ad.scale(x, 1.7), c), [x], rng=rng)))

    xc = randt(2, 3, 8, 8)
    w = randt(4, 3, 3, 3)
    b = randt(4)
    c1 = rng.standard_normal((2, 4, 8, 8))
    out.append(("conv2d", check_gradients(
        lambda: _sum_sq_against(ad.conv2d(xc, w, b), c1), [xc, w, b], rng=rng)))
    c2 = rng.standard_normal((2, 4, 4, 4))
    out.append(("conv2d_stride2", check_gradients(
        lambda: _sum_sq_against(ad.conv2d(xc, w, b, stride=2), c2), [xc, w, b], rng=rng)))

    xg = randt(2, 8, 5, 5)
    gam = randt(8, shift=1.0)
    bet = randt(8)
    cg = rng.standard_normal((2, 8, 5, 5))
    out.append(("group_norm", check_gradients(
        lambda: _sum_sq_against(ad.group_norm(xg, gam, bet, 4), cg), [xg, gam, bet], rng=rng)))

    xe = randt(4, 5, 6, 7)
    ce = rng.standard_normal((4, 5, 6, 7))
    out.append(("gelu", check_gradients(lambda: _sum_sq_against(ad.gelu(xe), ce), [xe], rng=rng)))

    xd = randt(2, 3, 8, 8)
    cd = rng.standard_normal((2, 3, 4, 4))
    out.append(("down2", check_gradients(lambda: _sum_sq_against(ad.down2(xd), cd), [xd], rng=rng)))
    cu = rng.standard_normal((2, 3, 16, 16))
    out.append(("up2", check_gradients(lambda: _sum_sq_against(ad.up2(xd), cu), [xd], rng=rng)))

    xa = randt(2, 2, 6, 6)
    xb = randt(2, 3, 6, 6)
    cc = rng.standard_normal((2, 5, 6, 6))
    out.append(("concat", check_gradients(
        lambda: _sum_sq_against(ad.concat([xa, xb]), cc), [xa, xb], rng=rng)))

    xs = randt(2, 3, 16, 16)
    ws = ad.Tensor(rng.standard_normal((3, 9, 5, 2)) * 0.3, requires_grad=True)
    cs = rng.standard_normal((2, 3, 16, 16))
    out.append(("spectral_conv_depthwise", check_gradients(
        lambda: _sum_sq_against(ad.spectral_conv_depthwise(xs, ws, 5), cs), [xs, ws], rng=rng)))

    xl = randt(4, 5, 6, 7, shift=0.5)
    out.append(("l1_mean", check_gradients(
        lambda: ad.scale(ad.l1_mean(xl), float(xl.size)), [xl], rng=rng)))
    out.append(("l2_mean", check_gradients(
        lambda: ad.scale(ad.l2_mean(xl), float(xl.size)), [xl], rng=rng)))
    return out


def tiny_l3_model(resolution: int = 16) -> EmulatorModel:
    cfg = ModelConfig(
        base_resolution=resolution,
        encoder_channels=(4, 8, 8),
        fourier_modes=4,
        gn_groups=2,
        input_mode=hi.MODE_L3,
        hierarchy=hi.HierarchyConfig(levels=3, ratios=(2, 4)),
    )
    return EmulatorModel(cfg)


def full_model_check(seed: int = 0, n_params: int = 20):
    """FD check of the training loss through a small three-level model.

    Parameters are randomized (not the zero-head init) so gradients reach
    every tensor; ``n_params`` parameter entries are sampled across distinct
    tensors.
    """
    from .training import loss_fn
    from .model import ModelOutputs

    rng = np.random.default_rng(seed)
    model = tiny_l3_model()
    cfg = model.config
    params = model.init_params(seed, dtype=np.float64)
    for name, t in params.items():
        t.values = rng.standard_normal(t.values.shape) * 0.15

    n = cfg.base_resolution
    stem = rng.standard_normal((2, 1, n, n))
    latents = [
        rng.standard_normal((2, 1, n // r, n // r)) for r in cfg.hierarchy.ratios
    ]
    targets = [rng.standard_normal((2, 1, n, n))] + [
        rng.standard_normal((2, 1, n // r, n // r)) for r in cfg.hierarchy.ratios
    ]

    def make_loss():
        out = model.forward(params, stem, latents)
        return loss_fn(out, targets)

    params.zero_grad()
    loss = make_loss()
    ad.backward(loss)

    names = params.names()
    fds, ans = [], []
    for _ in range(n_params):
        name = names[int(rng.integers(len(names)))]
        t = params[name]
        i = int(rng.integers(t.size))
        ans.append(float(t.grad.reshape(-1)[i]) if t.grad is not None else 0.0)
        fds.append(central_difference(lambda: make_loss().values, t.values, i))
    fds = np.array(fds)
    ans = np.array(ans)
    denom = max(np.linalg.norm(fds), np.linalg.norm(ans), 1e-12)
    return float(np.linalg.norm(fds - ans) / denom)


@dataclass
class GradcheckReport:
    passed: bool
    text: str


def run_gradcheck(seed: int = 0) -> GradcheckReport:
    lines = []
    ok = True
    for name, err in primitive_checks(seed):
        passed = err <= PRIMITIVE_TOL
        ok &= passed
        lines.append(f"{'PASS' if passed else 'FAIL'} primitive {name}: rel err {err:.3e}")
    err = full_model_check(seed)
    passed = err <= MODEL_TOL
    ok &= passed
    lines.append(f"{'PASS' if passed else 'FAIL'} full model: rel err {err:.3e}")
    lines.append(f"{'PASS' if ok else 'FAIL'} overall")
    return GradcheckReport(passed=ok, text="\n".join(lines) + "\n")
