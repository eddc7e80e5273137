"""Self-checks run by ``lindpo verify``.

Each check compares one route through the library with an independent route
(autodiff against a hand-assembled gradient, a closed form against Monte
Carlo, a sampler against an analytic trajectory) and reports the worst
discrepancy seen.
"""

import time
from collections import namedtuple

import numpy as np

from . import objectives
from .dynamics import (
    euler_maruyama_step,
    drift,
    gaussian_kl_same_cov,
    sample,
    score_from_velocity_rf,
    velocity_from_score,
)
from .nn import finite_diff_grad, grad_loss, mlp_init
from .objectives import DpoConfig, NoiseDraws, PairBatch, UtilityKind, UtilitySpec
from .schedules import make_schedule

Check = namedtuple("Check", "name group fn")
Result = namedtuple("Result", "name passed detail seconds")

_REGISTRY = []


def register(name, group):
    def wrap(fn):
        _REGISTRY.append(Check(name, group, fn))
        return fn

    return wrap


def checks(filter_text=None):
    if not filter_text:
        return list(_REGISTRY)
    f = filter_text.lower()
    return [c for c in _REGISTRY if f in c.name.lower() or f in c.group.lower()]


def run_checks(filter_text=None):
    out = []
    for c in checks(filter_text):
        t0 = time.perf_counter()
        try:
            passed, detail = c.fn()
        except Exception as exc:  # report, never crash the table
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(Result(c.name, bool(passed), detail, time.perf_counter() - t0))
    return out


def format_table(results):
    width = max([len(r.name) for r in results] + [5])
    lines = [f"{'check':<{width}}  result  seconds  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.2f}  {r.detail}")
    return "\n".join(lines)


def _rel(a, b):
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / scale)


# -- random problem instances --------------------------------------------------


def random_problem(rng, max_hidden=16, data_dim=2, n_pairs=3):
    """Small policy/reference pair with a random batch and noise draw."""
    schedule = make_schedule("rf")
    cond_dim = int(rng.choice([0, 2]))
    depth = int(rng.integers(1, 3))
    hidden = [int(rng.integers(2, max_hidden + 1)) for _ in range(depth)]
    dims = (data_dim + 3 + cond_dim, *hidden, data_dim)
    policy = mlp_init(dims, str(rng.choice(["tanh", "silu"])), seed=int(rng.integers(2**31)))
    ref = policy.with_params(policy.params + 0.1 * rng.standard_normal(policy.params.size))
    batch = PairBatch(
        rng.normal(size=(n_pairs, data_dim)),
        rng.normal(size=(n_pairs, data_dim)),
        rng.normal(size=(n_pairs, cond_dim)),
    )
    draws = NoiseDraws(
        rng.uniform(0.05, 0.95, n_pairs),
        rng.normal(size=(n_pairs, data_dim)),
        rng.normal(size=(n_pairs, data_dim)),
    )
    return schedule, policy, ref, batch, draws


# -- checks --------------------------------------------------------------------


@register("gradient-identity", "gradient")
def check_gradient_identity(draws=20, tol=1e-4, seed=11):
    """Autodiff of the sigmoid loss equals sum_i w(delta_i) grad(err_w - err_l) / n."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        schedule, policy, ref, batch, nd = random_problem(rng)
        cfg = DpoConfig(beta_bar=float(rng.uniform(0.5, 20.0)))
        auto = grad_loss(policy, lambda th: objectives.dpo_unified_loss(policy, ref, batch, cfg, schedule, nd, th))
        m = objectives.margins(policy, ref, batch, nd, cfg.kind, schedule)
        lam = np.asarray(objectives.lambda_weight(schedule.paradigm, nd.t, schedule, cfg.lambda_mode))
        w = np.atleast_1d(objectives.dpo_gradient_weight(m.delta, cfg.beta_bar * lam))
        hand = np.zeros_like(policy.params)
        for i in range(len(nd.t)):
            one = PairBatch(*(a[i : i + 1] for a in batch))
            d1 = NoiseDraws(*(a[i : i + 1] for a in nd))

            def gap(th, one=one, d1=d1):
                mm = objectives.margins(policy, ref, one, d1, cfg.kind, schedule, th)
                return (mm.err_w - mm.err_l).sum()

            hand += w[i] * grad_loss(policy, gap)
        hand /= len(nd.t)
        worst = max(worst, _rel(hand, auto))
    return worst < tol, f"max rel err {worst:.2e} over {draws} draws (tol {tol:g})"


@register("stop-gradient", "gradient")
def check_stop_gradient(draws=20, tol=1e-4, seed=12):
    """Autodiff of the linear loss equals finite differences with the weights frozen."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        schedule, policy, ref, batch, nd = random_problem(rng, max_hidden=8)
        cfg = DpoConfig(beta_bar=float(rng.uniform(0.5, 20.0)))
        auto = grad_loss(policy, lambda th: objectives.linear_dpo_loss(policy, ref, batch, cfg, schedule, nd, th))
        _, _, w = objectives.linear_dpo_terms(policy, ref, batch, cfg, schedule, nd)

        def frozen(p):
            mm = objectives.margins(policy.with_params(p), ref, batch, nd, cfg.kind, schedule)
            return float(np.mean(w * (mm.err_w.value - mm.err_l.value)))

        fd = finite_diff_grad(frozen, policy.params, h=1e-6)
        worst = max(worst, _rel(auto, fd))
    return worst < tol, f"max rel err {worst:.2e} over {draws} draws (tol {tol:g})"


@register("kl-closed-form", "kl")
def check_kl(pairs=10, n=100_000, tol=0.02, seed=13):
    """Closed-form same-covariance KL against a Monte-Carlo log-ratio average."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for s in (0.25, 1.0, 4.0):
        for _ in range(pairs):
            mu_a = rng.normal(scale=2.0, size=2)
            ang = rng.uniform(0, 2 * np.pi)
            mu_b = mu_a + rng.uniform(3.0, 6.0) * np.array([np.cos(ang), np.sin(ang)])
            x = mu_a + np.sqrt(s) * rng.standard_normal((n, 2))
            log_ratio = (np.sum((x - mu_b) ** 2, 1) - np.sum((x - mu_a) ** 2, 1)) / (2 * s)
            mc = float(np.mean(log_ratio))
            exact = gaussian_kl_same_cov(mu_a, mu_b, s)
            worst = max(worst, abs(mc - exact) / exact)
    return worst < tol, f"max rel err {worst:.2e} over {3 * pairs} cases (tol {tol:g})"


def gaussian_rf_velocity(x, t, s):
    """Exact velocity of rectified flow between N(0, s^2) data and N(0, 1) noise."""
    V = (1 - t) ** 2 * s**2 + t**2
    return (t - (1 - t) * s**2) / V * x


@register("rf-score-identity", "score")
def check_rf_score(seed=14):
    rng = np.random.default_rng(seed)
    worst_id = 0.0
    for s in (0.5, 1.0, 2.0):
        for t in (0.2, 0.5, 0.8):
            x = rng.normal(size=(16, 3))
            V = (1 - t) ** 2 * s**2 + t**2
            got = score_from_velocity_rf(x, t, gaussian_rf_velocity(x, t, s))
            worst_id = max(worst_id, float(np.max(np.abs(got + x / V))))
    sch = make_schedule("rf")
    worst_rt = 0.0
    for _ in range(50):
        t = rng.uniform(0.05, 0.95)
        x, v = rng.normal(size=(2, 4))
        back = velocity_from_score(x, t, score_from_velocity_rf(x, t, v), sch)
        worst_rt = max(worst_rt, float(np.max(np.abs(back - v))))
    ok = worst_id < 1e-10 and worst_rt < 1e-12
    return ok, f"identity err {worst_id:.1e} (tol 1e-10), round-trip err {worst_rt:.1e} (tol 1e-12)"


@register("em-marginals", "em")
def check_em_marginals(s=2.0, steps=200, n=10_000, seed=15):
    """ODE and velocity-SDE samplers reproduce the closed-form marginal at t_min."""
    sch = make_schedule("rf")
    t = sch.t_min
    var = (1 - t) ** 2 * s**2 + t**2
    model = lambda x, tt, c: gaussian_rf_velocity(x, tt, s)
    worst = 0.0
    for mode in ("ode", "sde"):
        xs = sample(model, sch, "velocity", steps=steps, mode=mode, seed=seed, n=n, data_dim=1)[:, 0]
        z_mean = abs(xs.mean()) / np.sqrt(var / n)
        z_var = abs(xs.var(ddof=1) - var) / (var * np.sqrt(2.0 / (n - 1)))
        worst = max(worst, z_mean, z_var)
    return worst < 4.0, f"worst deviation {worst:.2f} standard errors (tol 4)"


def integrate_ode(x1, s, steps, t_hi=0.9, t_lo=0.1):
    """Plain Euler on the analytic Gaussian velocity, g = 0."""
    sch = make_schedule("rf")
    ts = np.linspace(t_hi, t_lo, steps + 1)
    x = np.array(x1, dtype=np.float64)
    for k in range(steps):
        v = gaussian_rf_velocity(x, ts[k], s)
        x, _ = euler_maruyama_step(x, ts[k], ts[k] - ts[k + 1], drift(x, ts[k], v, "velocity", sch, True), 0.0, 0.0)
    return x


@register("em-order", "em")
def check_em_order(s=2.0):
    """Deterministic Euler error halves when the step count doubles."""
    x1 = np.array([1.0, -0.5])
    t_hi, t_lo = 0.9, 0.1
    V = lambda t: (1 - t) ** 2 * s**2 + t**2
    exact = x1 * np.sqrt(V(t_lo) / V(t_hi))
    errs = [float(np.max(np.abs(integrate_ode(x1, s, n, t_hi, t_lo) - exact))) for n in (25, 50, 100, 200)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok = all(1.8 <= r <= 2.2 for r in ratios)
    return ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios) + " (want 1.8-2.2)"


@register("utility-normalization", "utility")
def check_utilities():
    bad = []
    for kind in UtilityKind:
        spec = UtilitySpec(kind=kind)
        lo, hi = objectives.normalize_utility(spec, -5.0), objectives.normalize_utility(spec, 5.0)
        if lo != 0.0 or hi != 1.0:
            bad.append(f"{kind.value}: ({lo!r}, {hi!r})")
    for kind in (UtilityKind.KT, UtilityKind.LINEAR):
        mid = objectives.normalize_utility(UtilitySpec(kind=kind), 0.0)
        if mid != 0.5:
            bad.append(f"{kind.value} at 0: {mid!r}")
    return not bad, "exact endpoints and midpoints" if not bad else "; ".join(bad)


@register("floor-beats-sigmoid", "utility")
def check_floor(beta_bar=250.0, eta=1e-2, delta=-0.05):
    cfg = DpoConfig(beta_bar=beta_bar, utility=UtilitySpec(floor_eta=eta))
    sig = float(1.0 / (1.0 + np.exp(-beta_bar * delta)))
    lin = objectives.linear_dpo_weight(delta, cfg)
    ok = sig < lin and lin == eta
    return ok, f"sigmoid weight {sig:.3e} vs linear weight {lin:g}"
