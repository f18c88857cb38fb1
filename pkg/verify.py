"""
Hypothesis checks: spot checks of the declared bounds, growth constants,
dichotomy estimates, the theorem inequalities and the DEPCAG Gronwall check.
Every check becomes a CheckEntry carrying the inequality and both sides.
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

import expr
from models import (
    BlockSystem, ConditionViolation, DepcagSystem, DichotomySpec, HypothesisError,
    MatrixField, NonFiniteError, NonlinearTerm, NumericsConfig, TimeGrid, opnorm, vnorm,
)
from schemas import CheckEntry
from transition import BlockTransition, TransitionOperator

logger = logging.getLogger("depcag")

GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)
SAMPLING_NOTE = "sampling-based evidence on the working window, not a proof"


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """map() over a thread pool; results keep submission order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _rng(numerics: NumericsConfig) -> np.random.Generator:
    return np.random.default_rng(numerics.seed)


# Reports

@dataclass
class HypothesisReport:
    checks: Dict[str, CheckEntry] = field(default_factory=dict)
    constants: Dict[str, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def add(self, name: str, inequality: str, lhs, rhs, passed: bool, note: str = "") -> CheckEntry:
        entry = CheckEntry(inequality=inequality, lhs=lhs, rhs=rhs, passed=bool(passed), note=note)
        self.checks[name] = entry
        return entry

    def merge(self, other: "HypothesisReport") -> "HypothesisReport":
        self.checks.update(other.checks)
        self.constants.update(other.constants)
        self.notes.extend(n for n in other.notes if n not in self.notes)
        return self

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.checks.values())

    def failures(self) -> List[str]:
        return [name for name, entry in self.checks.items() if not entry.passed]

    def require(self, *names: str):
        """Raise HypothesisError for the first listed check that failed."""
        for name in names:
            entry = self.checks.get(name)
            if entry is not None and not entry.passed:
                raise HypothesisError(name, f"({entry.inequality}: lhs={entry.lhs}, rhs={entry.rhs})")


# Spot checks of declared bounds

def _sample_times(grid: TimeGrid, count: int, rng: np.random.Generator) -> np.ndarray:
    random = rng.uniform(grid.t_min, grid.t_max, size=count)
    return np.unique(np.concatenate([grid.knots, grid.anchors, random]))


def _row_norms(values: np.ndarray) -> np.ndarray:
    return np.max(np.abs(values), axis=1) if values.shape[1] else np.zeros(values.shape[0])


def _matrix_norms(values: np.ndarray) -> np.ndarray:
    return np.max(np.sum(np.abs(values), axis=-1), axis=-1)


def sup_norm(mf: MatrixField, grid: TimeGrid, samples: int = 256) -> float:
    """sup |Q(t)| over knots, anchors and evenly spaced times of the window."""
    if mf.is_constant:
        return opnorm(mf.constant)
    times = np.unique(np.concatenate([grid.knots, grid.anchors,
                                      np.linspace(grid.t_min, grid.t_max, samples)]))
    return float(np.max(_matrix_norms(mf.many(times))))


def _slack(bound: np.ndarray) -> np.ndarray:
    return 1e-9 * np.maximum(1.0, bound) + 1e-12


def _term_samples(term: NonlinearTerm, times: np.ndarray, numerics: NumericsConfig,
                  rng: np.random.Generator):
    n = term.dim_in[0]
    k = times.size
    R = numerics.spot_radius
    z1, w1 = rng.uniform(-R, R, (k, n)), rng.uniform(-R, R, (k, n))
    z2, w2 = rng.uniform(-R, R, (k, n)), rng.uniform(-R, R, (k, n))
    return z1, w1, z2, w2


def growth_excess(term: NonlinearTerm, r: float, mu: float, times, numerics, rng) -> float:
    """max over samples of |h(t,z,w)| - r(|z|+|w|) - mu (<= 0 when the bound holds)."""
    z, w, _, _ = _term_samples(term, times, numerics, rng)
    values = _row_norms(term.many(times, z, w))
    bound = r * (_row_norms(z) + _row_norms(w)) + mu
    return float(np.max(values - bound - _slack(bound)))


def lipschitz_excess(term: NonlinearTerm, l: float, times, numerics, rng) -> float:
    """max over sample pairs of |h(z1,w1)-h(z2,w2)| - l(|z1-z2|+|w1-w2|)."""
    z1, w1, z2, w2 = _term_samples(term, times, numerics, rng)
    # half of the pairs are close together so local slopes are probed too
    half = times.size // 2
    z2[:half] = z1[:half] + 1e-3 * (z2[:half] / numerics.spot_radius)
    w2[:half] = w1[:half] + 1e-3 * (w2[:half] / numerics.spot_radius)
    diff = _row_norms(term.many(times, z1, w1) - term.many(times, z2, w2))
    bound = l * (_row_norms(z1 - z2) + _row_norms(w1 - w2))
    return float(np.max(diff - bound - _slack(bound)))


def _finite_entry(report: HypothesisReport, name: str, fields: Dict[str, MatrixField], times):
    bad = []
    for label, mf in fields.items():
        values = mf.many(times) if not mf.is_constant else mf.constant[None]
        if not np.all(np.isfinite(values)):
            bad.append(label)
    report.add(name, "matrix entries finite on sample times (local integrability surrogate)",
               float(len(bad)), 0.0, not bad,
               note=f"non-finite in {', '.join(bad)}" if bad else SAMPLING_NOTE)


def spot_checks(system: Union[DepcagSystem, BlockSystem], numerics: NumericsConfig) -> HypothesisReport:
    """B1/B2 for DEPCAG systems, frakB1-frakB3 for block systems."""
    rng = _rng(numerics)
    grid = system.grid
    times = _sample_times(grid, numerics.spot_samples, rng)
    report = HypothesisReport()

    if isinstance(system, DepcagSystem):
        try:
            _finite_entry(report, "B1", {"M": system.M, "M0": system.M0}, times)
        except NonFiniteError as e:
            report.add("B1", "matrix entries finite on sample times", None, 0.0, False, note=str(e))
            return report
        if system.h is None:
            report.add("B2", "h absent (linear system)", 0.0, 0.0, True)
            return report
        h = system.h
        term_times = rng.uniform(grid.t_min, grid.t_max, numerics.spot_samples)
        g = growth_excess(h, h.growth_r, h.offset_mu, term_times, numerics, rng)
        l = lipschitz_excess(h, h.lipschitz_l, term_times, numerics, rng)
        report.add(
            "B2", "max(|h| - r(|z|+|w|) - mu, |dh| - l(|dz|+|dw|)) <= 0",
            max(g, l), 0.0, g <= 0 and l <= 0,
            note=f"growth excess {g:.3e}, lipschitz excess {l:.3e}; {SAMPLING_NOTE}",
        )
        return report

    norms = {
        "A": float(np.max(_matrix_norms(system.A.many(times)))),
        "B": float(np.max(_matrix_norms(system.B.many(times)))),
        "A0": float(np.max(_matrix_norms(system.A0.many(times)))),
        "B0": float(np.max(_matrix_norms(system.B0.many(times)))),
    }
    lhs = max(norms["A"] - system.beta, norms["B"] - system.beta,
              norms["A0"] - system.beta0, norms["B0"] - system.beta0)
    report.add(
        "frakB1", "max(sup|A|,sup|B|) <= beta and max(sup|A0|,sup|B0|) <= beta0",
        lhs, 0.0, lhs <= 1e-12 * max(1.0, system.beta),
        note=", ".join(f"sup|{k}|={v:.6g}" for k, v in norms.items()),
    )

    term_times = rng.uniform(grid.t_min, grid.t_max, numerics.spot_samples)
    growth = {
        "f": growth_excess(system.f, system.lam, 0.0, term_times, numerics, rng),
        "g": growth_excess(system.g, system.lam, 0.0, term_times, numerics, rng),
        "phi": growth_excess(system.phi, 0.0, system.delta, term_times, numerics, rng),
        "psi": growth_excess(system.psi, 0.0, system.delta, term_times, numerics, rng),
    }
    worst = max(growth.values())
    report.add(
        "frakB2", "|f|,|g| <= lambda(|x|+|x_gamma|) and |phi|,|psi| <= delta (max excess <= 0)",
        worst, 0.0, worst <= 0,
        note=", ".join(f"{k}: {v:.3e}" for k, v in growth.items()),
    )
    lips = {name: lipschitz_excess(term, system.omega, term_times, numerics, rng)
            for name, term in system.terms().items()}
    worst = max(lips.values())
    report.add(
        "frakB3", "f, g, phi, psi are omega-Lipschitz (max excess <= 0)",
        worst, 0.0, worst <= 0,
        note=", ".join(f"{k}: {v:.3e}" for k, v in lips.items()),
    )
    return report


def validate_system(system, numerics: NumericsConfig):
    """Reject a freshly loaded system whose declared bounds fail the spot checks."""
    report = spot_checks(system, numerics)
    for name, entry in report.checks.items():
        if not entry.passed:
            raise ConditionViolation(name, f"({entry.note})" if entry.note else "")
    logger.debug(f"Spot checks passed: {', '.join(report.checks)}")


# Growth constants

def norm_integral(Q: MatrixField, a: float, b: float, max_step: float) -> float:
    """Gauss-Legendre quadrature of |Q(s)| over [a, b]."""
    if b <= a:
        return 0.0
    if Q.is_constant:
        return opnorm(Q.constant) * (b - a)
    pieces = max(1, int(math.ceil((b - a) / max_step - 1e-9)))
    edges = np.linspace(a, b, pieces + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * GAUSS_NODES[None, :]).ravel()
    values = _matrix_norms(Q.many(nodes)).reshape(pieces, -1)
    return float(np.sum(half[:, None] * GAUSS_WEIGHTS[None, :] * values))


@dataclass(frozen=True)
class GrowthConstants:
    rho_plus_i: np.ndarray
    rho_minus_i: np.ndarray
    nu_plus: float
    nu_minus: float
    rho: float
    rho0: float
    rho_star: float
    rho_tilde: float
    alpha: float
    theta: float

    @property
    def condition_c(self) -> bool:
        return self.nu_plus < 1 and self.nu_minus < 1

    def as_dict(self, suffix: str = "") -> Dict[str, float]:
        return {
            f"nu_plus{suffix}": self.nu_plus, f"nu_minus{suffix}": self.nu_minus,
            f"rho{suffix}": self.rho, f"rho0{suffix}": self.rho0,
            f"rho_star{suffix}": self.rho_star, f"rho_tilde{suffix}": self.rho_tilde,
        }


def growth_constants(system: DepcagSystem, d: Union[DichotomySpec, float],
                     numerics: Optional[NumericsConfig] = None) -> GrowthConstants:
    """
    rho_i^+(Q) = exp int_{t_i}^{zeta_i} |Q|, rho_i^-(Q) = exp int_{zeta_i}^{t_i+1} |Q|
    and the constants derived from them (max row-sum norm throughout).
    """
    numerics = numerics or NumericsConfig()
    alpha = d.alpha if isinstance(d, DichotomySpec) else float(d)
    grid = system.grid
    n_int = grid.n_intervals
    log_plus = np.empty(n_int)
    log_minus = np.empty(n_int)
    nu_plus_i = np.empty(n_int)
    nu_minus_i = np.empty(n_int)
    for i in range(n_int):
        t_i, t_next = grid.interval(i)
        zeta = float(grid.anchors[i])
        step = grid.substep(i, numerics.ode_step)
        log_plus[i] = norm_integral(system.M, t_i, zeta, step)
        log_minus[i] = norm_integral(system.M, zeta, t_next, step)
        # rho_i^+(M) ln rho_i^+(M0) with ln rho = the integral itself
        nu_plus_i[i] = math.exp(log_plus[i]) * norm_integral(system.M0, t_i, zeta, step)
        nu_minus_i[i] = math.exp(log_minus[i]) * norm_integral(system.M0, zeta, t_next, step)
    if not (np.all(np.isfinite(log_plus)) and np.all(np.isfinite(log_minus))):
        raise ConditionViolation("B1", "- non-finite norm integral")

    rho_plus = np.exp(log_plus)
    rho_minus = np.exp(log_minus)
    rho = float(np.max(rho_plus * rho_minus))
    nu_plus = float(np.max(nu_plus_i))
    nu_minus = float(np.max(nu_minus_i))
    rho0 = rho ** 2 * (1 + nu_minus) / (1 - nu_plus) if nu_plus < 1 else math.inf
    e_at = math.exp(alpha * grid.theta)
    return GrowthConstants(
        rho_plus_i=rho_plus, rho_minus_i=rho_minus,
        nu_plus=nu_plus, nu_minus=nu_minus,
        rho=rho, rho0=rho0,
        rho_star=rho * e_at,
        rho_tilde=max(rho * rho0, rho * e_at),
        alpha=alpha, theta=grid.theta,
    )


def block_growth_constants(block: BlockSystem, d: DichotomySpec,
                           numerics: Optional[NumericsConfig] = None) -> Tuple[GrowthConstants, GrowthConstants]:
    return (growth_constants(block.x_linear(), d, numerics),
            growth_constants(block.y_linear(), d, numerics))


def condition_c_entry(report: HypothesisReport, name: str, gcs: Iterable[GrowthConstants]):
    gcs = list(gcs)
    nu = max(max(gc.nu_plus, gc.nu_minus) for gc in gcs)
    report.add(name, "max(nu_plus, nu_minus) < 1", nu, 1.0, nu < 1,
               note="achieved suprema over the working window")


# Dichotomy

def _stratified_times(grid: TimeGrid, count: int, rng: np.random.Generator) -> np.ndarray:
    edges = np.linspace(grid.t_min, grid.t_max, count + 1)
    return np.sort(edges[:-1] + rng.uniform(0, 1, count) * np.diff(edges))


def fit_exponential(gaps: np.ndarray, norms: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    """Least-squares fit of log|Z_P| = log K - alpha|t-s|; K is lifted to an envelope."""
    keep = norms > 1e-300
    gaps, logs = gaps[keep], np.log(norms[keep])
    if np.unique(np.round(gaps, 12)).size < 2:
        return None, None
    slope, _ = np.polyfit(gaps, logs, 1)
    alpha_hat = float(-slope)
    k_hat = float(np.exp(np.max(logs + alpha_hat * gaps)))
    return k_hat, alpha_hat


def _base_transitions(op: TransitionOperator, times: np.ndarray, threads: int):
    U = parallel_map(lambda t: op.transition_z(float(t), op.base), times, threads)
    V = parallel_map(lambda s: op.transition_z(op.base, float(s)), times, threads)
    return np.array(U), np.array(V)


def check_dichotomy(system: DepcagSystem, d: DichotomySpec, numerics: NumericsConfig,
                    op: Optional[TransitionOperator] = None) -> HypothesisReport:
    """|Z_P(t,s)| <= K exp(-alpha|t-s|) on stratified sample pairs, plus a fitted (K, alpha)."""
    op = op or TransitionOperator(system.linear_part(), numerics)
    times = _stratified_times(system.grid, numerics.samples, _rng(numerics))
    U, V = _base_transitions(op, times, numerics.threads)
    P, Q = d.projection, d.complement
    stable = np.einsum("aij,jk,bkl->abil", U, P, V)
    unstable = -np.einsum("aij,jk,bkl->abil", U, Q, V)
    later = times[:, None] >= times[None, :]
    zp = np.where(later[:, :, None, None], stable, unstable)
    norms = _matrix_norms(zp)
    gaps = np.abs(times[:, None] - times[None, :])
    bound = d.bigK * np.exp(-d.alpha * gaps)
    ratio = float(np.max(norms / bound))
    k_hat, alpha_hat = fit_exponential(gaps.ravel(), norms.ravel())

    report = HypothesisReport()
    report.add("dichotomy", "max |Z_P(t,s)| / (K exp(-alpha|t-s|)) <= 1",
               ratio, 1.0, ratio <= 1 + 1e-8,
               note=f"{times.size ** 2} sample pairs; {SAMPLING_NOTE}")
    report.constants.update({"K_fit": k_hat, "alpha_fit": alpha_hat})
    logger.debug(f"Dichotomy check ratio={ratio:.6g} fitted K={k_hat} alpha={alpha_hat}")
    return report


def check_block_dichotomy(block: BlockSystem, d: DichotomySpec, numerics: NumericsConfig,
                          transitions: Optional[BlockTransition] = None) -> HypothesisReport:
    """|Z_1(t,s)| <= exp(-alpha(t-s)) for t >= s and |Z_2(t,s)| <= K exp(alpha(t-s)) for s > t."""
    transitions = transitions or block_transition(block, numerics)
    times = _stratified_times(block.grid, numerics.samples, _rng(numerics))
    U1, V1 = _base_transitions(transitions.x, times, numerics.threads)
    U2, V2 = _base_transitions(transitions.y, times, numerics.threads)
    diff = times[:, None] - times[None, :]
    z1 = _matrix_norms(np.einsum("aij,bjk->abik", U1, V1))
    z2 = _matrix_norms(np.einsum("aij,bjk->abik", U2, V2))
    forward = diff >= 0
    ratio1 = float(np.max(z1[forward] / np.exp(-d.alpha * diff[forward])))
    backward = diff < 0
    ratio2 = float(np.max(z2[backward] / (d.bigK * np.exp(d.alpha * diff[backward])))) if backward.any() else 0.0
    ratio = max(ratio1, ratio2)

    report = HypothesisReport()
    report.add("frakD", "max(|Z_1|/exp(-alpha(t-s)), |Z_2|/(K exp(alpha(t-s)))) <= 1",
               ratio, 1.0, ratio <= 1 + 1e-8,
               note=f"x-block ratio {ratio1:.6g}, y-block ratio {ratio2:.6g}; {SAMPLING_NOTE}")
    return report


def block_transition(block: BlockSystem, numerics: NumericsConfig, tau: float = 0.0) -> BlockTransition:
    return BlockTransition(TransitionOperator(block.x_linear(), numerics),
                           TransitionOperator(block.y_linear(), numerics), tau)


# Theorem 1

def theorem1_report(bigK: float, alpha: float, rho_star: float, rho_tilde: float,
                    r: float, mu: float, l: float) -> HypothesisReport:
    report = HypothesisReport()
    lhs_a = 8 * bigK * l * rho_star / alpha
    report.add("eq10a", "8 K l rho*(M) / alpha <= 1", lhs_a, 1.0, lhs_a <= 1)
    lhs_b = 4 * bigK * r * rho_star / alpha
    report.add("eq10b", "4 K r rho*(M) / alpha <= 1", lhs_b, 1.0, lhs_b <= 1)
    margin = alpha - 4 * r * bigK * rho_tilde
    report.add("sigma", "alpha - 4 r K rho~(M) > 0", margin, 0.0, margin > 0,
               note="needed for the bound sigma of the bounded solution")
    sigma = 2 * bigK * mu * rho_tilde / margin if margin > 0 else math.inf
    report.constants.update({"sigma": sigma, "r": r, "mu": mu, "l": l})
    return report


def check_theorem1(system: DepcagSystem, d: DichotomySpec, numerics: Optional[NumericsConfig] = None,
                   growth: Optional[GrowthConstants] = None) -> HypothesisReport:
    growth = growth or growth_constants(system, d, numerics)
    h = system.h
    r, mu, l = (h.growth_r, h.offset_mu, h.lipschitz_l) if h is not None else (0.0, 0.0, 0.0)
    report = theorem1_report(d.bigK, d.alpha, growth.rho_star, growth.rho_tilde, r, mu, l)
    report.constants.update(growth.as_dict())
    return report


def sigma_bound(system: DepcagSystem, d: DichotomySpec, growth: GrowthConstants) -> float:
    return check_theorem1(system, d, growth=growth).constants["sigma"]


# Theorem 2

def f_factor(beta: float, ell: float, theta: float) -> float:
    """F(l, theta) = (exp((beta+l)theta) - 1) / ((beta+l)theta), continuous at 0."""
    x = (beta + ell) * theta
    return math.expm1(x) / x if x > 0 else 1.0


def continuity_exponent(beta: float, beta0: float, ell: float, theta: float) -> Dict[str, float]:
    """upsilon, F and p(l) = eta1 + eta2 exp(eta1 theta)/(1-upsilon), with eta1 = beta+l, eta2 = beta0+l."""
    F = f_factor(beta, ell, theta)
    upsilon = F * (beta0 + ell) * theta
    eta1, eta2 = beta + ell, beta0 + ell
    p = eta1 + eta2 * math.exp(eta1 * theta) / (1 - upsilon) if upsilon < 1 else math.inf
    return {"F_l_theta": F, "upsilon": upsilon, "eta1": eta1, "eta2": eta2, "p_l": p}


def theorem2_report(bigK: float, alpha: float, theta: float, rho_tilde_a: float, rho_tilde_b: float,
                    lam: float, omega: float, beta: float, beta0: float) -> HypothesisReport:
    report = HypothesisReport()
    worst = max(rho_tilde_a, rho_tilde_b)
    lhs = 8 * bigK * worst * omega / alpha
    report.add("eq11", "8 K rho~(A|B) omega / alpha < 1", lhs, 1.0, lhs < 1,
               note=f"A: {8 * bigK * rho_tilde_a * omega / alpha:.6g}, B: {8 * bigK * rho_tilde_b * omega / alpha:.6g}")
    lhs = 16 * bigK * worst * lam / alpha
    report.add("eq12", "16 K rho~(A|B) lambda / alpha < 1", lhs, 1.0, lhs < 1,
               note=f"A: {16 * bigK * rho_tilde_a * lam / alpha:.6g}, B: {16 * bigK * rho_tilde_b * lam / alpha:.6g}")
    alpha0 = alpha - 2 * omega * rho_tilde_a * math.exp(alpha * theta)
    report.add("eq13", "alpha0 = alpha - 2 omega rho~(A) exp(alpha theta) > 0", alpha0, 0.0, alpha0 > 0)
    cont = continuity_exponent(beta, beta0, omega, theta)
    report.add("eq14", "upsilon = F(l,theta)(beta0+l)theta < 1", cont["upsilon"], 1.0, cont["upsilon"] < 1,
               note="l = omega")
    # Gronwall constant of the x-block decay estimate
    theta_bar = 2 * omega * rho_tilde_a * math.exp(alpha * theta) * theta
    report.constants.update(cont)
    report.constants.update({
        "alpha0": alpha0, "theta_bar_decay": theta_bar,
        "rho_tilde_A": rho_tilde_a, "rho_tilde_B": rho_tilde_b,
    })
    report.notes.append("continuity constants take beta, beta0 as the bounds on |M| and |M0|")
    return report


def check_theorem2(block: BlockSystem, d: DichotomySpec, numerics: Optional[NumericsConfig] = None,
                   growth: Optional[Tuple[GrowthConstants, GrowthConstants]] = None) -> HypothesisReport:
    ga, gb = growth or block_growth_constants(block, d, numerics)
    report = HypothesisReport()
    condition_c_entry(report, "frakC", (ga, gb))
    report.merge(theorem2_report(d.bigK, d.alpha, block.grid.theta, ga.rho_tilde, gb.rho_tilde,
                                 block.lam, block.omega, block.beta, block.beta0))
    report.constants.update(ga.as_dict("_A"))
    report.constants.update(gb.as_dict("_B"))

    # displacement bounds used by the conjugacy maps
    c = report.constants
    alpha0, theta = c["alpha0"], block.grid.theta
    if alpha0 > 0 and c["theta_bar_decay"] < 1:
        c["h2_bound_factor"] = (d.bigK * block.lam * gb.rho_tilde
                                * (1 + (1 - c["theta_bar_decay"]) * math.exp(alpha0 * theta))
                                / (d.alpha + alpha0))
    else:
        c["h2_bound_factor"] = math.inf
    shifted = growth_constants(block.stacked_linear(), d, numerics)
    margin = d.alpha - 4 * (2 * block.lam) * d.bigK * shifted.rho_tilde
    c["sigma_bar"] = 2 * d.bigK * (4 * block.delta) * shifted.rho_tilde / margin if margin > 0 else math.inf
    c["rho_tilde_W"] = shifted.rho_tilde
    c["rho_star_W"] = shifted.rho_star
    return report


def check_shifted_theorem1(block: BlockSystem, d: DichotomySpec,
                           numerics: Optional[NumericsConfig] = None) -> HypothesisReport:
    """Theorem 1 inequalities for the shifted stacked system: r = 2 lambda, mu = 4 delta, l = 2 omega."""
    g = growth_constants(block.stacked_linear(), d, numerics)
    report = theorem1_report(d.bigK, d.alpha, g.rho_star, g.rho_tilde,
                             2 * block.lam, 4 * block.delta, 2 * block.omega)
    report.constants.update(g.as_dict("_W"))
    return report


def check_corollary1(block: BlockSystem, d: DichotomySpec) -> HypothesisReport:
    """Ordinary-differential-equation reduction: 8 K omega/alpha < 1 and 8 K lambda/alpha < 1."""
    report = HypothesisReport()
    is_ode = block.A0.is_zero and block.B0.is_zero and not any(t.uses_frozen for t in block.terms().values())
    note = "" if is_ode else "not applicable: frozen-argument terms present"
    lhs = 8 * d.bigK * block.omega / d.alpha
    report.add("cor1_omega", "8 K omega / alpha < 1", lhs, 1.0, lhs < 1 or not is_ode, note=note)
    lhs = 8 * d.bigK * block.lam / d.alpha
    report.add("cor1_lambda", "8 K lambda / alpha < 1", lhs, 1.0, lhs < 1 or not is_ode, note=note)
    return report


# Green bounds

def check_green_bound(op: TransitionOperator, d: DichotomySpec, growth: GrowthConstants,
                      numerics: NumericsConfig) -> HypothesisReport:
    """|G~(t,s)| <= K rho*(M) exp(-alpha|t-s|) on random pairs."""
    rng = _rng(numerics)
    grid = op.grid
    ts = rng.uniform(grid.t_min, grid.t_max, numerics.samples)
    ss = rng.uniform(grid.t_min, grid.t_max, numerics.samples)

    def ratio(pair):
        t, s = pair
        bound = d.bigK * growth.rho_star * math.exp(-d.alpha * abs(t - s))
        return opnorm(op.green(float(t), float(s), d)) / bound

    worst = max(parallel_map(ratio, list(zip(ts, ss)), numerics.threads))
    report = HypothesisReport()
    report.add("green_bound", "max |G~(t,s)| / (K rho*(M) exp(-alpha|t-s|)) <= 1",
               worst, 1.0, worst <= 1 + 1e-8, note=SAMPLING_NOTE)
    return report


def check_green_block_bound(transitions: BlockTransition, d: DichotomySpec,
                            growth: Tuple[GrowthConstants, GrowthConstants],
                            numerics: NumericsConfig) -> HypothesisReport:
    """|G_1(t,s)| <= K rho~(A) exp(-alpha(t-s)) for t >= s and |G_2(t,s)| <= K rho~(B) exp(alpha(t-s)) for t < s."""
    rng = _rng(numerics)
    grid = transitions.x.grid
    pairs = []
    for _ in range(numerics.samples):
        a, b = rng.uniform(grid.t_min, grid.t_max, 2)
        pairs.append((max(a, b), min(a, b), 1))
        pairs.append((min(a, b), max(a, b), 2))

    def ratio(item):
        t, s, which = item
        gc = growth[which - 1]
        bound = d.bigK * gc.rho_tilde * math.exp(-d.alpha * abs(t - s))
        return opnorm(transitions.green_block(float(t), float(s), which)) / bound

    worst = max(parallel_map(ratio, pairs, numerics.threads))
    report = HypothesisReport()
    report.add("green_block_bound", "max |G_i(t,s)| / (K rho~ exp(-alpha|t-s|)) <= 1",
               worst, 1.0, worst <= 1 + 1e-8,
               note=f"base time tau={transitions.tau}; {SAMPLING_NOTE}")
    return report


def interval_bounds_entries(op: TransitionOperator, growth: GrowthConstants,
                            numerics: NumericsConfig) -> HypothesisReport:
    worst_phi, worst_z = op.interval_bounds_check(growth.rho, growth.rho0, numerics.samples,
                                                  _rng(numerics))
    report = HypothesisReport()
    report.add("phi_bound", "max |Phi(t,s)| / rho(M) <= 1 inside one interval",
               worst_phi, 1.0, worst_phi <= 1 + 1e-9)
    report.add("z_bound", "max |Z(t,s)| / rho0(M) <= 1 inside one interval",
               worst_z, 1.0, worst_z <= 1 + 1e-9)
    return report


# Gronwall

def _eta_function(eta, constants: Optional[Dict[str, float]] = None) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(eta, str):
        tree = expr.parse(eta, variables={"t"}, constants=constants)
    elif callable(eta):
        return eta
    else:
        tree = eta
    run = expr.compile_expr(tree, constants or {})

    def fn(ts):
        ts = np.asarray(ts, dtype=float)
        return np.broadcast_to(np.asarray(run({"t": ts}), dtype=float), ts.shape)
    return fn


def _integral(fn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gauss-Legendre integral of fn over each [a_k, b_k]."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = mid[:, None] + half[:, None] * GAUSS_NODES[None, :]
    return half * np.sum(GAUSS_WEIGHTS[None, :] * fn(nodes.ravel()).reshape(nodes.shape), axis=1)


def gronwall_check(traj, eta, constants: Optional[Dict[str, float]] = None,
                   samples: int = 40, both_directions: bool = False) -> HypothesisReport:
    """
    With rho(t) = |z(t)| from the trajectory and theta_bar = sup 2 int_{I_i} eta < 1, check
        rho(t)        <= rho(tau) exp(theta~ int eta)
        rho(gamma(t)) <= (1 - theta_bar)^-1 rho(tau) exp(theta~ int eta)
    for sample pairs tau <= t (and t <= tau with |int eta| when both_directions),
    where theta~ = (2 - theta_bar)/(1 - theta_bar).
    """
    grid = traj.grid
    eta_fn = _eta_function(eta, constants)
    theta_i = 2 * _integral(eta_fn, grid.knots[:-1], grid.knots[1:])
    theta_bar = float(np.max(theta_i))
    report = HypothesisReport()
    report.constants["theta_bar"] = theta_bar
    report.add("gronwall_premise", "theta_bar = sup 2 int_{I_i} eta < 1", theta_bar, 1.0, theta_bar < 1)
    if theta_bar >= 1:
        report.notes.append("premise failed; conclusions not evaluated")
        return report
    theta_tilde = (2 - theta_bar) / (1 - theta_bar)
    report.constants["theta_tilde"] = theta_tilde

    lo, hi = traj.span
    inside = lambda ts: ts[(ts >= lo) & (ts <= hi)]
    points = np.unique(np.concatenate([
        inside(grid.knots), inside(grid.anchors), np.linspace(lo, hi, samples),
    ]))
    rho = np.array([vnorm(v) for v in traj.many(points)])
    gam = grid.gamma(points)
    has_gamma = (gam >= lo) & (gam <= hi)
    rho_gamma = np.full(points.size, np.nan)
    if has_gamma.any():
        rho_gamma[has_gamma] = [vnorm(v) for v in traj.many(gam[has_gamma])]

    cumulative = np.concatenate([[0.0], np.cumsum(_integral(eta_fn, points[:-1], points[1:]))])
    integral = cumulative[None, :] - cumulative[:, None]  # [tau, t] -> int_tau^t eta
    growth = np.exp(theta_tilde * np.abs(integral))
    pair_mask = np.ones(integral.shape, dtype=bool)
    if not both_directions:
        pair_mask = np.triu(pair_mask)  # tau = points[a] <= t = points[b]
    rhs = rho[:, None] * growth
    tol = 1e-9 * np.maximum(rhs, 1.0)
    excess1 = np.where(pair_mask, rho[None, :] - rhs - tol, -np.inf)
    worst1 = float(np.max(excess1))
    report.add("gronwall_conclusion", "rho(t) - rho(tau) exp(theta~ |int_tau^t eta|) <= 0",
               worst1, 0.0, worst1 <= 0, note=f"{int(pair_mask.sum())} pairs")

    rhs2 = rhs / (1 - theta_bar)
    mask2 = pair_mask & has_gamma[None, :]
    excess2 = np.where(mask2, rho_gamma[None, :] - rhs2 - tol / (1 - theta_bar), -np.inf)
    worst2 = float(np.max(excess2)) if mask2.any() else -math.inf
    report.add("gronwall_frozen", "rho(gamma(t)) - (1-theta_bar)^-1 rho(tau) exp(theta~ |int eta|) <= 0",
               worst2 if math.isfinite(worst2) else None, 0.0, worst2 <= 0,
               note=f"{int(mask2.sum())} pairs")
    return report


# Whole-config reports

def structural_entries(report: HypothesisReport, grid: TimeGrid):
    lengths = grid.lengths
    report.add("A1", "t_i < t_i+1 and t_i <= zeta_i <= t_i+1", 0.0, 0.0, True, note="checked at load")
    report.add("A2", "window holds at least one finite interval", float(grid.n_intervals), 1.0, True)
    report.add("A3", "one anchor per interval, gamma(t) = zeta_i on [t_i, t_i+1)", 0.0, 0.0, True)
    report.add("A4", "max(t_i+1 - t_i) <= theta", float(np.max(lengths)), grid.theta, True)


def verify_system(loaded) -> HypothesisReport:
    """Every applicable check for a loaded config, as one report."""
    system, d, numerics = loaded.system, loaded.dichotomy, loaded.numerics
    report = HypothesisReport()
    structural_entries(report, system.grid)
    report.merge(spot_checks(system, numerics))
    report.notes.append(SAMPLING_NOTE)

    if isinstance(system, BlockSystem):
        transitions = block_transition(system, numerics)
        growth = block_growth_constants(system, d, numerics)
        report.merge(check_block_dichotomy(system, d, numerics, transitions))
        report.merge(check_theorem2(system, d, numerics, growth))
        report.merge(check_shifted_theorem1(system, d, numerics))
        report.merge(check_green_block_bound(transitions, d, growth, numerics))
        report.merge(check_corollary1(system, d))
        return report

    op = TransitionOperator(system.linear_part(), numerics)
    growth = growth_constants(system, d, numerics)
    condition_c_entry(report, "C", [growth])
    report.merge(check_dichotomy(system, d, numerics, op))
    report.merge(interval_bounds_entries(op, growth, numerics))
    report.merge(check_green_bound(op, d, growth, numerics))
    report.merge(check_theorem1(system, d, numerics, growth))
    return report
