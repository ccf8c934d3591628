"""Brute-force information-theoretic checks on small discrete distributions.

Verifies, by exact summation over dense probability tables, that the joint
mutual information between K jointly-independent part variables and a label
variable is lower-bounded by the sum of per-part mutual informations, and
that conditional cross-entropy upper-bounds conditional entropy with the KL
identity. Natural-log units throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _xlogx(p: np.ndarray) -> np.ndarray:
    """p * log(p) with 0 log 0 := 0."""
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy(p: np.ndarray) -> float:
    return float(-_xlogx(np.asarray(p, dtype=float)).sum())


def mutual_info(joint: np.ndarray) -> float:
    """MI of a 2-D joint table (axes X, Y), in nats."""
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    return entropy(px) + entropy(py) - entropy(joint.ravel())


@dataclass
class DiscreteJoint:
    """Dense joint table over (P^1, ..., P^K, Y); Y is the last axis."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if (self.table < 0).any():
            raise ValueError("probabilities must be nonnegative")
        if abs(self.table.sum() - 1.0) > 1e-12:
            raise ValueError("table must sum to 1 within 1e-12")

    @property
    def num_parts(self) -> int:
        return self.table.ndim - 1

    def parts_marginal(self) -> np.ndarray:
        return self.table.sum(axis=-1)

    def part_y_marginal(self, k: int) -> np.ndarray:
        axes = tuple(a for a in range(self.table.ndim - 1) if a != k)
        return self.table.sum(axis=axes)

    def joint_parts_vs_y(self) -> np.ndarray:
        """Flatten the part axes into a single variable: table (prod sizes, |Y|)."""
        return self.table.reshape(-1, self.table.shape[-1])


class IndependenceError(ValueError):
    """Part marginal does not factorize into a product of its marginals."""


def check_parts_independent(joint: DiscreteJoint, tol: float = 1e-10):
    """Precondition: full joint independence of the parts (stronger than the
    pairwise independence assumed in some derivations; recorded in reports)."""
    marg = joint.parts_marginal()
    product = np.ones_like(marg)
    for k in range(joint.num_parts):
        axes = tuple(a for a in range(marg.ndim) if a != k)
        pk = marg.sum(axis=axes)
        shape = [1] * marg.ndim
        shape[k] = len(pk)
        product = product * pk.reshape(shape)
    if np.abs(marg - product).max() > tol:
        raise IndependenceError(
            "part marginal does not factorize (max deviation "
            f"{np.abs(marg - product).max():.3e})")


@dataclass
class LowerBoundReport:
    joint_mi: float
    sum_marginal_mi: float
    gap: float
    note: str = ("precondition: full joint independence of parts; "
                 "verified as a lower bound, not an equality")


def verify_lower_bound(joint: DiscreteJoint, tol: float = 1e-9) -> LowerBoundReport:
    """Assert MI(P^1..P^K; Y) >= sum_k MI(P^k; Y) - tol and report the gap."""
    check_parts_independent(joint)
    joint_mi = mutual_info(joint.joint_parts_vs_y())
    sum_mi = sum(mutual_info(joint.part_y_marginal(k))
                 for k in range(joint.num_parts))
    gap = joint_mi - sum_mi
    assert gap >= -tol, f"lower bound violated: gap = {gap:.3e}"
    return LowerBoundReport(joint_mi, sum_mi, gap)


@dataclass
class CeBoundReport:
    cond_ce: float
    cond_entropy: float
    kl: float


def verify_ce_bound(joint_py: np.ndarray, predictor: np.ndarray,
                    tol: float = 1e-10) -> CeBoundReport:
    """joint_py: table over (P, Y); predictor: rows q(y|p), one per p value.

    Asserts cond_ce >= cond_entropy and cond_ce - cond_entropy == conditional
    KL within tol.
    """
    joint_py = np.asarray(joint_py, dtype=float)
    predictor = np.asarray(predictor, dtype=float)
    pp = joint_py.sum(axis=1)
    cond_ce = 0.0
    cond_h = 0.0
    kl = 0.0
    for p_idx in range(joint_py.shape[0]):
        if pp[p_idx] == 0:
            continue
        post = joint_py[p_idx] / pp[p_idx]
        q = predictor[p_idx]
        nz = post > 0
        if (q[nz] <= 0).any():
            raise ValueError("predictor assigns zero mass to a supported label")
        cond_ce += pp[p_idx] * float(-(post[nz] * np.log(q[nz])).sum())
        cond_h += pp[p_idx] * entropy(post)
        kl += pp[p_idx] * float((post[nz] * np.log(post[nz] / q[nz])).sum())
    assert cond_ce >= cond_h - 1e-12, "cross-entropy below conditional entropy"
    assert abs((cond_ce - cond_h) - kl) <= tol, "KL identity violated"
    return CeBoundReport(cond_ce, cond_h, kl)


# ---------------------------------------------------------------------------
# random constructions


def random_independent_joint(rng: np.random.Generator, num_parts: int = 3,
                             part_size: int = 3, y_size: int = 4) -> DiscreteJoint:
    """Independent part marginals composed with a random conditional p(y|parts)."""
    marginals = [rng.dirichlet(np.ones(part_size)) for _ in range(num_parts)]
    prod = np.ones([part_size] * num_parts)
    for k, pk in enumerate(marginals):
        shape = [1] * num_parts
        shape[k] = part_size
        prod = prod * pk.reshape(shape)
    cond = rng.dirichlet(np.ones(y_size), size=prod.size).reshape(
        list(prod.shape) + [y_size])
    return DiscreteJoint(prod[..., None] * cond)


def xor_joint() -> DiscreteJoint:
    """Two independent uniform bits with Y = XOR: joint MI = ln 2 while every
    per-part MI is 0 (strict-inequality witness for the lower bound)."""
    table = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            table[a, b, a ^ b] = 0.25
    return DiscreteJoint(table)


def random_predictor_pair(rng: np.random.Generator, p_size: int = 4,
                          y_size: int = 3):
    joint = rng.dirichlet(np.ones(p_size * y_size)).reshape(p_size, y_size)
    predictor = rng.dirichlet(np.ones(y_size), size=p_size)
    return joint, predictor


def run_verification(trials: int, seed: int) -> dict:
    """Randomized sweep over both bounds; returns a printable summary dict."""
    rng = np.random.default_rng(seed)
    worst_gap = np.inf
    for _ in range(trials):
        num_parts = int(rng.integers(2, 4))
        part_size = int(rng.integers(2, 4))
        y_size = int(rng.integers(2, 5))
        report = verify_lower_bound(
            random_independent_joint(rng, num_parts, part_size, y_size))
        worst_gap = min(worst_gap, report.gap)
    xor_report = verify_lower_bound(xor_joint())
    max_kl_dev = 0.0
    for _ in range(trials):
        joint, predictor = random_predictor_pair(
            rng, int(rng.integers(2, 6)), int(rng.integers(2, 6)))
        rep = verify_ce_bound(joint, predictor)
        max_kl_dev = max(max_kl_dev, abs((rep.cond_ce - rep.cond_entropy) - rep.kl))
    return {
        "trials": trials,
        "seed": seed,
        "min_lower_bound_gap": worst_gap,
        "xor_gap": xor_report.gap,
        "xor_gap_minus_ln2": xor_report.gap - np.log(2),
        "max_kl_identity_deviation": max_kl_dev,
        "note": LowerBoundReport(0, 0, 0).note,
    }
