"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Lines are also collected and repeated in the pytest terminal summary.
"""
import hashlib
import math
import time

import numpy as np
import pytest

from conedp.cli import check_contingent, check_estimates, check_lipschitz, check_proximal, main
from conedp.cones import ConePair, OrderingCone, alpha, alpha_prime, deep_point, lipschitz_constant
from conedp.dp import backward_solve
from conedp.io import bundled_problems, load_problem
from conedp.oracle import enumerate_front, scalar_dp
from conedp.pareto import (
    check_sandwich_lemma,
    hausdorff,
    is_externally_stable,
    lipschitz_certificate,
    minimal_elements,
    project_to_k_class,
    sandwich_hypotheses,
)
from conedp.tangent import (
    MINIMAL_NOT_PROPER,
    SetMapSampler,
    contingent_derivative_estimate,
    properly_minimal,
)

from conftest import ACCEPTANCE_LINES

SCALAR = ["scalar_desk", "scalar_drift", "scalar_trig"]
VECTOR = ["constant_cost", "desk1", "desk_long", "double_integrator", "drift_tradeoff"]

CONES = {
    "R2+": OrderingCone.orthant(2),
    "skew": OrderingCone([[2.0, 1.0], [1.0, 2.0]]),
    "wide": OrderingCone([[1.0, -0.5], [-0.5, 1.0]]),
    "R3+": OrderingCone.orthant(3),
    "narrow3": OrderingCone([[1.0, 0.2, 0.2], [0.2, 1.0, 0.2], [0.2, 0.2, 1.0]]),
    "square3": OrderingCone([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [-0.5, 0.0, 1.0], [0.0, -0.5, 1.0]]),
}
PAIRS = {
    "skew<R2+": ("skew", "R2+"),
    "R2+<wide": ("R2+", "wide"),
    "skew<wide": ("skew", "wide"),
    "narrow3<R3+": ("narrow3", "R3+"),
}


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


@pytest.fixture(scope="module")
def solved():
    cache = {}

    def get(name):
        if name not in cache:
            pf = load_problem(name)
            start = time.perf_counter()
            field_ = backward_solve(pf.problem, pf.cone, pf.grid)
            cache[name] = (pf, field_, time.perf_counter() - start)
        return cache[name]

    return get


def test_criterion_01_scalar_reduction(solved):
    worst, slowest, shape_ok = 0.0, 0.0, True
    for name in SCALAR:
        pf, field_, elapsed = solved(name)
        start = time.perf_counter()
        table = scalar_dp(pf.problem, pf.grid)
        elapsed += time.perf_counter() - start
        slowest = max(slowest, elapsed)
        for i, row in enumerate(field_.fronts):
            for j, front in enumerate(row):
                if front is None:
                    shape_ok &= bool(np.isnan(table[i, j]))
                    continue
                shape_ok &= front.shape == (1, 1)
                worst = max(worst, abs(front[0, 0] - table[i, j]))
    ok = shape_ok and worst <= 1e-9 and slowest < 10.0
    assert record(1, ok, f"{len(SCALAR)} problems, max |front - scalar| = {worst:.2e}, slowest {slowest:.2f}s")


def test_criterion_02_oracle_equality(solved):
    worst, slowest, used = 0.0, 0.0, []
    for name in VECTOR:
        pf, field_, elapsed = solved(name)
        if len(pf.problem.controls) ** field_.n_steps > 10 ** 6:
            continue
        used.append(name)
        grid = pf.grid.state_grid()
        valid = np.flatnonzero(field_.valid_mask(0))
        nodes = [np.asarray(q, float) for q in pf.grid.queries]
        nodes += [grid.coords(grid.multi_index(j)) for j in valid[np.linspace(0, len(valid) - 1, 3).astype(int)]]
        start = time.perf_counter()
        for x in nodes:
            oracle = enumerate_front(pf.problem, pf.cone, 0.0, x, pf.grid.step, grid=grid, cap=10 ** 6,
                                     substeps=pf.grid.substeps)
            worst = max(worst, hausdorff(field_.front(0.0, x).points, oracle.front.points))
        slowest = max(slowest, elapsed + time.perf_counter() - start)
    ok = len(used) >= 3 and worst <= 1e-9 and slowest < 60.0
    assert record(2, ok, f"{', '.join(used)}: max Hausdorff {worst:.2e}, slowest {slowest:.1f}s")


def test_criterion_03_lipschitz_certificate():
    rng = np.random.default_rng(2024)
    summary, ok = [], True
    for label, (inner, outer) in PAIRS.items():
        pair = ConePair(CONES[inner], CONES[outer])
        bound = lipschitz_constant(pair)
        dim = pair.inner.dim
        trials = violations = 0
        worst = 0.0
        while trials < 1000:
            k1 = project_to_k_class(rng.uniform(size=(int(rng.integers(3, 25)), dim)), pair)
            k2 = project_to_k_class(k1 + rng.normal(scale=10.0 ** rng.uniform(-3, -0.5), size=k1.shape), pair)
            rep = lipschitz_certificate(k1, k2, pair)
            if rep.h_inputs == 0:
                continue
            trials += 1
            violations += not rep.satisfied
            worst = max(worst, rep.ratio)
        ok &= violations == 0
        summary.append(f"{label} {trials} pairs, {violations} violations, max ratio {worst:.3f} < M {bound:.3f}")
    for name in ("desk1", "drift_tradeoff"):
        rep = check_lipschitz(load_problem(name))
        ok &= rep["ok"]
        summary.append(f"{name} {rep['n_pairs']} pairs, max ratio {rep['max_ratio']:.3f}")
    assert record(3, ok, "; ".join(summary))


def test_criterion_04_constants():
    ok, worst_rel, worst_margin = True, 0.0, math.inf
    for cone in CONES.values():
        d1 = np.linalg.norm(deep_point(cone, 1.0))
        for l in (0.5, 1.0, 2.0, 10.0):
            dl = np.linalg.norm(deep_point(cone, l))
            worst_rel = max(worst_rel, abs(dl - l * d1) / (l * d1))
            worst_margin = min(worst_margin, dl - l)
    pairs = [ConePair(CONES[a], CONES[b]) for a, b in PAIRS.values()]
    pairs += [p for p in (load_problem(n).pair for n in bundled_problems()) if p is not None]
    alphas = [alpha(p) for p in pairs]
    primes = [alpha_prime(p) for p in pairs]
    orthant = np.linalg.norm(deep_point(CONES["R2+"], 1.0))
    ok = (worst_rel <= 1e-6 and worst_margin > 0 and min(alphas) > 0 and min(primes) > 1
          and abs(orthant - math.sqrt(2)) <= 1e-6)
    assert record(4, ok, f"scaling rel err {worst_rel:.1e}, min(|d_l| - l) {worst_margin:.3f}, "
                         f"min alpha {min(alphas):.3f}, min alpha' {min(primes):.3f}, |d_1(R2+)| {orthant:.9f}")


def test_criterion_05_stability_and_sandwich():
    rng = np.random.default_rng(7)
    cones = list(CONES.values())
    stable_fail = sandwich_fail = 0
    n = 10 ** 4
    for _ in range(n):
        cone = cones[rng.integers(len(cones))]
        cloud = rng.normal(size=(int(rng.integers(1, 30)), cone.dim))
        stable_fail += not is_externally_stable(cloud, minimal_elements(cloud, cone).points, cone)
    for _ in range(n):
        cone = cones[rng.integers(len(cones))]
        k1 = rng.normal(size=(int(rng.integers(1, 20)), cone.dim))
        picks = k1[rng.integers(len(k1), size=int(rng.integers(0, 20)))]
        w = rng.exponential(size=(len(picks), len(cone.generators)))
        k2 = np.vstack([k1, picks + w @ cone.generators])
        sandwich_fail += not (sandwich_hypotheses(k1, k2, cone) and check_sandwich_lemma(k1, k2, cone))
    ok = stable_fail == 0 and sandwich_fail == 0
    assert record(5, ok, f"{n} stability trials, {stable_fail} failures; {n} sandwich trials, {sandwich_fail} failures")


def test_criterion_06_estimates(solved):
    rows, ok = [], True
    for name in bundled_problems():
        pf, field_, _ = solved(name)
        rep = check_estimates(pf, field_)
        ok &= rep["ok"] and rep["n_probes"] >= 100
        rows.append(f"{name} {max(rep['max_violation'].values()):+.1e}")
    assert record(6, ok, f"100 probes each, max violation: {', '.join(rows)}")


def test_criterion_07_counterexamples():
    cube = SetMapSampler(lambda x: np.cbrt(np.atleast_2d(x)), 1, 1)
    empty = contingent_derivative_estimate(cube, [0.0], [0.0], [1.0]).is_empty

    def upset(z):
        z = np.atleast_2d(z)
        return z[:, 1] >= np.where(z[:, 0] < 0, z[:, 0] ** 2, -z[:, 0]) - 1e-12

    label, est = properly_minimal(upset, [0.0, 0.0], OrderingCone.orthant(2), return_estimate=True)
    grid = est.directions[:720]
    truth = (grid[:, 1] >= -1e-12) | (grid[:, 1] >= -grid[:, 0] - 1e-12)
    wrong = grid[truth != est.inside[:720]]
    ang = np.degrees(np.arctan2(wrong[:, 1], wrong[:, 0])) % 360.0
    band = np.all((np.abs(ang - 180.0) <= 1.0) | (np.abs(ang - 315.0) <= 1.0))
    ok = empty and label == MINIMAL_NOT_PROPER and band
    assert record(7, ok, f"cube-root DF((0,0);1) empty={empty}; parabola/line {label}, "
                         f"{len(wrong)} of 720 angles misclassified, all within 1 degree of the boundary={band}")


def test_criterion_08_contingent_residuals(solved):
    rows, ok = [], True
    for name in VECTOR:
        pf, field_, _ = solved(name)
        pf.verify["max_triples"] = 400
        rep = check_contingent(pf, field_)
        traced = all(f["trace"] for f in rep["failures"])
        ok &= rep["pass_rate"] >= 0.95 and traced and rep["reformulation_defects"] == 0
        rows.append(f"{name} {rep['pass_rate']:.3f} of {rep['n_triples']}")
    assert record(8, ok, f"pass rates: {', '.join(rows)}")


def test_criterion_09_polarity(solved):
    total = bad = 0
    worst = -math.inf
    for name in bundled_problems():
        pf, field_, _ = solved(name)
        rep = check_proximal(pf, field_)
        total += rep["n_normals"]
        bad += rep["polarity_violations"]
        worst = max(worst, rep["polarity_max"])
    ok = total > 0 and bad == 0 and worst <= 1e-8
    assert record(9, ok, f"{total} normals over the bundled suite, {bad} violations, max <eta, v> = {worst:.1e}")


def _digest(folder):
    h = hashlib.sha256()
    for path in sorted(folder.rglob("*")):
        if path.suffix in (".csv", ".json"):
            h.update(str(path.relative_to(folder)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def test_criterion_10_determinism(tmp_path, capsys):
    digests = []
    for run in ("a", "b"):
        root = tmp_path / run
        for name in ("desk1", "scalar_desk", "tri_desk"):
            assert main(["solve", name, "-o", str(root / name / "field")]) == 0
            assert main(["oracle", name, "-o", str(root / name / "oracle")]) == 0
            assert main(["verify", name, str(root / name / "field"), "--which", "estimates", "dpp", "contingent",
                         "proximal", "--report", str(root / name / "report.json")]) == 0
        capsys.readouterr()
        digests.append(_digest(root))
    ok = digests[0] == digests[1]
    assert record(10, ok, f"two runs, sha256 {digests[0][:16]} vs {digests[1][:16]}")
