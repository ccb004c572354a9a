import numpy as np

from strata_nerf.selfcheck import PRIMITIVE_CASES, check_primitive, run_selfcheck


def test_matmul_case_is_well_formed():
    assert check_primitive("matmul", np.random.default_rng(0), points=5) < 1e-5


def test_every_check_passes():
    results = run_selfcheck(seed=0, points=3)
    assert len(results) == len(PRIMITIVE_CASES) + 8
    assert [r.name for r in results if not r.passed] == []
