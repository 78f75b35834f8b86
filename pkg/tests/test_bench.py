import numpy as np
import pytest

from stgp.bench import bench_realization, naive_cost, time_case
from stgp.hyper import cost_pass
from stgp.kernels import SpatialKernelSpec, eval_spatial_gram
from stgp.stmodel import build_transformed_model, transform_outputs


def test_naive_filter_agrees_with_structured(rng):
    real = bench_realization()
    assert real.r == 3
    Ks = eval_spatial_gram(SpatialKernelSpec(2.0), rng.normal(size=(5, 2)))
    Y = rng.normal(size=(5, 15))
    m = build_transformed_model(real, Ks, 0.2)
    rep = cost_pass(m, transform_outputs(m, Y))
    logdet, quad = naive_cost(real, Ks, 0.2, Y)
    assert logdet == pytest.approx(rep.logdet, rel=1e-10)
    assert quad == pytest.approx(rep.quad, rel=1e-10)


def test_time_case_fields():
    row = time_case(10, 4, repeats=1)
    assert row.t_structured > 0 and row.t_naive > 0 and np.isfinite(row.speedup)
