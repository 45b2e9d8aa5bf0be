"""Finite-difference verification of both network backward passes.

Builds the matching and evaluation networks at a seeded random
initialization and compares analytic gradients against central
differences in float64.  Both should come in far below 1e-4.
"""

import numpy as np

from semistereo import evalnet, matchnet
from semistereo.tensornet import grad_check, init_params

rng = np.random.default_rng(0)
for name, specs, shape in (
    ("matching-net", matchnet.matching_net_spec(), matchnet.INPUT_SHAPE),
    ("evaluation-net", evalnet.evaluation_net_spec(), evalnet.INPUT_SHAPE),
):
    params = init_params(specs, shape, seed=1)
    x = rng.random((1,) + shape)
    t = rng.integers(0, 2, size=1)
    err = grad_check(params, x, t)
    print(f"{name}: worst relative gradient error {err:.2e}")
