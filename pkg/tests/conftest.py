import sys
from pathlib import Path

import numpy as np

# make the shared oracle helpers importable from every test module
sys.path.insert(0, str(Path(__file__).parent))

from sqmc.models import LGParams, make_lg_model, simulate_lg_data  # noqa: E402


class FlatPotentialModel:
    """LG dynamics with G_t == c everywhere (flat reweighting)."""

    def __init__(self, T=5, c=1.0):
        inner = make_lg_model(LGParams(), np.zeros(T + 1))
        self.__dict__.update(inner.__dict__)
        self._inner = inner
        self._logc = np.log(c)
        self.potential_depends_on_prev = False

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def log_potential(self, t, x_prev, x):
        return np.full(np.atleast_2d(x).shape[0], self._logc)


class ConstantKernelModel:
    """Real filter weights, but backward kernels constant in both arguments.

    Collapses every backward recursion onto the filter weights exactly.
    """

    def __init__(self, T=5, seed=0):
        params = LGParams()
        _, ys = simulate_lg_data(params, T, seed=seed)
        inner = make_lg_model(params, ys)
        self.__dict__.update(inner.__dict__)
        self._inner = inner
        self.potential_depends_on_prev = False

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def log_transition_matrix(self, t, x_prev, x):
        return np.zeros((np.atleast_2d(x_prev).shape[0], np.atleast_2d(x).shape[0]))
