"""Built-in four-stage, three-state, two-input benchmark instance.

The coefficients are constant over ``k = 0..3``. Reference tables for the
Riccati matrices and optimal gains (four decimals) are included for
regression tests and the CLI.

The reference tables were produced with ``T_4 = diag(0.5, 1, 0)``, i.e. with
the listed terminal mean weight acting as the *total* weight on
``E[x_4]`` in the centred cost
``E[(x - Ex)' G (x - Ex)] + Ex' (G + Gbar) Ex``.
:func:`benchmark_problem` encodes exactly that by default
(``Gbar_4 = diag(0.5, 1, 0) - G_4``); ``centred_terminal=False`` stores the
listed ``Gbar_4`` literally, which gives ``T_4 = diag(0.5, 2, 1)`` and
different ``T``/``M`` tables (``S`` and ``L`` are unaffected).
"""
from __future__ import annotations

import numpy as np

from .problem import InitialCondition, ProblemSpec

A = [[0.2, 0.4, 0.2], [0.0, 0.2, 0.6], [0.6, 0.4, 0.2]]
ABAR = [[0.3, 0.4, 0.2], [0.0, 0.2, 0.7], [0.6, 0.5, 0.2]]
B = [[0.4, 0.2], [0.2, 0.4], [0.3, 0.3]]
BBAR = [[0.5, 0.2], [0.2, 0.5], [0.2, 0.3]]
C = [[0.2, 0.4, 0.6], [0.4, 0.2, 0.6], [0.2, 0.4, 0.2]]
CBAR = [[0.3, 0.4, 0.6], [0.4, 0.3, 0.6], [0.2, 0.4, 0.3]]
D = [[0.2, 0.6], [0.6, 0.4], [0.3, 0.1]]
DBAR = [[0.3, 0.5], [0.5, 0.4], [0.3, 0.3]]
Q = np.diag([0.0, 1.5, 1.0])
QBAR = np.diag([1.0, 1.0, 0.0])
R = np.diag([1.0, 1.0])
RBAR = np.diag([1.5, 1.0])
G = np.diag([0.0, 1.0, 1.0])
GBAR_LISTED = np.diag([0.5, 1.0, 0.0])

ZETA = np.ones(3)

S_TABLE = np.array([
    [[0.5227, 0.3542, 0.1966], [0.3542, 1.9655, 0.3170], [0.1966, 0.3170, 1.7009]],
    [[0.5188, 0.3513, 0.1951], [0.3513, 1.9595, 0.3130], [0.1951, 0.3130, 1.6943]],
    [[0.4862, 0.3264, 0.1861], [0.3264, 1.9219, 0.2928], [0.1861, 0.2928, 1.6660]],
    [[0.3747, 0.2421, 0.1492], [0.2421, 1.7652, 0.1849], [0.1492, 0.1849, 1.4532]],
])
T_TABLE = np.array([
    [[4.3329, 1.7927, -0.2507], [1.7927, 4.4213, 0.4463], [-0.2507, 0.4463, 3.4720]],
    [[4.2341, 1.7868, -0.2366], [1.7868, 4.4007, 0.4611], [-0.2366, 0.4611, 3.4411]],
    [[3.4908, 1.6119, -0.0389], [1.6119, 4.2394, 0.4881], [-0.0389, 0.4881, 3.3283]],
    [[1.4782, 0.3777, 0.3734], [0.3777, 3.2001, 0.5548], [0.3734, 0.5548, 2.4932]],
])
M_TABLE = np.array([
    [[-0.3286, -0.4234, -0.3474], [-0.3189, -0.4351, -0.7770]],
    [[-0.3436, -0.4156, -0.3531], [-0.3137, -0.4381, -0.7687]],
    [[-0.4029, -0.3946, -0.3315], [-0.2938, -0.4160, -0.7519]],
    [[-0.2418, -0.2552, -0.3178], [-0.1351, -0.2213, -0.5101]],
])
L_TABLE = np.array([
    [[-0.3455, -0.3271, -0.4240], [-0.2467, -0.2937, -0.4941]],
    [[-0.3436, -0.3235, -0.4207], [-0.2446, -0.2897, -0.4885]],
    [[-0.3290, -0.3009, -0.4043], [-0.2298, -0.2692, -0.4650]],
    [[-0.2552, -0.2084, -0.2954], [-0.1744, -0.1608, -0.3028]],
])
TABLE_TOL = 5e-4


def benchmark_problem(centred_terminal: bool = True) -> ProblemSpec:
    gbar = GBAR_LISTED - G if centred_terminal else GBAR_LISTED
    return ProblemSpec(n=3, m=2, N=4, A=A, Abar=ABAR, B=B, Bbar=BBAR, C=C, Cbar=CBAR,
                       D=D, Dbar=DBAR, Q=Q, Qbar=QBAR, R=R, Rbar=RBAR, G_N=G, Gbar_N=gbar)


def benchmark_initial() -> InitialCondition:
    return InitialCondition.deterministic(ZETA)
