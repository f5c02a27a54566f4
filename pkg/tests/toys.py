"""Tiny two-stage programs with closed-form optima, shared across test modules.

Newsvendor: order x in [0, 100] at unit cost 1, sell min(x, d) at 3, salvage
the remainder at 0.5.  For d ~ U(30, 90) the optimum is x* = 78 with expected
profit 108; for d in {30, 90} equiprobable it is x* = 90 with value 105 while
the mean-demand order x = 60 earns 82.5.

Pinball: choose x in [0, 100] against a target s, paying `under` per unit of
shortfall and `over` per unit of excess (profit is the negated loss).  For
s in {40, 60} equiprobable with costs 9/1 the optimum is x* = 60 at value
-10, the mean-target solution x = 50 earns -50, so the true VSS is 40.  The
loss at x* has a small spread across scenarios, which keeps every SAA
estimate tight; the family is the workhorse for VSS significance checks.
"""

import numpy as np

from hydrobid.lp import INF, LpBuilder
from hydrobid.lshaped import SecondStage, TwoStageProgram


def newsvendor_family(demands):
    def first_stage():
        b = LpBuilder()
        b.add_var("x", 0.0, 100.0, obj=-1.0)
        return b

    def second_stage(d):
        b = LpBuilder()
        y = b.add_var("sold", 0.0, float(d), obj=3.0)
        z = b.add_var("salvage", 0.0, INF, obj=0.5)
        row = b.add_row(0.0, 0.0, [(y, 1.0), (z, 1.0)])
        return SecondStage(b, ((row, 0, -1.0),))

    n = len(demands)
    return TwoStageProgram(first_stage, second_stage, list(demands),
                           np.full(n, 1.0 / n))


def uniform_demand(rng):
    return float(rng.uniform(30.0, 90.0))


def two_point_demand(rng):
    return float(rng.choice([30.0, 90.0]))


def newsvendor_profit(x, d):
    return -x + 3.0 * min(x, d) + 0.5 * max(x - d, 0.0)


NEWSVENDOR_UNIFORM_OPTIMUM = 108.0    # at x = 78
NEWSVENDOR_TWO_POINT_OPTIMUM = 105.0  # at x = 90


def pinball_family(targets, under_cost=9.0, over_cost=1.0):
    def first_stage():
        b = LpBuilder()
        b.add_var("x", 0.0, 100.0, obj=0.0)
        return b

    def second_stage(s):
        b = LpBuilder()
        u = b.add_var("under", 0.0, INF, obj=-float(under_cost))
        v = b.add_var("over", 0.0, INF, obj=-float(over_cost))
        b.add_row(float(s), INF, [(u, 1.0)])    # u + x >= s
        b.add_row(float(-s), INF, [(v, 1.0)])   # v - x >= -s
        return SecondStage(b, ((0, 0, 1.0), (1, 0, -1.0)))

    n = len(targets)
    return TwoStageProgram(first_stage, second_stage, list(targets),
                           np.full(n, 1.0 / n))


def pinball_target(rng):
    return float(rng.choice([40.0, 60.0]))


def pinball_profit(x, s, under_cost=9.0, over_cost=1.0):
    return -(under_cost * max(s - x, 0.0) + over_cost * max(x - s, 0.0))


PINBALL_OPTIMUM = -10.0   # at x = 60
PINBALL_EEV = -50.0       # mean-target solution x = 50
PINBALL_VSS = 40.0
