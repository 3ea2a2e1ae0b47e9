"""Heat semigroups with a slow-bond boundary at the origin, and the exclusion process they describe.

Modules
-------
kernels
    Heat kernel derivatives and adaptive Gauss-Kronrod quadrature.
testfn
    Piecewise test functions with their seminorms and membership checks.
semigroups
    Semigroups for each boundary regime, with generator and continuity diagnostics.
simulator
    Exclusion process with a slow bond and its fluctuation field.
stats
    Covariance oracles and martingale tests for simulated fields.
cli
    The ``slowbond`` command.
"""
