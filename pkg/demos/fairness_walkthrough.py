"""The fairness reward by hand, one number at a time.

Three robots meet at an intersection. Robot 0 has waited the least, so
when it stops to let the others through it gets paid for yielding to the
more patient robots whose actions improved. The walkthrough ends with the
variance-alignment identity: maximizing the reward's neighbor sum is the
same as descending the improvement-weighted variance of patience.

Run:  python demos/fairness_walkthrough.py
"""

import numpy as np

from fairnav import ncf2

c = ncf2.FairnessConstants()
print(f"alpha={c.alpha} (yield bonus), beta={c.beta} (patience tax)\n")

# accumulated patience and this step's action improvements
rho = np.array([1.0, 2.0, 3.0])      # robot 0 least patient
xi = np.array([0.5, 1.0])            # improvements of robots 1 and 2

print("robot 0 stops (f=0); neighbors 1 and 2 move on")
gain = c.alpha * float(np.sum((rho[1:] - rho[0]) * xi))
tax = c.beta * rho[0]
denom = float(rho.sum())
print(f"  yield gain  alpha * sum((rho_j - rho_0) * xi_j) = {gain}")
print(f"  patience tax beta * rho_0                       = {tax}")
print(f"  normalizer   sum(rho)                           = {denom}")
r = ncf2.fairness_efficiency_reward(0, rho[0], rho[1:], xi, c)
print(f"  reward = (gain - tax) / normalizer              = {r:.12f}\n")

print("the same robot moving instead earns nothing:")
print("  reward =", ncf2.fairness_efficiency_reward(1, rho[0], rho[1:], xi, c), "\n")

# alignment with the improvement-weighted patience variance
g = np.random.default_rng(0)
rho_bar = g.random(5)
xi5 = g.random(5) + 0.1
i = 2
lhs = ncf2.patience_alignment(rho_bar, xi5, i)
k = xi5.sum() ** 2 / (2.0 * xi5[i])
rhs = -k * ncf2.weighted_variance_grad(rho_bar, xi5, i)
print("variance alignment on a random instance:")
print(f"  neighbor sum        sum((rho_j - rho_i) * xi_j) = {lhs:+.12f}")
print(f"  -K * dV/drho_i with K = (sum xi)^2 / (2 xi_i)   = {rhs:+.12f}")
print(f"  difference {abs(lhs - rhs):.2e}: pushing the sum up pulls the")
print("  weighted variance of patience down, which is the fairness goal.")
