"""
How likely is a random buffer to miss a class entirely?
=======================================================

Sampling a buffer of B items uniformly from C balanced classes leaves a given
class out with probability (1 - 1/C)^B. With B roughly equal to C, that
probability starts at 0.25 for two classes and climbs toward 1/e as the class
count grows, which is the motivating failure mode for balance-aware buffer
updates. The closed form is checked against a Monte-Carlo estimate.
"""

from replay_lab.cli import monte_carlo_omission
from replay_lab.sampling import omission_probability

TRIALS = 100_000

print(f"{'C':>4} {'B':>4} {'analytic':>10} {'monte-carlo':>12}")
for c in (2, 4, 6, 10, 20, 50):
    b = c  # buffer as large as the class count
    analytic = omission_probability(c, b)
    mc = monte_carlo_omission(c, b, trials=TRIALS, seed=0)
    print(f"{c:>4} {b:>4} {analytic:>10.4f} {mc:>12.4f}")

print("\nlimit for C -> infinity at B = C: 1/e =", f"{1 / 2.718281828459045:.4f}")
print("a larger buffer drives the risk down fast:")
for b in (10, 20, 50, 100):
    print(f"  C=10, B={b:>3}: {omission_probability(10, b):.5f}")
