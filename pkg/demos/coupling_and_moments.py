"""One arrival stream, three processes; then exact descent-time moments.

Run:  python demos/coupling_and_moments.py
"""
import numpy as np

from asglimits import ModelParams, absorption_moment_oracle, asg_step_moments, kingman_step_moment
from asglimits.engine import simulate_coupled
from asglimits.stats import stream_for

p = ModelParams(theta=1.0, sigma=2.0)
traj = simulate_coupled(p, 50, stream_for(1, 0), stop_level=1)
print(f"{len(traj)} effective arrivals from 50 lineages, order violations: {traj.order_violations()}")
grid = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0]
grid = [t for t in grid if t <= traj.stop_time]
print("   t      kingman  mutation  asg")
for t, c in zip(grid, traj.counts_at(grid)):
    print(f"{t:6.2f}   {c[0]:7d}  {c[1]:8d}  {c[2]:4d}")

for ev in traj.events[:5]:
    print(f"{ev.time:.5f} {ev.mark.kind.name:<9s} i={ev.mark.i} j={ev.mark.j} applied={ev.applied}")

print("\nE[T_{n,n-1}] with selection against the coalescent with mutation")
tab = asg_step_moments(p, 200, 2)
for n in (2, 5, 20, 100, 200):
    a = tab.value(n, 1)
    x = kingman_step_moment(n, 1, p.theta)
    print(f"n={n:4d}  a={a:.6e}  x={x:.6e}  n^3 (a-x)={n**3 * (a - x):.4f}")

# the dense solve on a truncated chain is an independent route to the same numbers
top = 60
rec = asg_step_moments(p, top, 3, chain_top=top)
dev = max(abs(rec.value(n, k) / absorption_moment_oracle(n, top, p, 3).value(n, k) - 1)
          for n in range(2, top + 1) for k in (1, 2, 3))
print(f"\nrecursion vs dense solve on levels 2..{top}: max relative deviation {dev:.1e}")
