"""How fast the ASG comes down from infinity, next to Kingman's coalescent.

Run:  python demos/coming_down.py
"""
import numpy as np

from asglimits import ModelParams, cdi_table, hitting_moments

for key in [(0, 0), (1, 0), (1, 1), (0, 4)]:
    p = ModelParams(*key)
    print(f"theta={p.theta:g} sigma={p.sigma:g}")
    for row in cdi_table(p, [1e-1, 1e-2, 1e-3, 1e-4]):
        print(f"  t={row.t:<7g} nu_t={row.nu:<6d} t*nu_t/2={row.scaled:.4f}"
              f"  E[T_nu]={row.mean_at_nu:.6g} <= t < E[T_nu-1]={row.mean_below_nu:.6g}")

# selection slows the descent, but only at order n^-2
p = ModelParams(1, 1)
hm = hitting_moments(p, 10, 1000, 2)
levels = np.array([10, 30, 100, 300, 1000])
gap = hm.mean(levels) - hm.kingman_cumulants[levels - 10, 1]
print("\n   n   E[T_n] ASG      gap to coalescent   n^2 * gap   sd(T_n)")
for n, g in zip(levels, gap):
    print(f"{n:5d}   {hm.mean(n):.8f}   {g:.3e}           {n * n * g:.4f}    {np.sqrt(hm.var(n)):.3e}")
