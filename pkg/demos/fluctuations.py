"""Small-time fluctuations of the lineage count around 2/t.

A reduced version of the acceptance campaign (a couple of minutes).
Run:  python demos/fluctuations.py
"""
from asglimits import ModelParams
from asglimits.experiments import clt_experiment, griffiths_experiment, martingale_experiment
from asglimits.stats import summarize

p = ModelParams(1, 1)
rep = griffiths_experiment(ModelParams(0, 0), 0.01, 10**4, 2000, seed=1)
print(summarize(rep.rows), "\n")

rep = martingale_experiment(p, [0.1, 0.05, 0.025], 10**4, 1000, seed=2)
print(summarize(rep.rows), "\n")

rep = clt_experiment(p, [1e-3, 2.5e-4], [0.25, 0.5, 1.0], [2000, 500], seed=3,
                     path_replicates=300)
keep = {"var_X", "cov_X@0.5", "ks_D", "sup_X_minus_Y", "L_eps_compensator", "sup_ratio", "t_nu/2"}
print(summarize(r for r in rep.rows if r.statistic in keep))
