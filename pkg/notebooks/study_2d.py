# ---
# jupyter:
#   jupytext:
#     formats: py:percent
# ---

# %% [markdown]
# # Constrained two-dimensional study
#
# The objective is a smooth quadratic, the constraint is discontinuous. The
# objective is modelled by Kriging and the constraint by the surrogate under
# test, and candidates are screened by their expected violation.

# %%
import numpy as np
import torch

from dego import AcquisitionSpec, DgpConfig, EgoConfig, SurrogateSpec, get_problem, repeat_study

torch.set_num_threads(1)
problem = get_problem("constrained_2d")
print("grid optimum:", problem.optimum)

# %%
acq = AcquisitionSpec(constraint_policy="expected_violation", threshold=1e-3)
configs = {
    "EGO": EgoConfig(surrogate=SurrogateSpec("gp"), acquisition=acq, doe_size=15, infill_count=10),
    "DEGO 2HL": EgoConfig(
        surrogate=SurrogateSpec("dgp", dgp=DgpConfig(hidden_layers=2, width=10)),
        objective_surrogate=SurrogateSpec("gp"),
        acquisition=acq,
        doe_size=15,
        infill_count=10,
    ),
}

# %%
for label, cfg in configs.items():
    s = repeat_study(problem, cfg, n_repetitions=2, base_seed=0)
    print(f"{label}: mean best {s.mean_best:.4f} success {s.success_pct:.0f}%")
    print("  mean trace:", np.round(s.mean_trace, 4))
