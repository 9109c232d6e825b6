# ---
# jupyter:
#   jupytext:
#     formats: py:percent
# ---

# %% [markdown]
# # One-dimensional walkthrough
#
# Fit a Kriging model and a one-hidden-layer deep GP to five points of the
# deceptive 1D test function, compare their predictions, then run a short
# EGO loop with each surrogate.

# %%
import numpy as np
import torch

from dego import (
    AcquisitionSpec,
    Dataset,
    DgpConfig,
    EgoConfig,
    SurrogateSpec,
    fit_gp,
    get_problem,
    init_dgp,
    lhs,
    predict_dgp_gaussian,
    predict_gp,
    run_ego,
    train_dgp,
)

torch.set_num_threads(1)
problem = get_problem("xiong_1d")
print("grid optimum:", problem.optimum)

# %%
rng = np.random.default_rng(0)
X = lhs(5, 1, rng)
f, _ = problem.evaluate(X)
data = Dataset(X, f)

gp = fit_gp(data, "pexp", rng=rng)
dgp = train_dgp(init_dgp(DgpConfig(hidden_layers=1, width=2), data, rng), rng=rng)
print("GP log marginal:", gp.log_marginal, " DGP ELBO:", dgp.elbo)

# %%
grid = np.linspace(0.0, 1.0, 201)[:, None]
truth, _ = problem.evaluate(grid)
m_gp, v_gp = predict_gp(gp, grid)
m_dgp, v_dgp = predict_dgp_gaussian(dgp, grid)
for name, m in [("GP", m_gp), ("DGP", m_dgp)]:
    print(f"{name} RMSE on grid: {np.sqrt(np.mean((m - truth) ** 2)):.4f}")

# %% [markdown]
# ## Short EGO runs on a shared design

# %%
for label, spec in [
    ("EGO", SurrogateSpec("gp")),
    ("DEGO 1HL", SurrogateSpec("dgp", dgp=DgpConfig(hidden_layers=1, width=2))),
]:
    cfg = EgoConfig(surrogate=spec, acquisition=AcquisitionSpec(), doe_size=5, infill_count=8)
    rec = run_ego(problem, cfg, np.random.default_rng(1), X0=X)
    print(f"{label}: best {rec.best:.5f} at x={rec.best_x}")
