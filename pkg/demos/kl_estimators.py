"""Compare the three KL estimators on Gaussians and on grid transitions.

    python3 demos/kl_estimators.py
"""

import numpy as np

from dvorl import divergence as dv
from dvorl import envs

rng = np.random.default_rng(0)

print("Gaussian pairs, 5000 samples each (closed form 0.5 |mu|^2)")
for shift in (0.5, 1.0, 2.0):
    p = rng.normal(size=(5000, 2))
    q = rng.normal(size=(5000, 2)) + [shift, 0.0]
    print(
        f"  mu=({shift}, 0): exact {0.5 * shift**2:.3f}  knn {dv.kl_knn(p, q):.3f}  "
        f"gaussian {dv.kl_gaussian(p, q):.3f}"
    )

# SlipGrid transitions take finitely many values; compare a slip-free
# buffer against buffers from increasingly slippery grids
print("\nSlipGrid (x, u, x') features, 2000 source rows vs 500 target rows")
base = envs.DomainConfig()
uniform = envs.TabularPolicy(np.full((base.n_states, 4), 0.25))
src = envs.generate_buffer(envs.make_env(base, 1), uniform, 2000, 1.0, seed=1)
fs = dv.extract_features(src, "state_action_next")
for slip in (0.0, 0.1, 0.3, 0.5):
    tgt = envs.generate_buffer(envs.make_env(base.shifted(slip_prob=slip), 2), uniform, 500, 1.0, seed=2)
    ft = dv.extract_features(tgt, "state_action_next")
    spacing = dv.grid_spacing(np.vstack([fs, ft]))
    knn = dv.estimate_kl(fs, ft, dv.KlEstimatorConfig(), np.random.default_rng(0), spacing)
    print(
        f"  slip {slip:.1f}: histogram {dv.kl_histogram(fs, ft):.3f}  knn {knn:.3f}  "
        f"gaussian {dv.kl_gaussian(fs, ft):.3f}"
    )
