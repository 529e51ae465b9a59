"""
CCP Training Example
====================

Train a 2-D embedding of synthetic blobs with chance-constrained proxies and
compare it with the single-proxy baseline.
"""

# ----------------------------------------------------
# Imports
# ----------------------------------------------------
import matplotlib.pyplot as plt

import ccpdml as cd


# ----------------------------------------------------
# 1. Data and configurations
# ----------------------------------------------------
overrides = {"data.n_classes": 6, "data.per_class": 45, "data.test_per_class": 20,
             "sampler.batch_size": 24, "ccp.max_steps": 600}
configs = {mode: cd.load_config("preset:synth", overrides={**overrides, "mode": mode})
           for mode in ("baseline_proxy", "ccp")}

data = configs["ccp"].data
dataset = cd.split(cd.synth_blobs(data.n_classes, data.per_class, data.input_dim, data.spread, seed=0,
                                  test_per_class=data.test_per_class), data.val_fraction, seed=0)


# ----------------------------------------------------
# 2. Training
# ----------------------------------------------------
results = {mode: cd.run_ccp(config, dataset) for mode, config in configs.items()}

for mode, result in results.items():
    print(f"{mode:15s} test MAP@R {result.test.map_at_r:.4f}  "
          f"covering radius {result.test.avg_covering_radius:.4f}  "
          f"projections {len(result.projections)}")


# ----------------------------------------------------
# 3. Figure: test embeddings of both runs
# ----------------------------------------------------
fig, axes = plt.subplots(1, 2, figsize=(12, 6))
test = dataset.test_idx

for ax, (mode, result) in zip(axes, results.items()):
    emb = cd.forward(result.net, dataset.inputs[test])
    ax.scatter(emb[:, 0], emb[:, 1], c=dataset.labels[test], cmap="tab10", s=10)
    proxies = result.proxies.proxies
    ax.scatter(proxies[:, 0], proxies[:, 1], c="black", marker="x", s=60, label="Proxies")
    ax.set_title(f"{mode}: MAP@R {result.test.map_at_r:.3f}")
    ax.set_aspect("equal")
    ax.legend()

plt.show()
