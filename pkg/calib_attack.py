"""Calibration scratch for the attack-dominance criterion (not part of the package)."""
import time

import numpy as np

from ubalab import allocator as al
from ubalab import attackers as atk
from ubalab import cf
from ubalab import dataset as ds
from ubalab import evaluator as ev
from ubalab import synth
from ubalab import uplift as up
from ubalab.pathcount import ProxyParams
from ubalab.seeding import derive_seed

ROOT = 11

t0 = time.time()
m, cats = synth.canonical_dataset()
item = ds.select_target_items(m, "unpopular", 1, seed=derive_seed(ROOT, "item"))[0]
print("target item", item, "count", int(m.item_counts()[item]))
spec = ds.select_target_users(m, cats, item, n=50, cat_threshold=10,
                              seed=derive_seed(ROOT, "users"), popularity_mode="unpopular")
acc = ds.split_accessible(m, 0.2, spec.target_users, seed=derive_seed(ROOT, "acc"))
acc_spec = ds.remap_target_spec(spec, m, acc)
print("accessible", acc, f"{time.time()-t0:.0f}s")

attacker = atk.AttackerConfig(kind="template")
surrogate = cf.TrainConfig(embedding_dim=32, epochs=50, loss="bce", model_kind="mf")
victim = cf.TrainConfig(embedding_dim=32, epochs=50, loss="bce", model_kind="mf")
H, E, N, K = 6, 10, 100, 10

t0 = time.time()
table_sim = up.estimate_simulated(acc, acc_spec, attacker, surrogate, H=H, E=E, K=K,
                                  base_seed=derive_seed(ROOT, "est"))
print(f"simulated table {time.time()-t0:.0f}s")
Ysim = table_sim.as_array()
print("sim Y col means:", np.round(Ysim.mean(axis=0), 3))

t0 = time.time()
table_prx = up.estimate_proxy(acc, acc_spec, H=H, p=ProxyParams(1.0, 1.0))
print(f"proxy table {time.time()-t0:.0f}s; col means {np.round(table_prx.as_array().mean(axis=0),3)}")

allocs = {
    "dp_sim": al.allocate_dp(table_sim, N),
    "dp_prx": al.allocate_dp(table_prx, N),
    "uniform": al.allocate_uniform(acc_spec, N, H),
    "random": None,  # per-seed below
}
print("dp_sim budgets:", allocs["dp_sim"].budgets)
print("dp_prx budgets:", allocs["dp_prx"].budgets)

seeds = [1, 2, 3, 4, 5]
hr = {k: [] for k in allocs}
for s in seeds:
    for name in allocs:
        alloc = (al.allocate_random(acc_spec, N, H, seed=derive_seed(ROOT, "rand", s))
                 if name == "random" else allocs[name])
        gen_cfg = atk.AttackerConfig(kind="template", seed=derive_seed(ROOT, "gen", name, s))
        fakes = atk.generate(gen_cfg, alloc, acc_spec, acc)
        rep = ev.evaluate(m, fakes, spec, victim, Ks=(10, 20), seed=derive_seed(ROOT, "victim", s))
        hr[name].append(rep.get("target", "after", 10, "hr"))
        if name == "dp_sim":
            before = rep.get("target", "before", 10, "hr")
    print(f"seed {s}: before={before:.3f} " + " ".join(f"{k}={hr[k][-1]:.3f}" for k in allocs))
print({k: float(np.mean(v)) for k, v in hr.items()})
