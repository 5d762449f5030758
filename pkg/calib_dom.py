"""Full dominance calibration (not part of the package)."""
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
mode = "unpopular"

m, cats = synth.canonical_dataset()
item = ds.select_target_items(m, mode, 1, seed=derive_seed(ROOT, "item"))[0]
spec = ds.select_target_users(m, cats, item, n=50, cat_threshold=10,
                              seed=derive_seed(ROOT, "users"), popularity_mode=mode)
acc = ds.split_accessible(m, 0.2, spec.target_users, seed=derive_seed(ROOT, "acc"))
acc_spec = ds.remap_target_spec(spec, m, acc)
attacker = atk.AttackerConfig(kind="template")
surrogate = cf.TrainConfig(embedding_dim=32, epochs=50, loss="bce", model_kind="mf")
victim = cf.TrainConfig(embedding_dim=32, epochs=50, loss="bce", model_kind="mf")
H, N = 6, 100

t0 = time.time()
tab1 = up.estimate_simulated(acc, acc_spec, attacker, surrogate, H=H, E=10, K=1,
                             base_seed=derive_seed(ROOT, "est"))
print(f"table K=1 [{time.time()-t0:.0f}s] col means {np.round(tab1.as_array().mean(axis=0),3)}")
prx1 = up.estimate_proxy(acc, acc_spec, H=H, p=ProxyParams(1.0, 1.0))
prx03 = up.estimate_proxy(acc, acc_spec, H=H, p=ProxyParams(1.0, 0.3))

arms = {
    "dp_sim1": al.allocate_dp(tab1, N),
    "dp_prx1": al.allocate_dp(prx1, N),
    "dp_prx03": al.allocate_dp(prx03, N),
    "uniform": al.allocate_uniform(acc_spec, N, H),
}
for name, alloc in arms.items():
    print(name, "spent", alloc.total_spent, "hist", np.bincount(alloc.budgets, minlength=H + 1).tolist())

hr = {k: [] for k in list(arms) + ["random"]}
for s in (1, 2, 3, 4, 5):
    row = []
    for name in hr:
        alloc = (al.allocate_random(acc_spec, N, H, seed=derive_seed(ROOT, "rand", s))
                 if name == "random" else arms[name])
        gen = atk.AttackerConfig(kind="template", seed=derive_seed(ROOT, "gen", name, s))
        fakes = atk.generate(gen, alloc, acc_spec, acc)
        rep = ev.evaluate(m, fakes, spec, victim, Ks=(10,), seed=derive_seed(ROOT, "victim", s))
        hr[name].append(rep.get("target", "after", 10, "hr"))
        row.append(f"{name}={hr[name][-1]:.2f}")
    print(f"seed {s}: " + " ".join(row))
print({k: round(float(np.mean(v)), 3) for k, v in hr.items()})
