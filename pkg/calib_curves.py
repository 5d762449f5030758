"""Response-curve calibration scratch (not part of the package)."""
import sys
import time

import numpy as np

from ubalab import allocator as al
from ubalab import attackers as atk
from ubalab import cf
from ubalab import dataset as ds
from ubalab import evaluator as ev
from ubalab import synth
from ubalab import uplift as up
from ubalab.seeding import derive_seed

ROOT = 11
mode = sys.argv[1] if len(sys.argv) > 1 else "popular"

m, cats = synth.canonical_dataset()
item = ds.select_target_items(m, mode, 1, seed=derive_seed(ROOT, "item"))[0]
print("mode", mode, "item", item, "count", int(m.item_counts()[item]))
spec = ds.select_target_users(m, cats, item, n=50, cat_threshold=10,
                              seed=derive_seed(ROOT, "users"), popularity_mode=mode)
acc = ds.split_accessible(m, 0.2, spec.target_users, seed=derive_seed(ROOT, "acc"))
acc_spec = ds.remap_target_spec(spec, m, acc)

attacker = atk.AttackerConfig(kind="template")
surrogate = cf.TrainConfig(embedding_dim=32, epochs=50, loss="bce", model_kind="mf")
victim = cf.TrainConfig(embedding_dim=32, epochs=50, loss="bce", model_kind="mf")
H, K = 6, 10

# probe curve (smaller E for speed)
t0 = time.time()
table = up.estimate_simulated(acc, acc_spec, attacker, surrogate, H=H, E=4, K=K,
                              base_seed=derive_seed(ROOT, "est"))
print(f"probe col means (E=4): {np.round(table.as_array().mean(axis=0), 3)} [{time.time()-t0:.0f}s]")

# victim-scale response to constant budgets
for t in (1, 2, 3, 4, 6):
    alloc = al.constant_allocation(acc_spec, t)
    hrs = []
    for s in (1, 2):
        gen = atk.AttackerConfig(kind="template", seed=derive_seed(ROOT, "g", t, s))
        fakes = atk.generate(gen, alloc, acc_spec, acc)
        rep = ev.evaluate(m, fakes, spec, victim, Ks=(10,), seed=derive_seed(ROOT, "v", s))
        hrs.append(rep.get("target", "after", 10, "hr"))
    print(f"victim constant t={t} (n_fakes={50*t}): HR@10 = {np.mean(hrs):.3f} (before {rep.get('target','before',10,'hr'):.3f})")
