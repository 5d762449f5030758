"""Target-item anchoring scan (not part of the package)."""
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
m, cats = synth.canonical_dataset()
counts = m.item_counts()
groups = ds.popularity_groups(m, 5)
top = groups[0]
# pick items near several anchoring levels inside the top quintile
want = [int(x) for x in sys.argv[1:]] or [1032, 300, 150, 60]
picks = []
for w in want:
    idx = top[np.argmin(np.abs(counts[top] - w))]
    picks.append(int(idx))
print("picked items:", [(i, int(counts[i])) for i in picks])

surrogate = cf.TrainConfig(embedding_dim=32, epochs=50, loss="bce", model_kind="mf")
victim = cf.TrainConfig(embedding_dim=32, epochs=50, loss="bce", model_kind="mf")

for item in picks:
    try:
        spec = ds.select_target_users(m, cats, item, n=50, cat_threshold=10,
                                      seed=derive_seed(ROOT, "users"), popularity_mode="popular")
    except Exception as exc:
        print(f"item {item}: {exc}")
        continue
    acc = ds.split_accessible(m, 0.2, spec.target_users, seed=derive_seed(ROOT, "acc"))
    acc_spec = ds.remap_target_spec(spec, m, acc)
    attacker = atk.AttackerConfig(kind="template")
    t0 = time.time()
    tab = up.estimate_simulated(acc, acc_spec, attacker, surrogate, H=6, E=3, K=10,
                                base_seed=derive_seed(ROOT, "est"))
    probe10 = np.round(tab.as_array().mean(axis=0), 2)
    curve = []
    for t in (1, 3, 6):
        alloc = al.constant_allocation(acc_spec, t)
        gen = atk.AttackerConfig(kind="template", seed=derive_seed(ROOT, "g", item, t))
        fakes = atk.generate(gen, alloc, acc_spec, acc)
        rep = ev.evaluate(m, fakes, spec, victim, Ks=(10,), seed=derive_seed(ROOT, "v", 1))
        curve.append(round(rep.get("target", "after", 10, "hr"), 2))
    print(f"item {item} (count {int(counts[item])}): probeK10 {probe10} | victim t=1/3/6 {curve} [{time.time()-t0:.0f}s]")
