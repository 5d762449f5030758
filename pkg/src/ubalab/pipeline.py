"""Experiment pipeline: prepare -> estimate -> allocate -> attack -> defend.

One JSON config file fully determines a run. Every stage consumes only
serialized artifacts of earlier stages and writes its own under the
output directory, so stages can also be executed independently from the
command line. All randomness derives from the config's root seed via
labeled paths (see ``seeding``); rerunning an unchanged config
reproduces every artifact byte for byte.

Uplift tables are the dominant cost, so the estimate stage is cached:
the cache key hashes the accessible matrix fingerprint, the target
spec, and every estimator parameter; writers publish via atomic rename
so concurrent runs can share a cache directory.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, allocator, attackers, cf, dataset, defense, evaluator, pathcount, uplift
from .errors import ContractError, UbalabError
from .seeding import derive_seed

CACHE_ENV_VAR = "UBALAB_CACHE"

DEFAULT_CONFIG = {
    "dataset": {"ratings": None, "categories": None, "sep": ",", "skip_header": False},
    "preprocess": {"k_core": 10, "like_threshold": 3.0},
    "target": {"popularity_mode": "popular", "n_target_users": 50, "cat_threshold": 10},
    "accessible_ratio": 0.2,
    "attacker": {"kind": "template", "profile_size": None, "bandwagon_pool": 100},
    "estimator": {
        "method": "simulated",  # simulated | proxy
        "E": 10,
        "H": 6,
        "K": 10,
        "alpha": 1.0,
        "beta": 1.0,
        "profile_size": None,
    },
    "allocator": "dp",  # dp | uniform | random
    "N": 100,
    "victim": {
        "model_kind": "mf",
        "loss": "bce",
        "embedding_dim": 32,
        "epochs": 50,
        "learning_rate": 0.05,
        "l2_reg": 1e-4,
        "negatives_per_positive": 4,
        "lightgcn_layers": 2,
    },
    "surrogate": {
        "model_kind": "mf",
        "loss": "bce",
        "embedding_dim": 32,
        "epochs": 50,
        "learning_rate": 0.05,
        "l2_reg": 1e-4,
        "negatives_per_positive": 4,
        "lightgcn_layers": 2,
    },
    "Ks": [10, 20],
    "defense": None,  # e.g. {"detector": "fap", "n_flag": null, "damping": 0.85, "n_components": 3}
    "correlate": {"order": 3, "n_groups": 50, "sample_cap": 200000},
    "repeat_seeds": [1, 2, 3, 4, 5],
    "seed": 0,
}

_ALLOCATORS = ("dp", "uniform", "random")
_ESTIMATORS = ("simulated", "proxy")
_DETECTORS = ("pca", "fap")


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ContractError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value, path + key + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        merged = _deep_merge(DEFAULT_CONFIG, d)
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        r = self.raw
        if not r["dataset"]["ratings"]:
            raise ContractError("config.dataset.ratings is required")
        if not r["dataset"]["categories"]:
            raise ContractError("config.dataset.categories is required")
        if r["allocator"] not in _ALLOCATORS:
            raise ContractError(f"allocator must be one of {_ALLOCATORS}")
        if r["estimator"]["method"] not in _ESTIMATORS:
            raise ContractError(f"estimator.method must be one of {_ESTIMATORS}")
        if r["N"] < 0:
            raise ContractError("N must be >= 0")
        if not r["repeat_seeds"]:
            raise ContractError("repeat_seeds must be non-empty")
        if not r["Ks"]:
            raise ContractError("Ks must be non-empty")
        if not 0 < r["accessible_ratio"] <= 1:
            raise ContractError("accessible_ratio must lie in (0, 1]")
        if r["defense"] is not None and r["defense"].get("detector") not in _DETECTORS:
            raise ContractError(f"defense.detector must be one of {_DETECTORS}")
        cf.TrainConfig(**r["victim"])
        cf.TrainConfig(**r["surrogate"])
        attackers.AttackerConfig(
            kind=r["attacker"]["kind"],
            profile_size=r["attacker"]["profile_size"],
            bandwagon_pool=r["attacker"]["bandwagon_pool"],
        )

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()
        ).hexdigest()

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def victim_cfg(self) -> cf.TrainConfig:
        return cf.TrainConfig(**self.raw["victim"])

    def surrogate_cfg(self) -> cf.TrainConfig:
        return cf.TrainConfig(**self.raw["surrogate"])

    def attacker_cfg(self, seed: int = 0) -> attackers.AttackerConfig:
        a = self.raw["attacker"]
        return attackers.AttackerConfig(
            kind=a["kind"],
            profile_size=a["profile_size"],
            bandwagon_pool=a["bandwagon_pool"],
            seed=seed,
        )


def resolve_cache_dir(cfg_dir=None, flag_dir=None) -> Path | None:
    """Cache directory priority: CLI flag, then UBALAB_CACHE, then config."""
    for cand in (flag_dir, os.environ.get(CACHE_ENV_VAR), cfg_dir):
        if cand:
            return Path(cand)
    return None


# ---------------------------------------------------------------------------
# artifact helpers


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise UbalabError(f"missing artifact {path}; run the {stage} stage first")
    return path


def save_spec_json(path: Path, spec: dataset.TargetSpec, m: dataset.InteractionMatrix) -> None:
    _write_json(
        path,
        {
            "target_item": spec.target_item,
            "target_item_id": m.item_ids[spec.target_item],
            "target_users": list(spec.target_users),
            "target_user_ids": [m.user_ids[u] for u in spec.target_users],
            "popularity_mode": spec.popularity_mode,
            "selection_seed": spec.selection_seed,
        },
    )


def load_spec_json(path: Path) -> dataset.TargetSpec:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    return dataset.TargetSpec(
        d["target_item"], tuple(d["target_users"]), d["popularity_mode"], d["selection_seed"]
    )


def load_fake_block(path: Path, m: dataset.InteractionMatrix, sep: str = ",") -> attackers.FakeUserBlock:
    """Read back a fake block persisted in the interaction text format."""
    rows_by_user: dict[str, list[int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            user, item, _rating = line.split(sep)
            rows_by_user.setdefault(user, []).append(m.item_index(item))
    order = sorted(rows_by_user, key=lambda uid: int(uid.split("::")[1]))
    rows = tuple(np.asarray(sorted(rows_by_user[uid]), dtype=np.int64) for uid in order)
    prov = tuple(("file", None, None) for _ in rows)
    return attackers.FakeUserBlock(rows, prov, None, None)


# ---------------------------------------------------------------------------
# stages


def stage_prepare(cfg: ExperimentConfig, out: Path) -> list[Path]:
    r = cfg.raw
    d = out / "prepare"
    d.mkdir(parents=True, exist_ok=True)
    log = dataset.load_ratings(
        r["dataset"]["ratings"], sep=r["dataset"]["sep"], skip_header=r["dataset"]["skip_header"]
    )
    m = dataset.to_implicit(log, like_threshold=r["preprocess"]["like_threshold"])
    if r["preprocess"]["k_core"] > 1:
        m = dataset.kcore_filter(m, k=r["preprocess"]["k_core"])
    cats = dataset.load_categories(r["dataset"]["categories"], m, sep=r["dataset"]["sep"])
    mode = r["target"]["popularity_mode"]
    item = dataset.select_target_items(m, mode, 1, seed=derive_seed(cfg.seed, "target-item"))[0]
    spec = dataset.select_target_users(
        m,
        cats,
        item,
        n=r["target"]["n_target_users"],
        cat_threshold=r["target"]["cat_threshold"],
        seed=derive_seed(cfg.seed, "target-users"),
        popularity_mode=mode,
    )
    acc = dataset.split_accessible(
        m, r["accessible_ratio"], spec.target_users, seed=derive_seed(cfg.seed, "accessible")
    )
    dataset.save_matrix(d / "real_matrix.im", m)
    dataset.save_matrix(d / "accessible.im", acc)
    save_spec_json(d / "target_spec.json", spec, m)
    return [d / "real_matrix.im", d / "accessible.im", d / "target_spec.json"]


def _load_prepared(out: Path):
    d = out / "prepare"
    m = dataset.load_matrix(_require(d / "real_matrix.im", "prepare"))
    acc = dataset.load_matrix(_require(d / "accessible.im", "prepare"))
    spec = load_spec_json(_require(d / "target_spec.json", "prepare"))
    acc_spec = dataset.remap_target_spec(spec, m, acc)
    return m, acc, spec, acc_spec


def _estimator_params(cfg: ExperimentConfig) -> dict:
    e = cfg.raw["estimator"]
    if e["method"] == "simulated":
        return {
            "E": e["E"],
            "H": e["H"],
            "K": e["K"],
            "base_seed": derive_seed(cfg.seed, "estimate"),
            "attacker": cfg.raw["attacker"],
            "surrogate": cfg.raw["surrogate"],
        }
    return {
        "H": e["H"],
        "alpha": e["alpha"],
        "beta": e["beta"],
        "profile_size": e["profile_size"],
    }


def stage_estimate(cfg: ExperimentConfig, out: Path, cache_dir: Path | None = None) -> list[Path]:
    _, acc, _, acc_spec = _load_prepared(out)
    d = out / "estimate"
    d.mkdir(parents=True, exist_ok=True)
    e = cfg.raw["estimator"]
    params = _estimator_params(cfg)
    key = uplift.cache_key(acc, acc_spec, e["method"], params)
    table = None
    cache_hit = False
    cache_path = (cache_dir / f"{key}.ut") if cache_dir else None
    if cache_path is not None and cache_path.exists():
        table = uplift.load_table(cache_path)
        cache_hit = True
    if table is None:
        if e["method"] == "simulated":
            table = uplift.estimate_simulated(
                acc,
                acc_spec,
                cfg.attacker_cfg(),
                cfg.surrogate_cfg(),
                H=e["H"],
                E=e["E"],
                K=e["K"],
                base_seed=params["base_seed"],
            )
        else:
            table = uplift.estimate_proxy(
                acc,
                acc_spec,
                H=e["H"],
                p=pathcount.ProxyParams(e["alpha"], e["beta"]),
                profile_size=e["profile_size"],
            )
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            tmp = cache_path.with_suffix(f".tmp.{os.getpid()}")
            uplift.save_table(tmp, table)
            os.replace(tmp, cache_path)
    uplift.save_table(d / "uplift_table.ut", table)
    uplift.save_uplift_curves(d / "uplift_curves.tsv", table)
    return [d / "uplift_table.ut", d / "uplift_curves.tsv"], {
        "cache_key": key,
        "cache_hit": cache_hit,
    }


def stage_allocate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    _, acc, _, acc_spec = _load_prepared(out)
    d = out / "allocate"
    d.mkdir(parents=True, exist_ok=True)
    kind = cfg.raw["allocator"]
    N = cfg.raw["N"]
    H = cfg.raw["estimator"]["H"]
    if kind == "dp":
        table = uplift.load_table(_require(out / "estimate" / "uplift_table.ut", "estimate"))
        if table.target_users != acc_spec.target_users:
            raise ContractError("uplift table does not match the prepared target spec")
        alloc = allocator.allocate_dp(table, N)
    elif kind == "uniform":
        alloc = allocator.allocate_uniform(acc_spec, N, H)
    else:
        alloc = allocator.allocate_random(acc_spec, N, H, seed=derive_seed(cfg.seed, "allocate-random"))
    allocator.save_allocation(d / "allocation.tsv", alloc, user_labels=acc.user_ids)
    return [d / "allocation.tsv"]


def _load_allocation(out: Path, acc, acc_spec) -> allocator.Allocation:
    labels, budgets, n_total, p_max = allocator.load_allocation(
        _require(out / "allocate" / "allocation.tsv", "allocate")
    )
    users = tuple(acc.user_index(lbl) for lbl in labels)
    if users != acc_spec.target_users:
        raise ContractError("allocation artifact does not match the prepared target spec")
    return allocator.Allocation(users, tuple(budgets), N=n_total, P_max=p_max)


def stage_attack(cfg: ExperimentConfig, out: Path) -> list[Path]:
    m, acc, spec, acc_spec = _load_prepared(out)
    alloc = _load_allocation(out, acc, acc_spec)
    d = out / "attack"
    d.mkdir(parents=True, exist_ok=True)
    artifacts = []
    reports = []
    label = f"{cfg.raw['allocator']}+{cfg.raw['attacker']['kind']}"
    for s in cfg.raw["repeat_seeds"]:
        gen_cfg = cfg.attacker_cfg(seed=derive_seed(cfg.seed, "attack-gen", s))
        fakes = attackers.generate(gen_cfg, alloc, acc_spec, acc)
        fake_path = d / f"fakes_seed{s}.csv"
        attackers.save_fake_block(fake_path, fakes, m.item_ids)
        rep = evaluator.evaluate(
            m,
            fakes,
            spec,
            cfg.victim_cfg(),
            Ks=tuple(cfg.raw["Ks"]),
            seed=derive_seed(cfg.seed, "victim", s),
            metadata={"label": label, "repeat_seed": s, "allocator": cfg.raw["allocator"],
                      "attacker": cfg.raw["attacker"]["kind"], "N": cfg.raw["N"]},
        )
        rep_path = d / f"report_seed{s}.json"
        evaluator.save_report_json(rep_path, rep)
        artifacts.extend([fake_path, rep_path])
        reports.append(rep)
    mean = mean_report(reports, label=label)
    evaluator.save_report_json(d / "report_mean.json", mean)
    evaluator.save_report_kv(d / "report_mean.txt", mean)
    artifacts.extend([d / "report_mean.json", d / "report_mean.txt"])
    return artifacts


def stage_defend(cfg: ExperimentConfig, out: Path) -> list[Path]:
    if cfg.raw["defense"] is None:
        raise ContractError("config.defense is not set")
    m, acc, spec, acc_spec = _load_prepared(out)
    dcfg = cfg.raw["defense"]
    d = out / "defend"
    d.mkdir(parents=True, exist_ok=True)
    artifacts = []
    reports = []
    for s in cfg.raw["repeat_seeds"]:
        fakes = load_fake_block(
            _require(out / "attack" / f"fakes_seed{s}.csv", "attack"), m
        )
        stacked = dataset.with_extra_users(m, fakes.rows, fakes.user_ids())
        n_flag = dcfg.get("n_flag") or len(fakes.rows)
        if dcfg["detector"] == "pca":
            det = defense.pca_detect(
                stacked, n_flag, n_components=dcfg.get("n_components", 3), n_real=m.n_users
            )
        else:
            det = defense.fap_detect(
                stacked,
                spec.target_item,
                n_flag,
                damping=dcfg.get("damping", 0.85),
                n_real=m.n_users,
            )
        det_path = d / f"detection_seed{s}.tsv"
        defense.save_detection(det_path, det, n_real=m.n_users)
        rep = defense.filter_and_evaluate(
            m,
            fakes,
            det,
            spec,
            cfg.victim_cfg(),
            Ks=tuple(cfg.raw["Ks"]),
            seed=derive_seed(cfg.seed, "victim", s),
            metadata={"label": f"{dcfg['detector']}-defended", "repeat_seed": s,
                      "recall": det.recall()},
        )
        rep_path = d / f"report_seed{s}.json"
        evaluator.save_report_json(rep_path, rep)
        artifacts.extend([det_path, rep_path])
        reports.append(rep)
    mean = mean_report(reports, label=f"{dcfg['detector']}-defended")
    evaluator.save_report_json(d / "report_mean.json", mean)
    artifacts.append(d / "report_mean.json")
    return artifacts


def stage_correlate(cfg: ExperimentConfig, out: Path, order: int | None = None) -> list[Path]:
    c = cfg.raw["correlate"] or {"order": 3, "n_groups": 50, "sample_cap": 200000}
    order = int(order if order is not None else c["order"])
    m, _, _, _ = _load_prepared(out)
    d = out / "correlate"
    d.mkdir(parents=True, exist_ok=True)
    model = cf.train(m, cf.seeded_config(cfg.victim_cfg(), derive_seed(cfg.seed, "correlate-train")))
    report = pathcount.correlation_report(
        model,
        m,
        order=order,
        n_groups=c["n_groups"],
        sample_cap=c["sample_cap"],
        seed=derive_seed(cfg.seed, "correlate-sample"),
    )
    path = d / f"correlation_order{order}.tsv"
    pathcount.save_correlation_report(path, report)
    return [path]


def mean_report(reports: list[evaluator.MetricsReport], label: str) -> evaluator.MetricsReport:
    """Average metric values across repeat-seed reports."""
    if not reports:
        raise ContractError("no reports to aggregate")
    ks = reports[0].Ks
    values: dict = {}
    for g in reports[0].values:
        values[g] = {}
        for ph in evaluator.PHASES:
            values[g][ph] = {}
            for K in ks:
                values[g][ph][str(K)] = {
                    metric: sum(r.get(g, ph, K, metric) for r in reports) / len(reports)
                    for metric in evaluator.METRICS
                }
    meta = {
        "label": label,
        "aggregated_over": [r.metadata.get("repeat_seed") for r in reports],
        "n_runs": len(reports),
    }
    return evaluator.MetricsReport(ks, values, meta)


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    version: str
    stages: tuple[dict, ...]

    def artifact_hashes(self) -> dict:
        out = {}
        for st in self.stages:
            out.update(st["artifacts"])
        return out


class StageError(UbalabError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def run_pipeline(cfg: ExperimentConfig, out, cache_dir=None) -> RunManifest:
    """Execute all configured stages in order and write the run manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stage_fns = [("prepare", stage_prepare), ("estimate", stage_estimate),
                 ("allocate", stage_allocate), ("attack", stage_attack)]
    if cfg.raw["defense"] is not None:
        stage_fns.append(("defend", stage_defend))
    if cfg.raw["correlate"] is not None:
        stage_fns.append(("correlate", stage_correlate))
    stages = []
    for name, fn in stage_fns:
        t0 = time.perf_counter()
        try:
            if name == "estimate":
                result = fn(cfg, out, cache_dir)
            else:
                result = fn(cfg, out)
        except Exception as exc:
            manifest = RunManifest(cfg.config_hash(), __version__, tuple(stages))
            _write_manifest(out / "manifest.json", manifest, error={"stage": name, "cause": str(exc)})
            raise StageError(name, exc) from exc
        artifacts, extra = result if isinstance(result, tuple) else (result, {})
        entry = {
            "name": name,
            "seconds": round(time.perf_counter() - t0, 3),
            "artifacts": {str(p.relative_to(out)): _sha256_file(p) for p in artifacts},
        }
        entry.update(extra)
        stages.append(entry)
    manifest = RunManifest(cfg.config_hash(), __version__, tuple(stages))
    _write_manifest(out / "manifest.json", manifest)
    return manifest


def _write_manifest(path: Path, manifest: RunManifest, error: dict | None = None) -> None:
    payload = {
        "config_hash": manifest.config_hash,
        "version": manifest.version,
        "stages": list(manifest.stages),
    }
    if error:
        payload["error"] = error
    _write_json(path, payload)


def load_manifest(path) -> RunManifest:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    return RunManifest(d["config_hash"], d["version"], tuple(d["stages"]))
