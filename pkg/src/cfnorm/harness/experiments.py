"""End-to-end experiments: simulate -> normalize -> fit -> evaluate.

Each ``exp_*`` function returns an :class:`ExperimentResult` holding one or
more tables (lists of dict rows) plus a summary dict; ``write`` turns them
into CSV files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from .. import __version__
from ..complexity import metrics_row
from ..graph import CausalDag
from ..predictors import auprc, auroc, fit_least_squares, fit_logistic, mse, predict
from ..scenarios import (
    HOSPITAL_Y,
    hospital_graph,
    hospital_sem,
    linear_gaussian_sem,
    screening_graph,
    selection_graph,
    selection_sem,
)
from ..sem import (Constant, Dataset, ExpDecay, FittedSem, Linear, estimate_counterfactual, fit_additive_sem,
                   reject_sample, simulate)
from ..stability import NormalizationPlan, normalize


class PlanMismatch(AssertionError):
    """The normalization plan for an experiment graph differs from the expected one."""


def derive_seed(*keys) -> int:
    """Stable 63-bit seed from a master seed and any labels."""
    words = [k if isinstance(k, int) else int.from_bytes(hashlib.sha256(str(k).encode()).digest()[:4], "little")
             for k in keys]
    hi, lo = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return (int(hi) << 32 | int(lo)) >> 1


@dataclass
class ExperimentConfig:
    seed: int = 0
    replicates: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")

    def digest(self) -> str:
        blob = json.dumps({"type": type(self).__name__, **asdict(self)}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class LinearGaussianConfig(ExperimentConfig):
    n: int = 30_000
    train_w2: float = 2.0
    w2_min: float = -3.0
    w2_max: float = 7.0
    n_domains: int = 101
    sigma: float = 0.1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.w2_min, self.w2_max, self.n_domains)


@dataclass
class CrossHospitalConfig(ExperimentConfig):
    replicates: int = 50
    n_source: int = 2000
    n_train: int = 1600
    n_target: int = 1000


@dataclass
class PerturbationConfig(CrossHospitalConfig):
    sigmas: tuple[float, ...] = tuple(np.round(np.arange(1, 21) * 0.05, 2))


@dataclass
class SelectionBiasConfig(ExperimentConfig):
    replicates: int = 100
    n: int = 30_000
    rejection_probability: float = 0.9
    p_target: float = 0.1
    p_condition: float = 0.3
    target_effect: float = 1.0
    condition_effect: float = 1.0
    sigma: float = 0.5


@dataclass
class ExperimentResult:
    name: str
    config: ExperimentConfig
    tables: dict[str, list[dict]]
    summary: dict = field(default_factory=dict)
    plan: NormalizationPlan | None = None

    def header(self) -> str:
        return (f"# experiment={self.name} seed={self.config.seed} replicates={self.config.replicates} "
                f"config_hash={self.config.digest()}\n"
                f"# cfnorm={__version__} numpy={np.__version__} scipy={scipy.__version__} "
                f"python={platform.python_version()}\n")

    def csv_text(self, table: str) -> str:
        rows = self.tables[table]
        buf = io.StringIO()
        buf.write(self.header())
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for table in self.tables:
            path = out / f"{self.name}_{table}.csv"
            path.write_text(self.csv_text(table), encoding="utf-8")
            paths.append(path)
        return paths


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def _require_plan(graph: CausalDag, expected: set[str], widen: bool = False) -> NormalizationPlan:
    plan = normalize(graph, widen=widen)
    if set(plan.final_set) != expected:
        raise PlanMismatch(f"expected {sorted(expected)}, got {sorted(plan.final_set)}\n{plan.report()}")
    return plan


def _counterfactual(plan: NormalizationPlan, fit: FittedSem, data: Dataset) -> Dataset:
    cols = {}
    for name, node in plan.counterfactuals.items():
        cols[name] = estimate_counterfactual(fit, data, node.intervened)
    return data.with_columns(**cols)


# ------------------------------------------------------------ linear gaussian

def exp_linear_gaussian(config: LinearGaussianConfig | None = None) -> ExperimentResult:
    """Naive E[T|C,Y], ideal E[T|C,Y,D] and normalized E[T|Y(C=∅)] across shifts in p(C|D)."""
    config = config or LinearGaussianConfig()
    graph = screening_graph()
    plan = _require_plan(graph, {"Y(C=∅)"})
    cf = "Y(C=∅)"
    rows = []
    for r in range(config.replicates):
        w1, w3, w4 = np.random.default_rng(derive_seed(config.seed, r, "weights")).normal(size=3)
        train = simulate(linear_gaussian_sem(w1, config.train_w2, w3, w4, config.sigma), graph, config.n,
                         derive_seed(config.seed, r, "train"))
        fit = fit_additive_sem(train, [Linear("T"), Linear("C")], "Y")
        train = _counterfactual(plan, fit, train)
        models = {
            "naive": fit_least_squares(train, ["C", "Y"], "T"),
            "ideal": fit_least_squares(train, ["C", "Y", "D"], "T"),
            "cfn": fit_least_squares(train, [cf], "T"),
        }
        for i, w2 in enumerate(config.grid):
            test = simulate(linear_gaussian_sem(w1, w2, w3, w4, config.sigma), graph, config.n,
                            derive_seed(config.seed, r, "domain", i))
            test = _counterfactual(plan, fit, test)
            for name, model in models.items():
                rows.append({"replicate": r, "w2": float(w2), "model": name,
                             "mse": mse(predict(model, test), test["T"]),
                             "w1": w1, "w3": w3, "w4": w4, "w4_hat": fit.term("C").coef})
    summary = {}
    for r in range(config.replicates):
        mine = [row for row in rows if row["replicate"] == r]
        for name in ("naive", "ideal", "cfn"):
            vals = np.array([row["mse"] for row in mine if row["model"] == name])
            summary[(r, name, "max_min_ratio")] = float(vals.max() / vals.min())
        naive = [(row["w2"], row["mse"]) for row in mine if row["model"] == "naive"]
        summary[(r, "naive", "quadratic_r2")] = quadratic_r2([w - config.train_w2 for w, _ in naive],
                                                             [m for _, m in naive])
    table = [{"replicate": r, "model": m, "statistic": s, "value": v} for (r, m, s), v in summary.items()]
    return ExperimentResult("linear_gaussian", config, {"mse": rows, "summary": table}, summary, plan)


def quadratic_r2(x: Sequence[float], y: Sequence[float]) -> float:
    """R^2 of an ordinary least-squares fit y ~ a + b x + c x^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([np.ones_like(x), x, x**2])
    resid = y - design @ np.linalg.lstsq(design, y, rcond=None)[0]
    return float(1 - resid @ resid / np.sum((y - y.mean()) ** 2))


# -------------------------------------------------------------- cross hospital

HOSPITAL_TEMPLATE = (Constant(), Linear("T"), Linear("C"), ExpDecay("A"))
HOSPITAL_CF = "Y(A=∅,C=∅)"


def _hospital_data(config: CrossHospitalConfig, r: int):
    graph = hospital_graph()
    source = simulate(hospital_sem("source"), graph, config.n_source, derive_seed(config.seed, r, "source"))
    target = simulate(hospital_sem("target"), graph, config.n_target, derive_seed(config.seed, r, "target"))
    train = source.take(np.arange(config.n_train))
    held = source.take(np.arange(config.n_train, config.n_source))
    return train, held, target


def exp_cross_hospital(config: CrossHospitalConfig | None = None) -> ExperimentResult:
    """Transfer of baseline / CFN / CFN-with-vulnerable logistic models between two simulated hospitals."""
    config = config or CrossHospitalConfig()
    plan = _require_plan(hospital_graph(), {HOSPITAL_CF})
    cf = HOSPITAL_CF
    feature_sets = {"baseline": ["Y", "A", "C"], "cfn": [cf], "cfn_vuln": [cf, "Y", "A", "C"]}
    auc_rows, metric_rows, fit_rows = [], [], []
    for r in range(config.replicates):
        train, held, target = _hospital_data(config, r)
        fit = fit_additive_sem(train, HOSPITAL_TEMPLATE, "Y")
        # the counterfactual reads only Y, A and C, never T
        train, held, target = (_counterfactual(plan, fit, d) for d in (train, held, target))
        for name, feats in feature_sets.items():
            model = fit_logistic(train, feats, "T")
            auc_rows.append({"replicate": r, "model": name,
                             "source_auroc": auroc(predict(model, held), held["T"]),
                             "target_auroc": auroc(predict(model, target), target["T"]),
                             "converged": model.diagnostics.converged})
        labels = train["T"]
        base = metrics_row(train.matrix(feature_sets["baseline"]), labels)
        norm = metrics_row(train.matrix([cf]), labels)
        for name, m in (("baseline", base), ("cfn", norm)):
            metric_rows.append({"replicate": r, "features": name, **m})
        var_drop = all(np.var(train[cf][labels == k], ddof=1) < np.var(train["Y"][labels == k], ddof=1)
                       for k in (0, 1))
        fit_rows.append({"replicate": r, **{f"hat_{k}": v for k, v in zip(fit.param_names, fit.params)},
                         "noise_scale": fit.noise_scale, "converged": fit.converged,
                         "iterations": fit.iterations, "cf_variance_lower": var_drop})

    auroc_summary = []
    for name in feature_sets:
        mine = [row for row in auc_rows if row["model"] == name]
        auroc_summary.append({"model": name,
                       "source_auroc": float(np.mean([x["source_auroc"] for x in mine])),
                       "target_auroc": float(np.mean([x["target_auroc"] for x in mine])),
                       "source_sd": float(np.std([x["source_auroc"] for x in mine], ddof=1)) if len(mine) > 1 else 0.0,
                       "target_sd": float(np.std([x["target_auroc"] for x in mine], ddof=1)) if len(mine) > 1 else 0.0})
    complexity_summary = []
    for name in ("baseline", "cfn"):
        mine = [row for row in metric_rows if row["features"] == name]
        complexity_summary.append({"features": name, **{k: float(np.mean([x[k] for x in mine]))
                                            for k in ("fisher", "distance_ratio", "mst")}})
    ordered = sum(b["fisher"] < c["fisher"] and b["mst"] > c["mst"] and b["distance_ratio"] > c["distance_ratio"]
                  for b, c in zip(metric_rows[::2], metric_rows[1::2]))
    summary = {"auroc_summary": auroc_summary, "complexity_summary": complexity_summary, "ordering_replicates": ordered,
               "variance_drop_replicates": sum(row["cf_variance_lower"] for row in fit_rows)}
    tables = {"auroc_summary": auroc_summary, "complexity_summary": complexity_summary, "auroc": auc_rows, "metrics": metric_rows, "fits": fit_rows}
    return ExperimentResult("cross_hospital", config, tables, summary, plan)


# ---------------------------------------------------------------- perturbation

def exp_perturbation(config: PerturbationConfig | None = None) -> ExperimentResult:
    """Noise added to the true counterfactual; with/without vulnerable variables."""
    config = config or PerturbationConfig()
    _require_plan(hospital_graph(), {HOSPITAL_CF})
    truth = FittedSem.from_law("Y", HOSPITAL_Y)
    rows = []
    for r in range(config.replicates):
        base = _hospital_data(config, r)
        exact = [estimate_counterfactual(truth, d, ["A", "C"]) for d in base]
        for j, sigma in enumerate(config.sigmas):
            rng = np.random.default_rng(derive_seed(config.seed, r, "perturb", j))
            noisy = [e + rng.normal(0.0, sigma, len(e)) for e in exact]
            train, held, target = (d.with_columns(Ycf=v) for d, v in zip(base, noisy))
            err = mse(np.concatenate(noisy), np.concatenate(exact))
            for name, feats in (("without_vuln", ["Ycf"]), ("with_vuln", ["Ycf", "C", "A", "Y"])):
                model = fit_logistic(train, feats, "T")
                rows.append({"replicate": r, "sigma": float(sigma), "model": name,
                             "source_auroc": auroc(predict(model, held), held["T"]),
                             "target_auroc": auroc(predict(model, target), target["T"]),
                             "cf_mse": err})
    means = []
    for sigma in config.sigmas:
        for name in ("without_vuln", "with_vuln"):
            mine = [x for x in rows if x["sigma"] == float(sigma) and x["model"] == name]
            means.append({"sigma": float(sigma), "model": name,
                          **{k: float(np.mean([x[k] for x in mine])) for k in ("source_auroc", "target_auroc", "cf_mse")}})
    return ExperimentResult("perturbation", config, {"means": means, "runs": rows}, {"means": means})


# -------------------------------------------------------------- selection bias

def exp_selection_bias(config: SelectionBiasConfig | None = None) -> ExperimentResult:
    """Train on data thinned by a selection mechanism on (C, T); test on biased and unbiased rows."""
    config = config or SelectionBiasConfig()
    graph = selection_graph()
    plan = _require_plan(graph, {"Y(C=∅)"})
    cf = "Y(C=∅)"
    spec = selection_sem(config.p_target, config.p_condition, config.target_effect,
                         config.condition_effect, config.sigma)
    rows = []
    for r in range(config.replicates):
        population = simulate(spec, graph, config.n, derive_seed(config.seed, r, "population"))
        order = np.random.default_rng(derive_seed(config.seed, r, "split")).permutation(config.n)
        cut = config.n // 3
        unbiased = population.take(np.sort(order[:cut]))
        biased = reject_sample(population.take(np.sort(order[cut:])), {"C": 1, "T": 0},
                               config.rejection_probability, derive_seed(config.seed, r, "reject"))
        shuffle = np.random.default_rng(derive_seed(config.seed, r, "biased-split")).permutation(len(biased))
        n_train = (2 * len(biased)) // 3
        train, test = biased.take(np.sort(shuffle[:n_train])), biased.take(np.sort(shuffle[n_train:]))
        fit = fit_additive_sem(train, [Constant(), Linear("T"), Linear("C")], "Y")
        train, test, unbiased = (_counterfactual(plan, fit, d) for d in (train, test, unbiased))
        for name, feats in (("baseline", ["Y", "C"]), ("cfn", [cf])):
            model = fit_logistic(train, feats, "T")
            for split, data in (("biased", test), ("unbiased", unbiased)):
                s = predict(model, data)
                rows.append({"replicate": r, "model": name, "split": split,
                             "auroc": auroc(s, data["T"]), "auprc": auprc(s, data["T"]),
                             "prevalence": float(data["T"].mean()), "n": len(data)})
    means = []
    for name in ("baseline", "cfn"):
        for split in ("biased", "unbiased"):
            mine = [x for x in rows if x["model"] == name and x["split"] == split]
            means.append({"model": name, "split": split,
                          "auroc": float(np.mean([x["auroc"] for x in mine])),
                          "auprc": float(np.mean([x["auprc"] for x in mine]))})
    gaps = {}
    for name in ("baseline", "cfn"):
        b = [x["auprc"] for x in rows if x["model"] == name and x["split"] == "biased"]
        u = [x["auprc"] for x in rows if x["model"] == name and x["split"] == "unbiased"]
        gaps[name] = np.abs(np.array(b) - np.array(u))
    smaller = int(np.sum(gaps["cfn"] < gaps["baseline"]))
    return ExperimentResult("selection_bias", config, {"means": means, "runs": rows},
                            {"means": means, "cfn_smaller_gap": smaller}, plan)


EXPERIMENTS = {
    "linear-gaussian": (exp_linear_gaussian, LinearGaussianConfig),
    "cross-hospital": (exp_cross_hospital, CrossHospitalConfig),
    "perturbation": (exp_perturbation, PerturbationConfig),
    "selection-bias": (exp_selection_bias, SelectionBiasConfig),
}
