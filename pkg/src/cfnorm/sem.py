"""Additive structural equation models: simulate, fit, and remove parent effects."""

from __future__ import annotations

import csv
import io
import re
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .graph import CausalDag, NodeKind, topological_order


class SemError(ValueError):
    pass


# --------------------------------------------------------------------- terms

@dataclass(frozen=True)
class Constant:
    value: float = 0.0
    parent = None

    def __call__(self, x=None):
        return self.value

    @property
    def params(self) -> tuple[float, ...]:
        return (self.value,)


@dataclass(frozen=True)
class Linear:
    parent: str
    coef: float = 0.0

    def __call__(self, x):
        return self.coef * x

    @property
    def params(self) -> tuple[float, ...]:
        return (self.coef,)


@dataclass(frozen=True)
class ExpDecay:
    """``scale * exp(-rate * parent)``."""

    parent: str
    scale: float = 1.0
    rate: float = 0.1

    def __call__(self, x):
        return self.scale * np.exp(-self.rate * x)

    @property
    def params(self) -> tuple[float, ...]:
        return (self.scale, self.rate)


Term = Union[Constant, Linear, ExpDecay]


# ---------------------------------------------------------------------- laws

@dataclass(frozen=True)
class Additive:
    """Sum of terms plus optional N(0, sigma^2) noise."""

    terms: tuple[Term, ...] = ()
    sigma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.sigma is not None and not self.sigma > 0:
            raise SemError(f"noise scale must be positive, got {self.sigma}")

    @property
    def parents(self) -> set[str]:
        return {t.parent for t in self.terms if t.parent is not None}


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise SemError(f"Bernoulli probability {self.p} outside [0, 1]")

    parents = property(lambda self: set())


@dataclass(frozen=True)
class BernoulliTable:
    """P(node = 1) looked up from the value of a single parent."""

    parent: str
    probs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(sorted(dict(self.probs).items())))
        for _, p in self.probs:
            if not 0 <= p <= 1:
                raise SemError(f"Bernoulli probability {p} outside [0, 1]")

    parents = property(lambda self: {self.parent})


@dataclass(frozen=True)
class ScaledBeta:
    scale: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise SemError("Beta shape parameters must be positive")

    parents = property(lambda self: set())


@dataclass(frozen=True)
class Switch:
    """``then`` where ``parent == value``, ``otherwise`` elsewhere."""

    parent: str
    value: float
    then: "Law"
    otherwise: "Law"

    @property
    def parents(self) -> set[str]:
        return {self.parent} | self.then.parents | self.otherwise.parents


Law = Union[Additive, Bernoulli, BernoulliTable, ScaledBeta, Switch]


@dataclass(frozen=True)
class SemSpec:
    equations: Mapping[str, Law]

    def __getitem__(self, node: str) -> Law:
        return self.equations[node]

    def check(self, graph: CausalDag) -> None:
        """Raise unless the equations match the graph's parent sets."""
        missing = [n for n in graph.nodes if n not in self.equations and graph.kinds[n] is not NodeKind.SELECTION]
        if missing:
            raise SemError(f"no equation for node(s) {missing}")
        for node, law in self.equations.items():
            if node not in graph.kinds:
                raise SemError(f"equation for undeclared node {node!r}")
            pa = set(graph.parents(node))
            extra = law.parents - pa
            if extra:
                raise SemError(f"{node}: terms use non-parents {sorted(extra)}")
            unused = pa - law.parents
            if unused:
                raise SemError(f"{node}: parents {sorted(unused)} appear in no term")

    def to_text(self) -> str:
        return "".join(f"eq {n} = {_format_law(law)}\n" for n, law in self.equations.items())


# ------------------------------------------------------------------- dataset

@dataclass(frozen=True)
class Dataset:
    """Column table keyed by variable name.

    ``noise`` keeps the exogenous draws of additive nodes so that true
    counterfactuals can be reconstructed; ``hidden`` names unobserved columns.
    """

    columns: Mapping[str, np.ndarray]
    seed: int | None = None
    selected: np.ndarray | None = None
    hidden: frozenset[str] = frozenset()
    noise: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if self.selected is not None:
            lengths.add(len(self.selected))
        if len(lengths) > 1:
            raise SemError(f"columns have unequal lengths {sorted(lengths)}")

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SemError(f"dataset has no column {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self[n] for n in names]) if names else np.empty((len(self), 0))

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        pick = lambda d: {k: v[index] for k, v in d.items()}
        sel = None if self.selected is None else self.selected[index]
        return replace(self, columns=pick(self.columns), noise=pick(self.noise), selected=sel)

    def with_columns(self, **cols: np.ndarray) -> "Dataset":
        merged = dict(self.columns)
        merged.update({k: np.asarray(v, dtype=float) for k, v in cols.items()})
        return replace(self, columns=merged)

    def with_selection(self, mask: np.ndarray) -> "Dataset":
        return replace(self, selected=np.asarray(mask, dtype=bool))

    def retained(self) -> "Dataset":
        """Rows with S = 1 (all rows when no mask is recorded)."""
        if self.selected is None:
            return self
        return replace(self.take(np.flatnonzero(self.selected)), selected=None)

    def observed(self) -> "Dataset":
        return replace(self, columns={k: v for k, v in self.columns.items() if k not in self.hidden},
                       hidden=frozenset())

    def to_csv(self, path_or_buf=None) -> str | None:
        names = self.names
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names + (["__selected"] if self.selected is not None else []))
        cols = [self.columns[n] for n in names]
        if self.selected is not None:
            cols.append(self.selected.astype(int))
        for row in zip(*cols):
            writer.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v) for v in row])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        with open(path_or_buf, "w") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_text: str) -> "Dataset":
        text = path_or_text
        if "\n" not in path_or_text:
            with open(path_or_text) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        cols = {h: data[:, i] for i, h in enumerate(header) if h != "__selected"}
        sel = data[:, header.index("__selected")].astype(bool) if "__selected" in header else None
        return cls(cols, selected=sel)


# ---------------------------------------------------------------- simulation

def node_rng(seed: int, node: str) -> np.random.Generator:
    """Independent stream per (seed, node) so columns don't shift when nodes are added."""
    return np.random.default_rng([int(seed), zlib.crc32(node.encode("utf-8"))])


def _draw(law: Law, cols: Mapping[str, np.ndarray], n: int, rng: np.random.Generator):
    """Return (values, noise or None)."""
    if isinstance(law, Additive):
        value = np.zeros(n)
        for t in law.terms:
            value = value + (t() if t.parent is None else t(cols[t.parent]))
        eps = rng.normal(0.0, law.sigma, n) if law.sigma is not None else np.zeros(n)
        return value + eps, eps
    if isinstance(law, Bernoulli):
        return (rng.random(n) < law.p).astype(float), None
    if isinstance(law, BernoulliTable):
        parent = cols[law.parent]
        p = np.full(n, np.nan)
        for level, prob in law.probs:
            p[parent == level] = prob
        if np.isnan(p).any():
            bad = sorted(set(parent[np.isnan(p)].tolist()))
            raise SemError(f"bernoulli_table on {law.parent}: no probability for value(s) {bad}")
        return (rng.random(n) < p).astype(float), None
    if isinstance(law, ScaledBeta):
        return law.scale * rng.beta(law.alpha, law.beta, n), None
    if isinstance(law, Switch):
        # both branches are drawn in full so that the stream layout is value-independent
        a, na = _draw(law.then, cols, n, rng)
        b, nb = _draw(law.otherwise, cols, n, rng)
        hit = cols[law.parent] == law.value
        noise = None if na is None and nb is None else np.where(hit, _or0(na, n), _or0(nb, n))
        return np.where(hit, a, b), noise
    raise SemError(f"unknown law {law!r}")


def _or0(x, n):
    return np.zeros(n) if x is None else x


def simulate(spec: SemSpec, graph: CausalDag, n: int, seed: int) -> Dataset:
    """Forward-sample every node in topological order.

    A selection node with an equation becomes the selection mask rather than a
    column.
    """
    if n < 1:
        raise SemError("n must be at least 1")
    spec.check(graph)
    cols: dict[str, np.ndarray] = {}
    noise: dict[str, np.ndarray] = {}
    selected = None
    for node in topological_order(graph):
        kind = graph.kinds[node]
        if node not in spec.equations:
            continue
        values, eps = _draw(spec[node], cols, n, node_rng(seed, node))
        if kind is NodeKind.SELECTION:
            selected = values.astype(bool)
            continue
        cols[node] = values
        if eps is not None:
            noise[node] = eps
    hidden = frozenset(graph.nodes_of(NodeKind.UNOBSERVED, NodeKind.COUNTERFACTUAL))
    return Dataset(cols, seed=seed, selected=selected, hidden=hidden, noise=noise)


Predicate = Union[Mapping[str, float], Callable[[Dataset], np.ndarray]]


def _matches(data: Dataset, predicate: Predicate) -> np.ndarray:
    if callable(predicate):
        return np.asarray(predicate(data), dtype=bool)
    hit = np.ones(len(data), dtype=bool)
    for name, value in predicate.items():
        hit &= data[name] == value
    return hit


def selection_mask(data: Dataset, predicate: Predicate, rejection_probability: float, seed: int) -> np.ndarray:
    """Keep-mask: matching rows are rejected independently with the given probability."""
    if not 0 <= rejection_probability <= 1:
        raise SemError("rejection probability must lie in [0, 1]")
    hit = _matches(data, predicate)
    u = node_rng(seed, "__reject").random(len(data))
    return ~(hit & (u < rejection_probability))


def reject_sample(data: Dataset, predicate: Predicate, rejection_probability: float, seed: int) -> Dataset:
    return data.with_selection(selection_mask(data, predicate, rejection_probability, seed)).retained()


# ------------------------------------------------------------------- fitting

@dataclass(frozen=True)
class FittedSem:
    target: str
    terms: tuple[Term, ...]
    noise_scale: float
    converged: bool = True
    iterations: int = 0
    rss: float = float("nan")
    stderr: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_law(cls, target: str, law: Additive) -> "FittedSem":
        """Wrap known structural parameters (e.g. the simulation truth)."""
        return cls(target, tuple(law.terms), law.sigma or 0.0)

    @property
    def parents(self) -> list[str]:
        return [t.parent for t in self.terms if t.parent is not None]

    @property
    def param_names(self) -> list[str]:
        return _param_names(self.terms)

    @property
    def params(self) -> np.ndarray:
        return np.array([v for t in self.terms for v in t.params])

    def term(self, parent: str) -> Term:
        for t in self.terms:
            if t.parent == parent:
                return t
        raise SemError(f"no fitted term for parent {parent!r}")

    def predict(self, data: Dataset) -> np.ndarray:
        out = np.zeros(len(data))
        for t in self.terms:
            out = out + (t() if t.parent is None else t(data[t.parent]))
        return out


def _param_names(terms: Iterable[Term]) -> list[str]:
    names = []
    for t in terms:
        if isinstance(t, Constant):
            names.append("const")
        elif isinstance(t, Linear):
            names.append(t.parent)
        else:
            names += [f"{t.parent}.scale", f"{t.parent}.rate"]
    return names


def _collinear(design: np.ndarray, names: Sequence[str]) -> list[str] | None:
    scale = np.linalg.norm(design, axis=0)
    scale[scale == 0] = 1.0
    _, s, vt = np.linalg.svd(design / scale, full_matrices=False)
    tol = s.max() * max(design.shape) * np.finfo(float).eps * 10 if s.size else 0.0
    if s.size == len(names) and s.min() > tol:
        return None
    null = vt[-1]
    return [n for n, w in zip(names, null) if abs(w) > 1e-6 * np.abs(null).max()]


def exp_decay_jacobian(x: np.ndarray, scale: float, rate: float) -> np.ndarray:
    """d/d(scale, rate) of ``scale * exp(-rate * x)``, one row per observation."""
    e = np.exp(-rate * x)
    return np.column_stack([e, -scale * x * e])


def fit_additive_sem(data: Dataset, template: Sequence[Term], target: str,
                     tol: float = 1e-10, max_iter: int = 500) -> FittedSem:
    """Least-squares (= Gaussian MLE) fit of an additive equation.

    Linear templates are solved in closed form.  Exponential-decay terms are
    fitted by Gauss-Newton over all parameters, re-solving the linear
    coefficients exactly after every step, from several starting rates.
    """
    template = tuple(template)
    y = np.asarray(data[target], dtype=float)
    n_par = len(_param_names(template))
    if len(y) <= n_par:
        raise SemError(f"need more than {n_par} rows to fit {target}")
    for t in template:
        if t.parent is not None:
            data[t.parent]
    nonlinear = [i for i, t in enumerate(template) if isinstance(t, ExpDecay)]

    if not nonlinear:
        design, names = _linear_design(data, template, {})
        coef, terms = _solve_linear(design, names, y, template, {})
        resid = y - design @ coef
        rss = float(resid @ resid)
        se = _stderr(design, rss, len(y))
        return FittedSem(target, terms, float(np.sqrt(rss / len(y))), True, 0, rss,
                         dict(zip(_param_names(terms), se)))

    best = None
    starts = sorted({0.1, 0.01, 0.03, 0.3, 1.0})
    for start in starts:
        rates = {i: start for i in nonlinear}
        try:
            result = _gauss_newton(data, template, y, rates, tol, max_iter)
        except SemError:
            continue
        if best is None or result[1] < best[1] - 1e-12 * max(1.0, best[1]):
            best = result
    if best is None:
        raise SemError(f"could not fit {target}: design rank-deficient at every start")
    terms, rss, iters, converged, jac = best
    se = _stderr(jac, rss, len(y))
    return FittedSem(target, terms, float(np.sqrt(rss / len(y))), converged, iters, rss,
                     dict(zip(_param_names(terms), se)))


def _linear_design(data: Dataset, template, rates) -> tuple[np.ndarray, list[str]]:
    """Columns for the linear-in-parameters part; exp terms contribute exp(-rate x)."""
    cols, names = [], []
    n = len(data)
    for i, t in enumerate(template):
        if isinstance(t, Constant):
            cols.append(np.ones(n))
            names.append("const")
        elif isinstance(t, Linear):
            cols.append(np.asarray(data[t.parent], dtype=float))
            names.append(t.parent)
        else:
            cols.append(np.exp(-rates[i] * np.asarray(data[t.parent], dtype=float)))
            names.append(f"{t.parent}.scale")
    return np.column_stack(cols), names


def _solve_linear(design, names, y, template, rates):
    bad = _collinear(design, names)
    if bad:
        raise SemError(f"rank-deficient design; collinear columns: {', '.join(bad)}")
    q, r = np.linalg.qr(design)
    coef = np.linalg.solve(r, q.T @ y)
    terms = []
    for i, (t, c) in enumerate(zip(template, coef)):
        if isinstance(t, Constant):
            terms.append(Constant(float(c)))
        elif isinstance(t, Linear):
            terms.append(Linear(t.parent, float(c)))
        else:
            terms.append(ExpDecay(t.parent, float(c), float(rates[i])))
    return coef, tuple(terms)


def _full_jacobian(data: Dataset, terms) -> np.ndarray:
    """Model Jacobian w.r.t. every parameter in ``_param_names`` order."""
    n = len(data)
    cols = []
    for t in terms:
        if isinstance(t, Constant):
            cols.append(np.ones((n, 1)))
        elif isinstance(t, Linear):
            cols.append(np.asarray(data[t.parent], dtype=float)[:, None])
        else:
            cols.append(exp_decay_jacobian(np.asarray(data[t.parent], dtype=float), t.scale, t.rate))
    return np.hstack(cols)


def _gauss_newton(data, template, y, rates, tol, max_iter):
    nonlinear = sorted(rates)

    def evaluate(rates):
        design, names = _linear_design(data, template, rates)
        coef, terms = _solve_linear(design, names, y, template, rates)
        resid = y - design @ coef
        return terms, float(resid @ resid), resid

    terms, rss, resid = evaluate(rates)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = _full_jacobian(data, terms)
        step = np.linalg.lstsq(jac, resid, rcond=None)[0]
        theta = np.array([v for t in terms for v in t.params])
        rate_idx = _rate_positions(terms)
        accepted = False
        h = 1.0
        for _ in range(40):
            trial = {i: rates[i] + h * step[rate_idx[i]] for i in nonlinear}
            try:
                t_terms, t_rss, t_resid = evaluate(trial)
            except SemError:
                h *= 0.5
                continue
            if t_rss <= rss:
                accepted = True
                break
            h *= 0.5
        if not accepted:
            # no descent direction left at working precision
            converged = np.abs(step).max() < 1e-6 * max(1.0, np.abs(theta).max())
            break
        new_theta = np.array([v for t in t_terms for v in t.params])
        delta = np.abs(new_theta - theta).max()
        rates, terms, rss, resid = trial, t_terms, t_rss, t_resid
        if delta < tol:
            converged = True
            break
    return terms, rss, it, converged, _full_jacobian(data, terms)


def _rate_positions(terms) -> dict[int, int]:
    pos, out = 0, {}
    for i, t in enumerate(terms):
        if isinstance(t, ExpDecay):
            out[i] = pos + 1
        pos += len(t.params)
    return out


def _stderr(jac: np.ndarray, rss: float, n: int) -> np.ndarray:
    dof = n - jac.shape[1]
    sigma2 = rss / dof if dof > 0 else float("nan")
    try:
        cov = sigma2 * np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        return np.full(jac.shape[1], np.nan)
    return np.sqrt(np.clip(np.diag(cov), 0, None))


def estimate_counterfactual(fit: FittedSem, data: Dataset, intervened: Iterable[str]) -> np.ndarray:
    """Factual value of ``fit.target`` minus the fitted contributions of ``intervened``.

    Only the target column and the intervened parents are read.
    """
    intervened = list(dict.fromkeys(intervened))
    known = set(fit.parents)
    for p in intervened:
        if p not in known:
            raise SemError(f"{p!r} is not a parent in the fitted equation for {fit.target}")
    out = np.array(data[fit.target], dtype=float)
    for p in intervened:
        out = out - fit.term(p)(np.asarray(data[p], dtype=float))
    return out


# ---------------------------------------------------------------- text format

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def _split_top(expr: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in expr:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        exponent = sep == "+" and len(cur) >= 2 and cur[-1] in "eE" and cur[-2].isdigit()
        if ch == sep and depth == 0 and not exponent:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts]


def _parse_additive(expr: str) -> Additive:
    sigma = None
    m = re.search(r"\bnoise\s+(\S+)(?:\s+(\S+))?\s*$", expr)
    if m:
        if m.group(1) == "gaussian":
            sigma = float(m.group(2))
        elif m.group(1) != "none":
            raise SemError(f"unknown noise law {m.group(1)!r}")
        expr = expr[: m.start()].rstrip().rstrip("+").strip()
    terms: list[Term] = []
    for part in _split_top(expr, "+") if expr else []:
        if not part:
            continue
        dm = re.fullmatch(r"expdecay\(\s*([^,\s]+)\s*,\s*(" + _NUM + r")\s*,\s*(" + _NUM + r")\s*\)", part)
        if dm:
            terms.append(ExpDecay(dm.group(1), float(dm.group(2)), float(dm.group(3))))
        elif re.fullmatch(_NUM, part):
            terms.append(Constant(float(part)))
        elif "*" in part:
            coef, name = part.split("*", 1)
            terms.append(Linear(name.strip(), float(coef)))
        elif part.startswith("-"):
            terms.append(Linear(part[1:].strip(), -1.0))
        else:
            terms.append(Linear(part, 1.0))
    return Additive(tuple(terms), sigma)


def _parse_law(expr: str) -> Law:
    expr = expr.strip()
    head, _, rest = expr.partition(" ")
    if head == "bernoulli":
        return Bernoulli(float(rest))
    if head == "bernoulli_table":
        parent, *pairs = rest.split()
        return BernoulliTable(parent, tuple((float(k), float(v)) for k, v in (p.split(":") for p in pairs)))
    if head == "scaled_beta":
        m = re.fullmatch(r"(.*?)\s+if\s+(\S+)=(\S+)\s+else\s+(.*)", rest)
        if m:
            return Switch(m.group(2), float(m.group(3)), _parse_law("scaled_beta " + m.group(1)),
                          _parse_law("scaled_beta " + m.group(4)))
        scale, a, b = (float(x) for x in rest.split())
        return ScaledBeta(scale, a, b)
    return _parse_additive(expr)


def parse_sem(text: str) -> SemSpec:
    eqs: dict[str, Law] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"eq\s+(\S+)\s*=\s*(.*)", line)
        if not m:
            raise SemError(f"line {lineno}: cannot parse {raw.strip()!r}")
        try:
            eqs[m.group(1)] = _parse_law(m.group(2))
        except (ValueError, TypeError) as exc:
            raise SemError(f"line {lineno}: {exc}") from None
    return SemSpec(eqs)


def _format_law(law: Law) -> str:
    if isinstance(law, Additive):
        parts = []
        for t in law.terms:
            if isinstance(t, Constant):
                parts.append(repr(t.value))
            elif isinstance(t, Linear):
                parts.append(f"{t.coef!r}*{t.parent}")
            else:
                parts.append(f"expdecay({t.parent}, {t.scale!r}, {t.rate!r})")
        parts.append(f"noise gaussian {law.sigma!r}" if law.sigma is not None else "noise none")
        return " + ".join(parts)
    if isinstance(law, Bernoulli):
        return f"bernoulli {law.p!r}"
    if isinstance(law, BernoulliTable):
        return "bernoulli_table " + law.parent + " " + " ".join(f"{k:g}:{v!r}" for k, v in law.probs)
    if isinstance(law, ScaledBeta):
        return f"scaled_beta {law.scale!r} {law.alpha!r} {law.beta!r}"
    if isinstance(law, Switch) and isinstance(law.then, ScaledBeta) and isinstance(law.otherwise, ScaledBeta):
        a, b = law.then, law.otherwise
        return (f"scaled_beta {a.scale!r} {a.alpha!r} {a.beta!r} if {law.parent}={law.value:g} "
                f"else {b.scale!r} {b.alpha!r} {b.beta!r}")
    raise SemError(f"cannot serialise {law!r}")
