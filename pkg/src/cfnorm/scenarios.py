"""Canonical graphs and generating equations used by the experiments."""

from __future__ import annotations

from .graph import CausalDag
from .sem import Additive, Bernoulli, BernoulliTable, ExpDecay, Linear, ScaledBeta, SemSpec, Switch


def screening_graph() -> CausalDag:
    """Unobserved D confounds target T and treatment C; Y is a child of T and C."""
    return CausalDag.build(
        {"D": "unobserved", "T": "target", "C": "observed", "Y": "observed"},
        [("D", "T"), ("D", "C"), ("T", "Y"), ("C", "Y")],
    )


def selection_graph() -> CausalDag:
    """T and C both drive Y and the selection mechanism S."""
    return CausalDag.build(
        {"T": "target", "C": "observed", "Y": "observed", "S": "selection"},
        [("T", "Y"), ("C", "Y"), ("T", "S"), ("C", "S")],
    )


def hospital_graph(with_age: bool = False) -> CausalDag:
    """Chronic condition C (confounded with T by unobserved D), treatment timing A, signal Y.

    ``with_age`` adds the demographic risk factor X -> T.
    """
    nodes = {"D": "unobserved", "T": "target", "C": "observed", "A": "observed", "Y": "observed"}
    edges = [("D", "T"), ("D", "C"), ("C", "A"), ("C", "Y"), ("A", "Y"), ("T", "Y")]
    if with_age:
        nodes["X"] = "observed"
        edges.append(("X", "T"))
    return CausalDag.build(nodes, edges)


def linear_gaussian_sem(w1: float, w2: float, w3: float, w4: float, sigma: float = 0.1) -> SemSpec:
    return SemSpec({
        "D": Additive((), sigma),
        "T": Additive((Linear("D", w1),), sigma),
        "C": Additive((Linear("D", w2),), sigma),
        "Y": Additive((Linear("T", w3), Linear("C", w4)), sigma),
    })


def linear_gaussian_split_sem(w1: float, w2: float, w3: float, w4: float, sigma: float = 0.1) -> SemSpec:
    """Same system after splitting Y on C: Y(C=∅) carries the noise, Y is deterministic."""
    return SemSpec({
        "D": Additive((), sigma),
        "T": Additive((Linear("D", w1),), sigma),
        "C": Additive((Linear("D", w2),), sigma),
        "Y(C=∅)": Additive((Linear("T", w3),), sigma),
        "Y": Additive((Linear("Y(C=∅)", 1.0), Linear("C", w4)), None),
    })


HOSPITAL_Y = Additive((Linear("T", -0.5), Linear("C", -0.3), ExpDecay("A", 2.0, 0.08)), 0.2)


def hospital_sem(site: str = "source") -> SemSpec:
    """Source and target sites differ only in p(C | D) and p(A | C)."""
    if site == "source":
        c_law = BernoulliTable("D", ((1, 0.9), (0, 0.1)))
        a_law = Switch("C", 1, ScaledBeta(24, 0.5, 2.1), ScaledBeta(24, 0.7, 0.2))
    elif site == "target":
        c_law = BernoulliTable("D", ((1, 0.1), (0, 0.9)))
        a_law = Switch("C", 1, ScaledBeta(24, 1.7, 1.1), ScaledBeta(24, 1.7, 1.1))
    else:
        raise ValueError(f"unknown site {site!r}")
    return SemSpec({
        "D": Bernoulli(0.5),
        "T": BernoulliTable("D", ((1, 0.7), (0, 0.1))),
        "C": c_law,
        "A": a_law,
        "Y": HOSPITAL_Y,
    })


def selection_sem(p_target: float = 0.1, p_condition: float = 0.3, target_effect: float = 1.0,
                  condition_effect: float = 1.0, sigma: float = 0.5) -> SemSpec:
    """Population law for the selection-bias study; S is applied separately by rejection."""
    return SemSpec({
        "T": Bernoulli(p_target),
        "C": Bernoulli(p_condition),
        "Y": Additive((Linear("T", target_effect), Linear("C", condition_effect)), sigma),
    })
