import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfnorm.graph import CausalDag, NodeKind
from cfnorm.scenarios import HOSPITAL_Y, hospital_graph, hospital_sem, linear_gaussian_sem, screening_graph
from cfnorm.sem import (
    Additive,
    Bernoulli,
    Constant,
    Dataset,
    ExpDecay,
    FittedSem,
    Linear,
    SemError,
    SemSpec,
    estimate_counterfactual,
    exp_decay_jacobian,
    fit_additive_sem,
    parse_sem,
    reject_sample,
    selection_mask,
    simulate,
)

HOSPITAL_TEMPLATE = (Constant(), Linear("T"), Linear("C"), ExpDecay("A"))


@pytest.fixture(scope="module")
def source():
    return simulate(hospital_sem("source"), hospital_graph(), 1600, seed=7)


# ---------------------------------------------------------------- simulation

def test_linear_gaussian_noise_variance():
    w1, w3, w4 = 0.4, -1.2, 0.7
    data = simulate(linear_gaussian_sem(w1, 2.0, w3, w4), screening_graph(), 30_000, seed=1)
    fit = fit_additive_sem(data, [Linear("T"), Linear("C")], "Y")
    resid = data["Y"] - fit.predict(data)
    assert abs(resid.var(ddof=1) - 0.01) < 0.0005
    assert data.hidden == {"D"}
    assert "D" not in data.observed()


def test_source_condition_rate():
    data = simulate(hospital_sem("source"), hospital_graph(), 100_000, seed=3)
    d1 = data["D"] == 1
    assert abs(data["C"][d1].mean() - 0.9) < 0.01
    assert data["A"].min() >= 0 and data["A"].max() <= 24


def test_constant_system_is_constant():
    g = CausalDag.build({"T": "target", "Y": "observed"}, [("T", "Y")])
    spec = SemSpec({"T": Additive((Constant(1.0),)), "Y": Additive((Constant(2.0), Linear("T", 3.0)))})
    data = simulate(spec, g, 50, seed=0)
    assert np.all(data["T"] == 1.0) and np.all(data["Y"] == 5.0)


def test_missing_equation_fault():
    spec = SemSpec({"D": Bernoulli(0.5)})
    with pytest.raises(SemError, match="no equation"):
        simulate(spec, hospital_graph(), 10, seed=0)


def test_equation_with_non_parent_fault():
    g = CausalDag.build({"T": "target", "Y": "observed"}, [("T", "Y")])
    spec = SemSpec({"T": Bernoulli(0.5), "Y": Additive((Linear("Q", 1.0),), 1.0)})
    with pytest.raises(SemError):
        simulate(spec, g, 10, seed=0)


def test_simulate_is_deterministic():
    a = simulate(hospital_sem("source"), hospital_graph(), 500, seed=11)
    b = simulate(hospital_sem("source"), hospital_graph(), 500, seed=11)
    assert a.to_csv() == b.to_csv()
    c = simulate(hospital_sem("source"), hospital_graph(), 500, seed=12)
    assert a.to_csv() != c.to_csv()


def test_adding_a_node_leaves_other_columns_alone():
    g = hospital_graph()
    spec = hospital_sem("source")
    wider = g.with_changes(add_nodes={"X": NodeKind.OBSERVED})
    a = simulate(spec, g, 200, seed=4)
    b = simulate(SemSpec({**spec.equations, "X": Bernoulli(0.3)}), wider, 200, seed=4)
    for col in "DTCAY":
        assert np.array_equal(a[col], b[col])


def test_true_counterfactual_identity(source):
    truth = FittedSem.from_law("Y", HOSPITAL_Y)
    cf = estimate_counterfactual(truth, source, ["A", "C"])
    assert np.allclose(cf, -0.5 * source["T"] + source.noise["Y"], rtol=0, atol=1e-12)


# ---------------------------------------------------------------- rejection

def test_reject_nothing_when_predicate_false(source):
    out = reject_sample(source, lambda d: np.zeros(len(d), bool), 0.9, seed=0)
    assert out.to_csv() == source.to_csv()


def test_reject_all_matching(source):
    k = int(((source["C"] == 1) & (source["T"] == 0)).sum())
    out = reject_sample(source, {"C": 1, "T": 0}, 1.0, seed=0)
    assert len(out) == len(source) - k
    assert not np.any((out["C"] == 1) & (out["T"] == 0))


def test_reject_rate():
    data = simulate(hospital_sem("source"), hospital_graph(), 100_000, seed=5)
    active = lambda d: (d["A"] < 6) & (d["T"] == 0)
    match = active(data)
    keep = selection_mask(data, active, 0.9, seed=1)
    assert abs(keep[match].mean() - 0.10) < 0.01
    assert keep[~match].all()


def test_reject_faults(source):
    with pytest.raises(SemError):
        reject_sample(source, {"Q": 1}, 0.5, seed=0)
    with pytest.raises(SemError):
        reject_sample(source, {"C": 1}, 1.5, seed=0)


def test_reject_deterministic(source):
    a = selection_mask(source, {"C": 1}, 0.5, seed=3)
    assert np.array_equal(a, selection_mask(source, {"C": 1}, 0.5, seed=3))


def test_mask_round_trips_through_csv(source):
    masked = source.with_selection(selection_mask(source, {"C": 1}, 0.5, seed=2))
    back = Dataset.from_csv(masked.to_csv())
    assert np.array_equal(back.selected, masked.selected)
    assert np.array_equal(back["Y"], masked["Y"])


# ---------------------------------------------------------------- fitting

def test_noiseless_linear_fit():
    rng = np.random.default_rng(0)
    t, c = rng.normal(size=(2, 100))
    data = Dataset({"T": t, "C": c, "Y": 2 * t + 3 * c})
    fit = fit_additive_sem(data, [Linear("T"), Linear("C")], "Y")
    assert np.allclose(fit.params, [2, 3], atol=1e-8)
    assert fit.noise_scale < 1e-8


def test_linear_gaussian_fit_within_three_se():
    w = np.random.default_rng(8).normal(size=4)
    data = simulate(linear_gaussian_sem(w[0], 2.0, w[2], w[3]), screening_graph(), 30_000, seed=8)
    fit = fit_additive_sem(data, [Linear("T"), Linear("C")], "Y")
    assert abs(fit.term("T").coef - w[2]) < 3 * fit.stderr["T"]
    assert abs(fit.term("C").coef - w[3]) < 3 * fit.stderr["C"]


def test_collinear_fault_names_columns():
    x = np.arange(20.0)
    data = Dataset({"A": x, "B": 2 * x, "Y": x})
    with pytest.raises(SemError, match="A, B"):
        fit_additive_sem(data, [Linear("A"), Linear("B")], "Y")


def test_hospital_fit(source):
    fit = fit_additive_sem(source, HOSPITAL_TEMPLATE, "Y")
    assert fit.converged
    assert fit.param_names == ["const", "T", "C", "A.scale", "A.rate"]
    truth = {"const": 0.0, "T": -0.5, "C": -0.3, "A.scale": 2.0, "A.rate": 0.08}
    for name, value in truth.items():
        est = fit.params[fit.param_names.index(name)]
        assert abs(est - value) < 3 * fit.stderr[name], name
    assert abs(fit.noise_scale - 0.2) < 0.02


def test_exact_exp_decay_recovery():
    a = np.linspace(0, 24, 200)
    data = Dataset({"A": a, "Y": 1.5 + 2.0 * np.exp(-0.08 * a)})
    fit = fit_additive_sem(data, [Constant(), ExpDecay("A")], "Y")
    assert np.allclose(fit.params, [1.5, 2.0, 0.08], atol=1e-8)


def test_too_few_rows():
    data = Dataset({"A": np.arange(2.0), "Y": np.arange(2.0)})
    with pytest.raises(SemError):
        fit_additive_sem(data, [Constant(), Linear("A")], "Y")


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.01, 1), st.integers(0, 1000))
def test_exp_decay_jacobian_matches_finite_differences(scale, rate, seed):
    x = np.random.default_rng(seed).uniform(0, 24, 30)
    jac = exp_decay_jacobian(x, scale, rate)
    h = 1e-6
    for j, (ds, dr) in enumerate([(h, 0), (0, h)]):
        up = (scale + ds) * np.exp(-(rate + dr) * x)
        down = (scale - ds) * np.exp(-(rate - dr) * x)
        fd = (up - down) / (2 * h)
        assert np.max(np.abs(fd - jac[:, j])) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


# ---------------------------------------------------------------- counterfactuals

def test_subtraction_example():
    fit = FittedSem("Y", (Linear("C", 3.0),), 0.0)
    data = Dataset({"Y": np.array([5.0]), "C": np.array([1.0])})
    assert estimate_counterfactual(fit, data, ["C"])[0] == 2.0


def test_empty_intervention_is_identity(source):
    fit = fit_additive_sem(source, HOSPITAL_TEMPLATE, "Y")
    assert np.array_equal(estimate_counterfactual(fit, source, []), source["Y"])


def test_intervention_on_unknown_parent(source):
    fit = fit_additive_sem(source, HOSPITAL_TEMPLATE, "Y")
    with pytest.raises(SemError):
        estimate_counterfactual(fit, source, ["X"])


def test_counterfactual_never_reads_target(source):
    fit = fit_additive_sem(source, HOSPITAL_TEMPLATE, "Y")
    blind = Dataset({k: v for k, v in source.columns.items() if k != "T"})
    assert np.array_equal(estimate_counterfactual(fit, blind, ["A", "C"]),
                          estimate_counterfactual(fit, source, ["A", "C"]))


def test_additivity(source):
    fit = fit_additive_sem(source, HOSPITAL_TEMPLATE, "Y")
    both = estimate_counterfactual(fit, source, ["A", "C"])
    step = source.with_columns(Y=estimate_counterfactual(fit, source, ["A"]))
    assert np.allclose(both, estimate_counterfactual(fit, step, ["C"]), rtol=0, atol=1e-12)


def test_counterfactual_variance_reduction(source):
    fit = fit_additive_sem(source, HOSPITAL_TEMPLATE, "Y")
    cf = estimate_counterfactual(fit, source, ["A", "C"])
    for k in (0, 1):
        rows = source["T"] == k
        assert cf[rows].var(ddof=1) < source["Y"][rows].var(ddof=1)


# ---------------------------------------------------------------- text format

def test_parse_spec_examples():
    spec = parse_sem("""
    eq Y = -0.5*T + -0.3*C + expdecay(A, 2, 0.08) + noise gaussian 0.2
    eq C = bernoulli_table D 1:0.9 0:0.1
    eq A = scaled_beta 24 0.5 2.1 if C=1 else 24 0.7 0.2
    """)
    assert spec["Y"] == HOSPITAL_Y
    assert spec["C"] == hospital_sem("source")["C"]
    assert spec["A"] == hospital_sem("source")["A"]


@pytest.mark.parametrize("site", ["source", "target"])
def test_sem_text_round_trip(site):
    spec = hospital_sem(site)
    assert parse_sem(spec.to_text()) == spec


def test_parse_small_exponents():
    spec = parse_sem("eq Y = 1e-05*T + 2.5E+1 + noise none")
    assert spec["Y"] == Additive((Linear("T", 1e-5), Constant(25.0)), None)


@pytest.mark.parametrize("text", ["Y = T", "eq Y = T + noise cauchy 1", "eq C = bernoulli 2"])
def test_parse_faults(text):
    with pytest.raises(SemError):
        parse_sem(text)
