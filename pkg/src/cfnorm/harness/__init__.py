from .experiments import (
    EXPERIMENTS,
    CrossHospitalConfig,
    ExperimentConfig,
    ExperimentResult,
    LinearGaussianConfig,
    PerturbationConfig,
    PlanMismatch,
    SelectionBiasConfig,
    derive_seed,
    exp_cross_hospital,
    exp_linear_gaussian,
    exp_perturbation,
    exp_selection_bias,
    quadratic_r2,
)
