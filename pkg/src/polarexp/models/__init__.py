from .eigenmodel import (
    EigenmodelData,
    align_eigen_draws,
    eigenmodel_initial_points,
    eigenmodel_target,
    simulate_eigenmodel,
    unpack_eigen_params,
)
from .fpca import (
    FpcaData,
    FpcaHyper,
    align_fpca_draws,
    center_data,
    fpca_empirical_bayes,
    fpca_point_estimate_v,
    fpca_initial_points,
    fpca_target,
    invgamma_from_moments,
    pack_fpca_params,
    simulate_fpca,
    unpack_fpca_params,
)

__all__ = [
    "EigenmodelData",
    "align_eigen_draws",
    "eigenmodel_initial_points",
    "eigenmodel_target",
    "simulate_eigenmodel",
    "unpack_eigen_params",
    "FpcaData",
    "FpcaHyper",
    "align_fpca_draws",
    "center_data",
    "fpca_empirical_bayes",
    "fpca_point_estimate_v",
    "fpca_initial_points",
    "fpca_target",
    "invgamma_from_moments",
    "pack_fpca_params",
    "simulate_fpca",
    "unpack_fpca_params",
]
