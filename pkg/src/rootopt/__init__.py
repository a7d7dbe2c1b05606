"""Refining target populations for precise generalization of trial effects."""

__version__ = "0.1.0"

from rootopt.data import Dataset, load_csv, write_csv, validate
from rootopt.nuisance import NuisanceModels, fit_selection_model, fit_nuisance
from rootopt.estimators import Estimate, tate_ipw, wtate_ipw, root_objective
from rootopt.tree import Leaf, Split, WeightTree
from rootopt.root import RootConfig, RashomonSet, build_rashomon, ensemble_predict, characteristic_tree

__all__ = [
    "Dataset", "load_csv", "write_csv", "validate",
    "NuisanceModels", "fit_selection_model", "fit_nuisance",
    "Estimate", "tate_ipw", "wtate_ipw", "root_objective",
    "Leaf", "Split", "WeightTree",
    "RootConfig", "RashomonSet", "build_rashomon", "ensemble_predict", "characteristic_tree",
]
