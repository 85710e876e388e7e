"""Online kernel similarity matching with Hebbian/anti-Hebbian learning rules,
plus the classical kernel-approximation baselines used to evaluate it."""

from .kernels import (
    GaussianKernel,
    HomogeneousPolynomialKernel,
    Kernel,
    LinearKernel,
    PowerCosineKernel,
    kernel_from_config,
)
from .data import Dataset, Phase, TrainConfig, load_idx_images, make_half_moons
from .model import (
    ModelState,
    energies,
    energy,
    init_state,
    param_gradients,
    response_closed_form,
    response_dynamics,
)
from .training import train, train_homogeneous
from .baselines import (
    LandmarkSet,
    kernel_pca_features,
    nystrom_features,
    random_fourier_features,
    select_landmarks_kmeans,
    select_landmarks_uniform,
)
from .analysis import nrmse, spectrum

__version__ = "0.1.0"
