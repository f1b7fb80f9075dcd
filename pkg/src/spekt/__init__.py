"""spekt: synthetic multi-core fiber speckle spectrometry.

Simulate wavelength-dependent speckle transmission through an array of
multimode fiber cores, reconstruct spectra from monochrome speckle images
with three interchangeable backends (Tikhonov inversion, compressive
sensing, from-scratch CNNs), and benchmark sampling, robustness and
timing behaviour.  Reconstructors follow the scikit-learn estimator
protocol (``fit`` / ``predict`` / ``get_params``) so they compose with the
wider ecosystem.
"""

__version__ = "0.1.0"

from .core import (
    SamplingRatio,
    SpeckleImage,
    Spectrum,
    TransmissionMatrix,
    crop_matrix,
    crop_roi,
    render_speckle,
)
from .rng import Rng
from .specklegen import FiberArrayModel, FiberModel, generate_array, generate_fiber, spectral_correlation
from .synth import (
    Dataset,
    DenseSampler,
    Perturbation,
    SparseSampler,
    add_noise,
    build_dataset,
    build_multifiber_dataset,
    encode_rgb_images,
    load_dataset,
    sample_dense_spectrum,
    sample_sparse_spectrum,
    save_dataset,
    shift_roi,
)
from .linear import TikhonovReconstructor, select_lambda
from .cs import CompressiveSensingReconstructor, CsOptions, lipschitz_bound, select_gamma, solve_cs
from .nn import (
    CnnReconstructor,
    MultiFiberCnnReconstructor,
    TrainedNetwork,
    TrainOptions,
    build_cnn_large,
    build_cnn_small,
    build_multifiber,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .bench import EvalReport, cross_correlation, mean_correlation
from .pipeline import (
    FramePacket,
    StreamResult,
    TimingProfile,
    parse_script,
    run_multifiber_stream,
    run_stream,
    simulate_wavelength_switch,
)

__all__ = [
    "__version__",
    "SamplingRatio", "SpeckleImage", "Spectrum", "TransmissionMatrix",
    "crop_matrix", "crop_roi", "render_speckle",
    "Rng",
    "FiberArrayModel", "FiberModel", "generate_array", "generate_fiber",
    "spectral_correlation",
    "Dataset", "DenseSampler", "Perturbation", "SparseSampler",
    "add_noise", "build_dataset", "build_multifiber_dataset",
    "encode_rgb_images", "load_dataset", "sample_dense_spectrum",
    "sample_sparse_spectrum", "save_dataset", "shift_roi",
    "TikhonovReconstructor", "select_lambda",
    "CompressiveSensingReconstructor", "CsOptions", "lipschitz_bound",
    "select_gamma", "solve_cs",
    "CnnReconstructor", "MultiFiberCnnReconstructor", "TrainedNetwork",
    "TrainOptions", "build_cnn_large", "build_cnn_small", "build_multifiber",
    "gradient_check", "load_checkpoint", "save_checkpoint", "train",
    "EvalReport", "cross_correlation", "mean_correlation",
    "FramePacket", "StreamResult", "TimingProfile", "parse_script",
    "run_multifiber_stream", "run_stream", "simulate_wavelength_switch",
]
