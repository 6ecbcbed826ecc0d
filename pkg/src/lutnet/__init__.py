"""Quantized dense networks compiled to multiplication-free lookup-table inference."""

from .activations import ActivationSpec, GridSnap, Kind, build_activation, gamma_d, snap_boundaries, snap_grid
from .clustering import Method, WeightCodebook, assign_to_codebook, fit_codebook, fit_laplacian_codebook, kmeans_1d
from .compiler import CompileOptions, LutModel, choose_scale, compile_model, decompile
from .data import gen_parabola, gen_patches, load_mnist, load_mnist_idx
from .inference import forward_int, quantize_input, reference_forward
from .network import DenseNet, Head, init_dense_net
from .serialization import estimate_storage, load_model, save_model
from .training import TrainConfig, evaluate, train_loop

__version__ = "0.1.0"
