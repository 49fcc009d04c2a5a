"""Privacy-preserving federated regression at desk scale.

Linear, ridge, and logistic models trained across simulated users without
any user revealing raw data or bare gradients: per-user gradients are
computed under additively homomorphic encryption, blinded, and combined
through a dropout-robust masked aggregation. Oblivious prediction lets a
client score a held model without showing the server its features.
"""

from .ahe import key_from_bytes, keygen
from .data import Dataset, gen_synthetic, load_dataset, partition
from .errors import AuthenticationError, ConfigError, ProtocolAbort
from .experiment import ExperimentReport, evaluate, run_experiment, write_report
from .fedtrain import TrainConfig, TrainResult, plaintext_train, train
from .fixedpoint import (
    FpConfig,
    fp_decode,
    fp_decode_vector,
    fp_encode,
    fp_encode_vector,
)
from .oblivpred import predict
from .slg import fit_sigmoid_cubic

__version__ = "0.1.0"

__all__ = [
    "AuthenticationError",
    "ConfigError",
    "Dataset",
    "ExperimentReport",
    "FpConfig",
    "ProtocolAbort",
    "TrainConfig",
    "TrainResult",
    "__version__",
    "evaluate",
    "fit_sigmoid_cubic",
    "fp_decode",
    "fp_decode_vector",
    "fp_encode",
    "fp_encode_vector",
    "gen_synthetic",
    "key_from_bytes",
    "keygen",
    "load_dataset",
    "partition",
    "plaintext_train",
    "predict",
    "run_experiment",
    "train",
    "write_report",
]
