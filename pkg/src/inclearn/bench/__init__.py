from .datasets import DatasetSpec, load_cifar_binary, make_gaussian_mixture
from .protocol import ProtocolConfig, execute_protocol, run_protocol, sweep_beta, sweep_lambda, train_joint
from .report import ExperimentReport, IncrementResult, confusion_matrix, emit_report, load_report
