"""Compact 3-conv-layer CNN toolkit for electronic-component classification.

Pretrain the small network on a source dataset (CIFAR binaries or an image
folder), swap the classification head, fine-tune on a small target dataset,
and report 5-fold cross-validated metrics. Everything is seeded and
reproducible; checkpoints round-trip bit-exactly.
"""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (FoldPlan, LabeledDataset, PreprocessConfig, bilinear_resize,
                   iterate_batches, kfold_split, load_cifar_binary,
                   load_image_folder, preprocess, prepare_arrays)
from .errors import (BadMagicError, BadVersionError, CheckpointError, ConfigError,
                     DataError, DecodeError, ManifestMismatchError, NumericError,
                     ShapeError, TruncatedBlobError, VoltaVisionError)
from .evaluate import (MetricsReport, compute_metrics, confusion_matrix,
                       cross_validate, predict_classes, render_report, write_report)
from .gradcheck import check_layer, check_network, max_rel_error
from .layers import BatchNorm2d, Conv2d, Flatten, Linear, MaxPool2d, ReLU
from .model import (ArchitectureConfig, ModelGraph, build_voltavision,
                    count_parameters, replace_head, set_trainable)
from .tensor import Shape4, Tensor, flatten_to_rows, new_filled, pad_spatial
from .train import (SGD, Split, TrainConfig, cross_entropy, fit, softmax,
                    step_lr, train_epoch)
