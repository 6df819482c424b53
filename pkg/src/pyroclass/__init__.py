"""Thermal-image CNN classifier family: data pipeline, from-scratch
training, evaluation metrics, grad-CAM saliency and t-SNE embedding."""

__version__ = "0.1.0"

from .arch import ModelConfig, build_model, classify, forward, head_channels, param_count
from .cam import CamMap, cam_for_top_class, export_cam, grad_cam
from .data import (
    AugmentSpec,
    Dataset,
    SampleRecord,
    augment,
    balance_classes,
    decode_and_resize,
    load_manifest,
    split_test,
    stratified_folds,
)
from .metrics import (
    ConfusionMatrix,
    RocCurve,
    auc,
    confusion_matrix,
    precision_recall_f1,
    roc_sweep,
    row_percent,
)
from .tensor import Tensor, matmul, tensor_filled
from .train import (
    TrainConfig,
    TrainReport,
    binary_cross_entropy,
    categorical_cross_entropy,
    cross_validate,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    train,
)
from .tsne import EmbedConfig, Embedding, collect_outputs, joint_affinities, tsne
