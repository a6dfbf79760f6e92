"""Multi-modal masked autoencoding over RGB, depth, and point clouds.

Tokenizes each modality, masks under a fixed visible-token budget with
Dirichlet-sampled modality allocations, encodes the joint visible set with a
CLS-free ViT, reconstructs the hidden complement through a cross-attention
fusion decoder, and optionally distills a frozen teacher into a smaller
student via feature alignment.
"""

from .decoder import DecoderConfig, FusionDecoder, Reconstruction
from .distill import AlignmentProjectors, AlignmentSpec, distill_step, select_alignment_layers, smooth_l1
from .encoder import ENCODER_PRESETS, EncoderConfig, JointEncoder, JointRepresentation
from .errors import ConfigurationError, EmptyCloudError, FormatError, TrainingAborted
from .geometry import CameraIntrinsics, PointGroup, farthest_point_sampling, knn_group, unproject_depth
from .losses import LossBreakdown, mae_loss, normalize_targets
from .masking import MaskPlan, MaskedViews, materialize_masks, sample_allocation, split_views
from .model import MICRO_MODEL, ModelConfig, MultiModalMAE, build_model, prepare_sample
from .synthdata import Dataset, Sample, SceneSpec, random_scene, read_dataset, render, write_dataset
from .tokenizer import ImagePatchifier, PointGroupEncoder, TokenSet, sincos_pos_2d
from .trainer import TrainingConfig, adamw_step, clip_grad_norm, lr_at, train

__version__ = "0.1.0"
