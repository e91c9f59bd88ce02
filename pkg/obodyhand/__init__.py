# ! order matters
from .configuration_management import ConfigurationManager, ConfField, Configuration
from .conf import CONF
from .errors import (
    ObodyhandError, ValidationError, UnsupportedVersionError, NumericError, ConfigurationError, GradCheckFailure)
from .pools import get_thread_pool, configure_torch
from .topology import GraphTopology, AdjacencyStack, build_topology, normalize_adjacency
from .skeleton import (
    PersonTrack, SkeletonSample, Dataset, StreamTensor, SynthSpec, save_dataset, load_dataset, resample_temporal,
    derive_bone, select_active_hands, pad_hand_layout, to_stream_tensor, synth_generate)
from .backbone import Backbone, spatial_graph_conv, temporal_conv
from .attention import CrossAttention, PoolingAttention, softmax_attention, fast_attention, cross_attend, \
    pooled_axis_views
from .models import (
    LossWeights, BranchOutputs, StreamExpert, build_model, cross_entropy, fuse_logits_avg, dual_stream_loss,
    expertized_loss, expert_only_predict, predict)
from .run_config import run_config, load_run_config
from .checkpoint import Checkpoint
from .cost import CostReport, count_cost
from .gradcheck import GradCheckReport, grad_check
from .training import Metrics, train, evaluate, ensemble_streams, confusion_matrix
from .experiments import run_ablation
from .admin import Administrator, Command, CommandArg
