"""VOS branch: trunk, enhanced key encoder, memory value encoder, MPF decoder, losses."""

from .backbone import Backbone, encode_backbone
from .decoder import MPFBlock, VOSDecoder, mpf_block, vos_decode
from .deform import DeformableAttention, deformable_attention
from .key_encoder import EnhancedKeyEncoder, EnhancedQueryKey, enhance_query_key
from .losses import (aggregate_log_odds, aggregate_logits, aggregate_objects, aggregate_objects_logits,
                     aggregate_soft,
                     bootstrapped_mean, index_targets, vos_loss, vos_loss_logits)
from .value_encoder import CBAM, MemoryValueFeature, ValueEncoder, cbam, encode_memory_value
