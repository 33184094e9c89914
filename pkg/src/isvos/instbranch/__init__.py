"""Instance segmentation branch: pixel decoder, masked-attention query decoder,
instance head, set matching and losses."""

from .heads import InstanceHead, InstancePrediction, predict_instances
from .losses import (LossWeights, classification_loss, dice_loss, is_loss, layer_loss, matching_cost,
                     weighted_bce)
from .matching import assignment_cost, hungarian_match
from .pyramid import FeaturePyramid, PixelDecoder, pixel_decode
from .transformer import (MultiHeadAttention, ObjectQuerySet, QueryDecoder, attention_bias,
                          decode_queries, masked_attention_layer, masked_cross_attention)
