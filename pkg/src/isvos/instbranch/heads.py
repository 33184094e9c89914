"""Instance prediction head: class logits and dot-product mask logits."""

from dataclasses import dataclass

from .. import tensorkit as tk
from ..tensorkit.nn import MLP, Linear, Module


@dataclass
class InstancePrediction:
    class_logits: tk.Tensor  # N x (num_classes + 1); None when the class head is skipped
    mask_logits: tk.Tensor  # N x h x w at F_pixel resolution

    def class_probs(self):
        return tk.softmax(self.class_logits, axis=-1)


class InstanceHead(Module):
    def __init__(self, c_d, c_eps, num_classes, rng):
        self.num_classes = num_classes
        self.classifier = Linear(c_d, num_classes + 1, rng)
        # two hidden layers
        self.mask_embed = MLP([c_d, c_d, c_d, c_eps], rng)

    def forward(self, q, F_pixel, with_class=True):
        return predict_instances(self, q, F_pixel, with_class)


def predict_instances(head, q, F_pixel, with_class=True):
    c, h, w = F_pixel.shape
    embed = head.mask_embed(q)
    mask_logits = tk.matmul(embed, F_pixel.reshape(c, h * w)).reshape(q.shape[0], h, w)
    class_logits = head.classifier(q) if with_class else None
    return InstancePrediction(class_logits, mask_logits)
