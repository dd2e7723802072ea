"""
Input-gradient saliency maps for the strong and weak outputs.
"""
import logging
from pathlib import Path

import numpy as np

from exceptions import DataFormatError, InvalidArgumentError
from .audio_features import FeatureMatrix
from .tensor import INFER

logger = logging.getLogger(__name__)

HEADS = ('strong', 'weak')


def saliency(model, features: FeatureMatrix, class_index: int, head: str = 'strong') -> np.ndarray:
    """
    |d(output of class_index) / d(features)| as a T x F map.

    For the strong head the output is summed over all frames; for the weak
    head it is the single clip-level probability. Inference mode is used
    throughout, so dropout is inactive and batch norm uses running statistics.
    """
    if head not in HEADS:
        raise InvalidArgumentError(f"Unknown head '{head}'; expected one of {HEADS}.")
    if not 0 <= class_index < model.num_classes:
        raise InvalidArgumentError(
            f"Class index {class_index} is outside 0..{model.num_classes - 1}.")

    strong, weak = model.forward_batch(features.values[None, :, :], INFER)
    grad_strong = np.zeros_like(strong)
    grad_weak = np.zeros_like(weak)
    if head == 'strong':
        grad_strong[..., class_index] = 1.0
    else:
        grad_weak[..., class_index] = 1.0
    grad_input = model.backward(grad_strong, grad_weak)
    # Backward also fills parameter gradients; they are not wanted here.
    model.zero_grad()
    return np.abs(grad_input[0])


def render_saliency_image(saliency_map: np.ndarray, path: str | Path) -> None:
    """
    Writes a grayscale PNG with time running left to right and the lowest mel
    band at the bottom.
    """
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    path = Path(path)
    image = np.flipud(np.asarray(saliency_map, dtype=np.float64).T)
    peak = image.max()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        plt.imsave(str(path), image, cmap='gray', vmin=0.0, vmax=peak if peak > 0 else 1.0)
    except OSError as e:
        raise DataFormatError(f"Cannot write saliency image {path}: {e}") from e
    logger.debug("Rendered saliency image %s (%d x %d).", path, image.shape[1], image.shape[0])
