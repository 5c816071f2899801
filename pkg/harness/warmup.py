"""
Pre-compile the Numba kernels so the first request or sweep does not pay
for JIT compilation.
"""

import logging
import time
import numpy as np
from core.evaluation import greedy_match
from core.geometry import iou_matrix

logger = logging.getLogger(__name__)


def warmup_numba_functions() -> bool:
    """Run every kernel once on representative shapes"""
    start = time.perf_counter()

    detections = np.array(
        [[10.0, 10.0, 30.0, 40.0], [12.0, 11.0, 31.0, 38.0], [50.0, 50.0, 60.0, 60.0]]
    )
    faces = np.array([[10.0, 10.0, 30.0, 40.0], [48.0, 52.0, 61.0, 63.0]])
    ious = iou_matrix(detections, faces)
    greedy_match(ious, 0.5)

    # Empty images take a separate path through both kernels
    empty = np.zeros((0, 4))
    greedy_match(iou_matrix(empty, faces), 0.5)
    greedy_match(iou_matrix(detections, empty), 0.5)

    logger.info('Numba warmup completed in %.2fs', time.perf_counter() - start)
    return True
