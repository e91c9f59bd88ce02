import concurrent.futures
import logging

import torch

from . import CONF


logger = logging.getLogger(__name__)

_thread_pool = None  # shared between threads


def get_thread_pool():
    """
    pool size is read from CONF.pool_max_threads (>=1 or None for auto), only on pool creation
    """
    global _thread_pool
    if _thread_pool is None:
        _thread_pool = concurrent.futures.ThreadPoolExecutor(CONF.pool_max_threads)
    return _thread_pool


def configure_torch():
    """
    applies CONF torch settings, must be called before any training or checking work
    """
    torch.set_num_threads(CONF.torch_num_threads)
    torch.use_deterministic_algorithms(CONF.deterministic)
    logger.debug(
        "torch configured",
        extra=dict(num_threads=CONF.torch_num_threads, deterministic=CONF.deterministic)
    )
