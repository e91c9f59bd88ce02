"""
opysnippets/mkdir:2.0.0
"""
import stat
import os

DEFAULT_RUN_PERMS = stat.S_IRWXU | stat.S_IRGRP | stat.S_IXGRP | stat.S_IROTH | stat.S_IXOTH


def mkdir(path):
    """
    creates path and its missing parents, does nothing if path is already a directory
    """
    os.makedirs(path, DEFAULT_RUN_PERMS, exist_ok=True)
    return path
