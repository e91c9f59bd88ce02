"""
opysnippets/ojson:2.0.0

floats are written with repr precision, so load(dump(x)) reproduces every value bit for bit.
"""
import json
from collections import OrderedDict

import numpy as np


class _MyJSONEncoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, (set, tuple)):
            return list(o)
        return super().default(o)


def dumps(o, **kwargs):
    # nan/inf are not json
    return json.dumps(o, cls=_MyJSONEncoder, allow_nan=False, **kwargs)


def dump(obj, fp, **kwargs):
    with open(fp, "w", encoding="utf-8") as f:
        f.write(dumps(obj, **kwargs))


def loads(s, **kwargs):
    return json.loads(s, object_pairs_hook=OrderedDict, **kwargs)


def load(fp, **kwargs):
    with open(fp, encoding="utf-8") as f:
        return loads(f.read(), **kwargs)
