from obodyhand import ConfigurationManager as _ConfigurationManager, ConfField as _ConfField


class _ConfManager(_ConfigurationManager):
    # pools
    pool_max_threads = _ConfField()  # must be >=1 or None (auto)

    # torch
    torch_num_threads = _ConfField(value=1, check=lambda v: isinstance(v, int) and v >= 1)
    deterministic = _ConfField(value=True)

    # logging
    log_level = _ConfField(value="INFO")

    # finite differences
    fd_step = _ConfField(value=1e-4, check=lambda v: v > 0)
    grad_tolerance = _ConfField(value=1e-4, check=lambda v: v > 0)


CONF = _ConfManager().to_conf()
