from collections import OrderedDict
import copy
import inspect
import logging

from .errors import ConfigurationError
from .snippets.ojson import load, dump


logger = logging.getLogger(__name__)


class ConfField:
    def __init__(self, value=None, check=None):
        """
        Parameters
        ----------
        value: default value (deep-copied for every configuration built)
        check: optional callable, value -> bool, run whenever the field is set
        """
        self._value = value
        self.check = check

    @property
    def value(self):
        return copy.deepcopy(self._value)


class Configuration:
    _manager = None

    def __init__(self, **kwargs):
        for k, v in kwargs.items():
            if k.startswith("_"):
                raise ConfigurationError("A configuration variable can't start with _.")
            if hasattr(self.__class__, k):
                raise ConfigurationError("%s is a forbidden configuration variable name (exists in Configuration cls)." % k)
            # we set attribute, bypassing setattr check
            super().__setattr__(k, v)

    def __str__(self):
        msg = "CONF:"
        for k, v in sorted(self.to_dict().items()):
            msg += "\n\t%s: %s" % (k, v)
        return msg

    def __eq__(self, other):
        return isinstance(other, Configuration) and self.to_dict() == other.to_dict()

    @property
    def fullname(self):
        return self._manager.conf_fullname

    def to_dict(self):
        d = OrderedDict()
        for var_name in sorted(dir(self)):
            if var_name.startswith("_"):
                continue
            if hasattr(self.__class__, var_name):
                continue
            d[var_name] = getattr(self, var_name)
        return d

    def from_dict(self, d):
        """
        var dict only contain variables, but no conf fullname
        """
        for k, v in d.items():
            setattr(self, k, v)

    def copy(self, **overrides):
        conf = self._manager.to_conf(**self.to_dict())
        conf.from_dict(overrides)
        return conf

    def set_manager(self, manager):
        super().__setattr__("_manager", manager)

    def __setattr__(self, key, value):
        if not hasattr(self, key):
            raise ConfigurationError("CONF %s has no attribute '%s'." % (self._manager.conf_fullname, key))
        self._manager.check_field(key, value)
        super().__setattr__(key, value)


class ConfigurationManager:
    def __init__(self, var_name="CONF"):
        self._conf_fullname = inspect.getmodule(inspect.stack()[1][0]).__name__ + "." + var_name
        # (we got module name of previous frame and added var_name)

    @property
    def conf_fullname(self):
        return self._conf_fullname

    @property
    def conf_keys(self):
        return sorted(k for k in dir(self.__class__) if isinstance(getattr(self.__class__, k), ConfField))

    def check_field(self, key, value):
        field = getattr(self.__class__, key, None)
        if not isinstance(field, ConfField):
            raise ConfigurationError("Variable '%s' is not a conf field of %s." % (key, self.conf_fullname))
        if (field.check is not None) and (not field.check(value)):
            raise ConfigurationError("invalid value for '%s': %r" % (key, value))

    def to_conf(self, **overrides):
        d = {}
        for k in self.conf_keys:
            d[k] = getattr(self.__class__, k).value
        conf = Configuration(**d)
        conf.set_manager(self)

        # user values go through the checks
        conf.from_dict(overrides)
        return conf

    def conf_from_dict(self, d):
        """
        Parameters
        ----------
        d: {fullname: 'name.of.conf.CONF', conf: {...},} or directly {...}

        Returns
        -------
        configured Configuration object
        """
        if "conf" in d and "fullname" in d:
            if d["fullname"] != self.conf_fullname:
                raise ConfigurationError(
                    "File does not correspond to correct conf (%s instead of %s)" % (d["fullname"], self.conf_fullname))
            d = d["conf"]
        return self.to_conf(**d)

    def conf_from_file(self, file_path):
        try:
            d = load(file_path)
        except ValueError as e:
            raise ConfigurationError("could not parse configuration file %s: %s" % (file_path, e)) from None
        if not isinstance(d, dict):
            raise ConfigurationError("configuration file must contain a json object: %s" % file_path)
        logger.debug("configuration loaded", extra=dict(path=file_path, fullname=self.conf_fullname))
        return self.conf_from_dict(d)

    def to_dict(self, conf):
        return OrderedDict([
            ("fullname", self.conf_fullname),
            ("conf", conf.to_dict())
        ])

    def to_file(self, conf, file_path):
        dump(self.to_dict(conf), file_path, indent=4)
        return file_path
