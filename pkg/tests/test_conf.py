import unittest
import tempfile
import os

from obodyhand import CONF, ConfigurationError
from obodyhand.run_config import RUN_CONFIG_MANAGER, run_config, load_run_config, loss_weights
from obodyhand.snippets.ojson import dump
from tests.util import simple_conf, simple_conf_manager


class ConfTest(unittest.TestCase):
    def test_simple(self):
        with tempfile.TemporaryDirectory() as dir_path:
            conf_path = simple_conf_manager.to_file(simple_conf, os.path.join(dir_path, "simple_conf.json"))

            # load conf
            _conf = simple_conf_manager.conf_from_file(conf_path)

            # check both confs are equal
            expected = dict(int=1, positive=2, str="str")
            self.assertEqual(expected, _conf.to_dict())
            self.assertEqual(expected, simple_conf_manager.to_dict(simple_conf)["conf"])
            self.assertTrue(simple_conf_manager.conf_fullname.endswith("util.simple_conf"))

    def test_checks(self):
        conf = simple_conf_manager.to_conf()
        with self.assertRaises(ConfigurationError):
            conf.positive = 0
        with self.assertRaises(ConfigurationError):
            conf.unknown = 1
        conf.positive = 5
        self.assertEqual(5, conf.positive)
        # defaults are not shared
        self.assertEqual(2, simple_conf_manager.to_conf().positive)

    def test_wrong_fullname(self):
        with self.assertRaises(ConfigurationError):
            simple_conf_manager.conf_from_dict(dict(fullname="other.CONF", conf=dict(int=2)))

    def test_package_conf(self):
        self.assertEqual(1e-4, CONF.fd_step)
        self.assertEqual(1e-4, CONF.grad_tolerance)
        self.assertTrue(CONF.deterministic)


class RunConfigTest(unittest.TestCase):
    def test_defaults(self):
        config = run_config()
        self.assertEqual("pam", config.variant)
        self.assertEqual([16, 32, 32, 64], config.channels)
        self.assertEqual([1, 2, 1, 2], config.strides)
        self.assertEqual(["joint"], config.streams)
        self.assertEqual(0.9, config.momentum)
        self.assertEqual((1., 1., 1.), tuple(loss_weights(config).to_dict().values()))

    def test_invalid_values(self):
        for key, value in (
                ("variant", "transformer"),
                ("epochs", 0),
                ("temporal_kernel", 4),
                ("streams", []),
                ("streams", ["joint", "joint"]),
                ("streams", ["velocity"]),
                ("lambda_cpl", -1.),
                ("dtype", "float16"),
                ("partition", "spatial"),
                ("seed", -1)):
            with self.subTest(key=key, value=value):
                with self.assertRaises(ConfigurationError):
                    run_config(**{key: value})

    def test_channels_strides_length(self):
        with self.assertRaises(ConfigurationError):
            run_config(channels=[4, 8], strides=[1])

    def test_file_round_trip(self):
        config = run_config(variant="expertized", lambda_cpl=0., streams=["joint", "bone"])
        with tempfile.TemporaryDirectory() as dir_path:
            # manager document
            path = RUN_CONFIG_MANAGER.to_file(config, os.path.join(dir_path, "run.json"))
            self.assertEqual(config, load_run_config(path))

            # plain object
            plain_path = os.path.join(dir_path, "plain.json")
            dump(dict(variant="score_fusion", epochs=3), plain_path)
            plain = load_run_config(plain_path)
            self.assertEqual("score_fusion", plain.variant)
            self.assertEqual(3, plain.epochs)

    def test_unknown_key_in_file(self):
        with tempfile.TemporaryDirectory() as dir_path:
            path = os.path.join(dir_path, "run.json")
            dump(dict(variant="pam", optimizer="adam"), path)
            with self.assertRaises(ConfigurationError):
                load_run_config(path)

    def test_unparsable_file(self):
        with tempfile.TemporaryDirectory() as dir_path:
            path = os.path.join(dir_path, "run.json")
            with open(path, "w") as f:
                f.write("{variant: pam")
            with self.assertRaises(ConfigurationError):
                load_run_config(path)

    def test_copy(self):
        config = run_config()
        other = config.copy(variant="expertized")
        self.assertEqual("pam", config.variant)
        self.assertEqual("expertized", other.variant)
