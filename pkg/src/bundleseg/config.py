"""Pipeline configuration.

Settings live in an INI file and can be overridden per run.  Precedence,
highest first: command-line flag, config file, built-in default.  The
two path settings additionally honor the environment variables
BUNDLESEG_DATA_ROOT and BUNDLESEG_OUTPUT_ROOT (between flags and file).
Every run can persist the effective configuration next to its outputs so
results stay reproducible.
"""

import os
import configparser

DEFAULTS = {
    "paths": {
        "data_root": "",
        "output_root": "",
    },
    "preprocessing": {
        "voxel_size": "1.0",
        "mask_threshold": "0.5",
    },
    "model": {
        "in_channels": "9",
        "base_width": "64",
        "seed": "0",
    },
    "training": {
        "learning_rate": "0.001",
        "max_epochs": "250",
        "patience": "25",
        "batch_size": "32",
        "folds": "5",
        "fold_seed": "0",
        "shuffle_seed": "0",
    },
    "evaluation": {
        "threshold": "0.5",
        "adjacency_radius": "1",
    },
    "stats": {
        "alpha": "0.05",
    },
    "phantom": {
        "subjects": "10",
        "shape": "64 64 40",
        "noise_sigma": "0.1",
        "jitter": "0.75",
        "drop_probability": "0.0",
        "seed": "0",
        "streamlines_per_bundle": "20",
    },
}

_ENV_KEYS = {
    ("paths", "data_root"): "BUNDLESEG_DATA_ROOT",
    ("paths", "output_root"): "BUNDLESEG_OUTPUT_ROOT",
}


class ConfigError(ValueError):
    pass


class PipelineConfig:
    """Merged view over defaults, a config file and explicit overrides."""

    def __init__(self, values):
        self._values = values

    def get(self, section, key):
        try:
            return self._values[section][key]
        except KeyError:
            raise ConfigError("unknown setting [%s] %s" % (section, key))

    def get_float(self, section, key):
        raw = self.get(section, key)
        try:
            return float(raw)
        except ValueError:
            raise ConfigError("setting [%s] %s = %r is not a number"
                              % (section, key, raw))

    def get_int(self, section, key):
        raw = self.get(section, key)
        try:
            return int(raw)
        except ValueError:
            raise ConfigError("setting [%s] %s = %r is not an integer"
                              % (section, key, raw))

    def get_ints(self, section, key):
        raw = self.get(section, key)
        try:
            return tuple(int(tok) for tok in raw.split())
        except ValueError:
            raise ConfigError("setting [%s] %s = %r is not a list of integers"
                              % (section, key, raw))

    def sections(self):
        return dict((s, dict(kv)) for s, kv in self._values.items())

    def write(self, path):
        parser = configparser.ConfigParser()
        for section, kv in self._values.items():
            parser[section] = dict(kv)
        with open(path, "w") as f:
            parser.write(f)


def load_config(path=None, overrides=None, environ=None):
    """Build the effective configuration.

    path : optional INI file.
    overrides : {(section, key): value} from command-line flags.
    environ : mapping used for the path variables (defaults to os.environ).
    """
    environ = os.environ if environ is None else environ
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}

    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError("cannot read config file %r" % path)
        for section in parser.sections():
            if section not in values:
                raise ConfigError("unknown config section [%s]" % section)
            for key, value in parser[section].items():
                if key not in values[section]:
                    raise ConfigError("unknown setting [%s] %s" % (section, key))
                values[section][key] = value

    for (section, key), env_name in _ENV_KEYS.items():
        if environ.get(env_name):
            values[section][key] = environ[env_name]

    if overrides:
        for (section, key), value in overrides.items():
            if value is None:
                continue
            if section not in values or key not in values[section]:
                raise ConfigError("unknown setting [%s] %s" % (section, key))
            values[section][key] = str(value)

    return PipelineConfig(values)
