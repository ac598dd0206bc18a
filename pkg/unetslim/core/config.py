"""Run configuration assembled from packaged defaults, a config file and overrides.

Every command is fully determined by its RunConfig, which carries the seed.
"""
import os
import json
import hashlib
import logging
from dataclasses import dataclass

import yaml

from unetslim.core.attributes import AttrDict
from unetslim.core.exceptions import ArgumentError

logger = logging.getLogger(__name__)

HERE = os.path.dirname(os.path.abspath(__file__))
SECTIONS = ("funnel", "prune", "toy", "motion", "verify")


with open(os.path.join(HERE, "defaults.yml")) as stream:
    DEFAULTS = yaml.load(stream, yaml.SafeLoader)


def _merge(base, update, path=""):
    """Recursive update of `base` with `update`, rejecting unknown keys."""
    out = dict(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ArgumentError(f"Unknown config option '{where}', valid are {sorted(base)}")
        if isinstance(base[key], dict) and base[key] and isinstance(value, dict):
            out[key] = _merge(base[key], value, path=f"{where}.")
        else:
            out[key] = value
    return out


def parse_kwargs(kwargs):
    """Parse kwargs from command line into a nested dictionary of overrides.

    Values are parsed as yaml so numbers, booleans and lists keep their type. Dotted
    keys address nested options, e.g. `-k verify.solver_cases 10`.
    """
    overrides = {}
    for key, val in kwargs or ():
        node = overrides
        *parents, leaf = key.split(".")
        for parent in parents:
            node = node.setdefault(parent, {})
        node[leaf] = yaml.safe_load(val)
    return overrides


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one command run.

    Args:
        - seed (int): Root seed, every random draw descends from it.
        - funnel (AttrDict): Funnel fitting, merging and baseline options.
        - prune (AttrDict): Inclusion solver and sampler options.
        - toy (AttrDict): Toy UNet spec overrides and stacked-optimization options.
        - motion (AttrDict): Motion descriptor options.
        - verify (AttrDict): Trial counts and tolerances of the property suite.

    """

    seed: int
    funnel: AttrDict
    prune: AttrDict
    toy: AttrDict
    motion: AttrDict
    verify: AttrDict

    @classmethod
    def from_dict(cls, data):
        data = _merge(DEFAULTS, data or {})
        seed = data["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ArgumentError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
        return cls(seed=seed, **{name: AttrDict(data[name]) for name in SECTIONS})

    @classmethod
    def load(cls, filename=None, overrides=None, seed=None):
        """Defaults updated by a yaml/json file, then overrides, then the seed.

        Args:
            - filename (str): Config file, json is accepted as it is valid yaml.
            - overrides (dict): Nested options, e.g. from `parse_kwargs`.
            - seed (int): Seed taking precedence over files and overrides.

        """
        data = {}
        if filename is not None:
            with open(filename) as stream:
                data = yaml.safe_load(stream) or {}
            if not isinstance(data, dict):
                raise ArgumentError(f"Config file {filename} must hold a mapping")
            logger.debug(f"Loaded config from {filename}")
        data = _merge(DEFAULTS, data)
        data = _merge(data, overrides or {})
        if seed is not None:
            data["seed"] = seed
        return cls.from_dict(data)

    def to_dict(self):
        return {
            "seed": self.seed,
            **{name: json.loads(json.dumps(getattr(self, name))) for name in SECTIONS},
        }

    def digest(self):
        """Sha256 of the sorted-key json form, identifying the run inputs."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()
