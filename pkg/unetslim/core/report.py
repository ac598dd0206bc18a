"""Deterministic json reports of command runs."""
import json
from dataclasses import dataclass, field

import numpy as np


def jsonable(obj):
    """Recursively convert numpy scalars, arrays and tuples into json types."""
    if isinstance(obj, dict):
        return {str(key): jsonable(value) for key, value in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [jsonable(value) for value in obj]
    elif isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    elif isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    elif isinstance(obj, (int, np.integer)):
        return int(obj)
    elif isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


@dataclass
class Report:
    """Outcome of one command.

    Args:
        - command (str): Command name.
        - inputs (str): Digest of the run configuration and input files.
        - metrics (dict): Residuals, counts, frequencies and per-check results.
        - passed (bool): Aggregate pass flag, None for commands without checks.
        - wall_time (float): Seconds, only set when timing is requested.

    """

    command: str
    inputs: str
    metrics: dict = field(default_factory=dict)
    passed: bool = None
    wall_time: float = None

    def to_dict(self):
        out = {"command": self.command, "inputs": self.inputs, "metrics": jsonable(self.metrics)}
        if self.passed is not None:
            out["passed"] = bool(self.passed)
        if self.wall_time is not None:
            out["wall_time"] = float(self.wall_time)
        return out

    def to_json(self):
        """Sorted-key json, floats written with their shortest round-trip repr."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write(self, filename):
        with open(filename, "w") as fp:
            fp.write(self.to_json() + "\n")
