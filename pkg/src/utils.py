"""
Utility Functions for the Simulator-in-the-Loop Estimator
"""

import os
import hashlib
from typing import List, Dict, Any, Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigurationError


# =============================================================================
# Data I/O
# =============================================================================

def ensure_parent_dir(filepath: str):
    """Create the parent directory of a file path if it has one"""
    file_dir = os.path.dirname(filepath)
    if file_dir:  # Only makedirs if there's a directory component
        os.makedirs(file_dir, exist_ok=True)


def load_yaml(filepath: str) -> Dict:
    """Load YAML configuration file"""
    with open(filepath, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f)
    return data if data is not None else {}


def save_yaml(data: Dict, filepath: str):
    """
    Save a mapping as YAML with sorted keys.

    Numpy scalars and arrays are converted to plain Python values first so
    the output stays readable by yaml.safe_load.
    """
    ensure_parent_dir(filepath)
    with open(filepath, 'w', encoding='utf-8') as f:
        yaml.safe_dump(to_builtin(data), f, sort_keys=True, default_flow_style=False)


def to_builtin(value: Any) -> Any:
    """Recursively convert numpy containers/scalars to builtin types"""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    return value


def resolve_path(path: Optional[str], base_dir: str) -> Optional[str]:
    """Resolve a path from a config file against the file's own directory"""
    if path is None or os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))


# =============================================================================
# Hashing
# =============================================================================

def generate_hash(text: str) -> str:
    """Generate MD5 hash for text"""
    return hashlib.md5(text.encode('utf-8')).hexdigest()


def hash_vector(values: Sequence[float]) -> str:
    """Short stable identifier of a parameter vector (full-precision repr)"""
    text = ",".join(repr(float(v)) for v in values)
    return generate_hash(text)[:12]


# =============================================================================
# Channel helpers
# =============================================================================

def index_of(labels: Sequence[str], label: str, what: str = "channel") -> int:
    """
    Position of a label in a label list.

    Raises:
        ConfigurationError: if the label is unknown
    """
    try:
        return list(labels).index(label)
    except ValueError:
        raise ConfigurationError(f"unknown {what} label '{label}'") from None


def first_non_finite(values: np.ndarray, labels: List[str]) -> Optional[str]:
    """Label of the first non-finite entry, or None when all are finite"""
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size == 0:
        return None
    return labels[int(bad[0])]
