"""Python access to the capgov governance runtime and simulation harness."""

import json as _json

from ._capgov import (  # noqa: F401
    ConfigError,
    CorruptLog,
    RegistryError,
    paired_t_test,
    protocol_version,
)
from . import _capgov


def validate_registry(path):
    """Load and validate a registry file; returns the capability names."""
    return _capgov.validate_registry(str(path))


def govern(registry_path, request):
    """Run admission and policy on one request dict; returns the decision as a dict."""
    return _json.loads(_capgov.govern_json(str(registry_path), _json.dumps(request)))


def run_cell(config_path, variant, seed, trials=0):
    """Run one (variant, seed) cell; returns {"metrics": ..., "latency": ...}."""
    return _json.loads(_capgov.run_cell_json(str(config_path), variant, seed, trials))


def run_tables(config_path, variants=(), trials=0):
    """Run the experiment and return each table as CSV text keyed by table id."""
    return _json.loads(_capgov.run_tables_json(str(config_path), list(variants), trials))


def replay(audit_path):
    """Recompute metrics from an audit log."""
    return _json.loads(_capgov.replay_json(str(audit_path)))
