"""Python access to the LUCID core: trace features, estimation models and the simulator."""

import json as _json

from . import _lucid
from ._lucid import (
    WHITE_SPACE_US,
    ArrivalTrace,
    JsonError,
    LucidError,
    SlotFeatures,
    compute_pdr,
    ema_series,
    label_states,
    model_broadcast_time,
    parse_trace,
    read_trace,
    slot_features,
    subslot_tx_time,
    synthesize_exponential,
    synthesize_pareto,
)

FREE, BUSY = 0, 1


def gmm_fit(features, components=7, seed=1):
    """Fitted mixture as a dict (JSON-compatible)."""
    return _json.loads(_lucid.gmm_fit(features, components, seed))


def hmm_fit(features, labels, seed=1, components_per_state=3):
    return _json.loads(_lucid.hmm_fit(features, labels, seed, components_per_state))


def gmm_classify(gmm, features, slot_len_us=100_000):
    """Slot-aligned FREE/BUSY estimate from a mixture dict returned by gmm_fit."""
    return _lucid.gmm_classify(_json.dumps(gmm), features, slot_len_us)


def predict_white_spaces(hmm, period_index, horizon_slots):
    """Predicted FREE slot indices for one data period."""
    return _lucid.predict_white_spaces(_json.dumps(hmm), period_index, horizon_slots)


def confusion(estimated, truth):
    return _json.loads(_lucid.confusion(estimated, truth))


def scenario_config(scenario="5-node", environment="home", regime="peak", protocol="LUCID",
                    t_data_us=60_000_000, seed=1):
    return _json.loads(_lucid.scenario_config(scenario, environment, regime, protocol, t_data_us, seed))


def simulate(config):
    """Run one simulation. `config` is a dict in the CLI's config format."""
    return _json.loads(_lucid.simulate(_json.dumps(config)))


def cli(*args):
    """Run a CLI command in-process. Returns (exit_code, stdout, stderr)."""
    return _lucid.cli([str(a) for a in args])


__all__ = [
    "ArrivalTrace", "BUSY", "FREE", "JsonError", "LucidError", "SlotFeatures", "WHITE_SPACE_US", "cli",
    "compute_pdr", "confusion", "ema_series", "gmm_classify", "gmm_fit", "hmm_fit", "label_states",
    "model_broadcast_time", "parse_trace", "predict_white_spaces", "read_trace", "scenario_config",
    "simulate", "slot_features", "subslot_tx_time", "synthesize_exponential", "synthesize_pareto",
]
