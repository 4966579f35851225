"""Forecast-based extension of multichannel time series and paired k-fold
age regression on the original and extended cohorts."""

import json as _json

from . import _tsaug
from ._tsaug import (
    FormatError,
    Forecaster,
    NumericalError,
    Record,
    augment,
    gen_synthetic,
    load_csv,
    load_forecaster,
    load_tsds,
    save_csv,
    save_tsds,
)

__all__ = [
    "FormatError",
    "Forecaster",
    "NumericalError",
    "Record",
    "augment",
    "default_config",
    "evaluate",
    "gen_synthetic",
    "load_csv",
    "load_forecaster",
    "load_tsds",
    "run_experiment",
    "save_csv",
    "save_tsds",
    "sweep",
    "train_forecaster",
]


def _dump(config):
    if config is None:
        return "{}"
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def default_config():
    return _json.loads(_tsaug.default_config())


def train_forecaster(records, mode, config=None):
    return _tsaug.train_forecaster(records, mode, _dump(config))


def evaluate(baseline, augmented, config=None):
    return _tsaug.evaluate(baseline, augmented, _dump(config))


def sweep(baseline, forecaster, steps, config=None):
    return _tsaug.sweep(baseline, forecaster, list(steps), _dump(config))


def run_experiment(config, out_dir):
    return _tsaug.run_experiment(_dump(config), str(out_dir))
