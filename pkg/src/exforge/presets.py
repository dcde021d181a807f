"""Reference victims used by the benchmarks and the acceptance suite.

``grid-digits`` is the easy task: a random dense generator already lands
near the class templates.  ``spirals`` is the hard one, since the decision
boundary is thin and winds through the whole box.
"""
from __future__ import annotations

from pathlib import Path

from .data import SyntheticSpec, generate
from .exceptions import ConfigurationError
from .oracle import VictimModel, train_victim

REFERENCE_SPECS = {
    "grid-digits": SyntheticSpec("grid-digits", 3000, 36, 10, 0.6, 7),
    "spirals": SyntheticSpec("spirals", 3000, 2, 3, 0.03, 7),
}

# Weight decay keeps the logits' per-example mean near zero and the largest
# logit gap well inside the p_min clipping range.
REFERENCE_TRAINING = {
    "grid-digits": dict(epochs=60, hidden_layer_sizes=(32,), weight_decay=5e-3),
    "spirals": dict(epochs=200, hidden_layer_sizes=(64, 64), weight_decay=2e-3),
}


def reference_victim(name: str, cache_dir=None) -> VictimModel:
    """Train (or load from ``cache_dir``) one of the reference victims."""
    if name not in REFERENCE_SPECS:
        raise ConfigurationError(f"unknown reference victim {name!r}; "
                                 f"choose from {sorted(REFERENCE_SPECS)}")
    path = Path(cache_dir) / f"victim-{name}.json" if cache_dir is not None else None
    if path is not None and path.exists():
        return VictimModel.load(path)
    victim = train_victim(generate(REFERENCE_SPECS[name]), **REFERENCE_TRAINING[name])
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        victim.save(path)
    return victim
