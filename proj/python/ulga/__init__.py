# Copyright 2026 The ulga Authors.
# License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

"""Structured lottery-ticket pruning of small generative audio networks."""

from ._ulga import (
    ConfigError,
    ModelConfig,
    ModelKind,
    MuLawCodec,
    Network,
    build,
    costs,
    estimate_mi,
    feasibility,
    gen_synthetic_tones,
    load,
    pareto_front,
    read_wav,
    run_experiment,
    table1_platforms,
    write_wav,
)

__all__ = [
    "ConfigError",
    "ModelConfig",
    "ModelKind",
    "MuLawCodec",
    "Network",
    "build",
    "costs",
    "estimate_mi",
    "feasibility",
    "gen_synthetic_tones",
    "load",
    "pareto_front",
    "read_wav",
    "run_experiment",
    "table1_platforms",
    "write_wav",
]
