"""Python bindings for the recursive self-aggregation toolkit."""

from ._rsa import (
    ConfigError,
    build_aggregation_prompt,
    build_prompt,
    cli,
    diversity,
    exact_chain,
    expected_steps_below,
    extract_answer,
    mc_simulate,
    normalize_answer,
    pass_at_1,
    pass_at_n,
    run_mock,
    score,
)

__all__ = [
    "ConfigError",
    "build_aggregation_prompt",
    "build_prompt",
    "cli",
    "diversity",
    "exact_chain",
    "expected_steps_below",
    "extract_answer",
    "mc_simulate",
    "normalize_answer",
    "pass_at_1",
    "pass_at_n",
    "run_mock",
    "score",
]
