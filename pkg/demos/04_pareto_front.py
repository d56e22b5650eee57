"""
Choosing a configuration on the quality/cost frontier
=====================================================

Configuration strings have five fields: decomposition model, generation
model, verifier, variants per kind N, and temperature. A configuration is
kept on the front unless another one scores higher at equal or lower cost.
"""

import numpy as np

from halluguard.evaluation import ConfigResult, MetricsSummary, load_grid, pareto_front, pareto_points, parse_config_string

grid = load_grid("paper26")
print(len(grid), "grid configurations, e.g.", grid[0].config, "->", parse_config_string(grid[0].config).to_dict())

###############################################################################
# Synthetic results: more variants cost more tokens and usually help.

rng = np.random.default_rng(0)
results = []
for entry in grid:
    cfg = parse_config_string(entry.config)
    tokens = 400 * cfg.n_variants * len(cfg.verifier_members) * (1 + rng.random() * 0.2)
    f1 = 0.85 + 0.02 * np.log(tokens / 400) + rng.normal(0, 0.01)
    m = MetricsSummary(0, 0, float(f1), 0, 0, 0, 0, 0, mean_total_tokens=float(tokens))
    results.append(ConfigResult(entry.id, cfg, m, entry.config))

for point in pareto_points(pareto_front(results, "f1", "tokens"), "f1", "tokens"):
    print(f"{point['config_id']:>3} {point['config_string']:22s} F1={point['f1']:.4f} tokens={point['tokens']:.0f}")
