"""Analytic loss curves and the server's horizon for a small federation.

    python3 demos/horizon_decision.py
"""
from horizonlab.horizon import client_optimal_horizon, decide_horizons
from horizonlab.loss import server_aggregate_curve, total_loss_curve
from horizonlab.sdg import ClientSpec

clients = [
    ClientSpec.uniform("north", 2, seasonal=[(1.0, 24.0, 0.0)], ar_coeffs=[0.6], noise_std=0.3),
    ClientSpec.uniform("south", 2, seasonal=[(1.0, 20.0, 0.5)], ar_coeffs=[0.8], noise_std=0.3),
    ClientSpec.uniform("east", 1, seasonal=[(0.5, 12.0, 0.0)], ar_coeffs=[0.95], noise_std=0.5),
]
lengths = [6000, 6000, 3000]

for spec in clients:
    h = client_optimal_horizon(spec)
    print(f"{spec.client_id:>6}: l_AR={h.l_ar:3d}  T_tau={h.t_tau:3d}  H*={h.h_star}")

decision = decide_horizons(clients, lengths, tau=0.95, alpha=0.0)
print(f"server horizon (weighted mean of client H*): {decision.server_horizon}")

# with unit constants the approximation bound dominates the total; the decision
# above depends only on memory and seasonal coverage
grid = list(range(2, 65, 2))
curves = [total_loss_curve(s, grid, 4, L) for s, L in zip(clients, lengths)]
server = server_aggregate_curve(curves, decision.data_weights)
print("H    bayes     approx    total")
for H, b in zip(server.horizons[::4], server.values[::4]):
    print(f"{H:<4d} {b.bayes:9.4f} {b.approx:9.4f} {b.total:9.4f}")
