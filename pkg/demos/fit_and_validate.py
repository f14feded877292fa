"""Fit a generator spec to a series, re-synthesize it and score the copy.

    python3 demos/fit_and_validate.py
"""
from horizonlab.fit import fit_sdg
from horizonlab.metrics import fidelity_report
from horizonlab.sdg import ClientSpec, generate_client_series

truth = ClientSpec.uniform("sensor", 1, seasonal=[(2.0, 144.0, 0.4)], ar_coeffs=[0.5, 0.2, -0.15, 0.1, 0.15],
                           trend_slope=2e-4, noise_std=0.5)
observed = generate_client_series(truth, 20_000, seed=0)

report = fit_sdg(observed, max_peaks=3, p_max=10, criterion="bic")
s = report.spec
print(f"trend slope {s.trend_slope[0]:.2e} (true 2.0e-04), AR order {report.selected_order}")
print("AR coefficients", [round(c, 3) for c in s.ar_coeffs])
for c in s.seasonal[0]:
    print(f"seasonal: period {c.period:.2f}, amplitude {c.amplitude:.3f}, phase {c.phase:.3f}")

copy = generate_client_series(s, observed.length, seed=1)
print(fidelity_report(observed.values[0], copy.values[0]).as_dict())
