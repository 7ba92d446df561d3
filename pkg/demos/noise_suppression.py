"""
Zeno-type suppression of slow noise
-----------------------------------

Detection continuously projects the code onto a stabilizer sector. Slow
(1/f-like or constant) fields that would rotate the logical state out of
the sector are suppressed; fast white noise is not. Each pair below runs the
same noise with and without the detection Hamiltonian and monitors, and
compares <S_z> at the final time with a four-sigma rule.

Run with ``python3 demos/noise_suppression.py`` (several minutes); the full
scale versions are ``stabmon noise-suite --scenario <stem>``.
"""

from stabmon.ensemble import run_ensemble, suppression_metric
from stabmon.scenarios import get_scenario

N, T = 100, 30.0
for stem in ("constant", "oneoverf", "whitenoise"):
    on = run_ensemble(get_scenario(f"{stem}_on").override(n=N, t_final=T), master_seed=5)
    off = run_ensemble(get_scenario(f"{stem}_off").override(n=N, t_final=T), master_seed=5)
    (m1, s1), (m0, s0) = on.at("S_z", T), off.at("S_z", T)
    verdict = suppression_metric(on, off, "S_z", T)
    print(f"{stem:>10s}: <S_z>({T:g}) with detection {m1:.3f}+-{s1:.3f}, "
          f"without {m0:.3f}+-{s0:.3f} -> {'suppressed' if verdict else 'no separation'}")
