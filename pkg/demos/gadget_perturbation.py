"""
A two-local gadget for three-local detection
--------------------------------------------

The three-local couplings Z Z X_m are produced at second order from two-local
terms by ancilla qubits held in their ground space by a strong K. The
second-order effective Hamiltonian misses the exact low-energy block by an
amount of order K eps^3, so the residual in units of the coupling K eps^2
falls linearly with eps. The expansion is only trusted inside the
convergence radius 4 ||eps V|| < gap.

Run with ``python3 demos/gadget_perturbation.py`` (seconds).
"""

from stabmon.gadgets import build_bs_gadget, build_zz_gadget, residual_slope, residual_table

for tag, build in (("ZZ", build_zz_gadget), ("Bacon-Shor", build_bs_gadget)):
    spec = build(1.0, 0.1)
    print(f"\n{tag} gadget")
    print("   eps   order   residual/(K eps^2)   4||eps V||/gap")
    for eps, order, res, ratio in residual_table(spec, eps_values=(0.2, 0.1, 0.05), orders=(1, 2)):
        print(f"  {eps:5.2f}    {order}      {res:.3e}          {ratio:.3f}")
    print(f"  log-log slope of the exact second-order mismatch: {residual_slope(spec, [0.2, 0.1, 0.05]):.2f}")
