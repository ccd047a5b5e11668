"""Bisect coupling weights to the reference scattering counts."""
from scratch_scan import run


def tune(name, target, lo, hi):
    for _ in range(18):
        mid = 0.5 * (lo + hi)
        n_sc, _ = run(name, 2.0, mid)
        if n_sc > target:
            lo = mid  # more coupling reduces scatters
        else:
            hi = mid
    print(f"{name}: w = {mid:.4f} -> scatters {n_sc:.4f} (target {target})")
    run(name, 2.0, mid, report=True)
    return mid


wb = tune("nodeB", 2.1, 0.4, 0.7)
wa = tune("nodeA", 5.3, 0.5, 0.8)
print(wa, wb)
