"""How often does Brownian motion stay within distance 1 of its start?

The exact answer on [0, 1] is a theta series, about 0.3708.  A Monte Carlo
estimate on a discrete grid sees the path only at grid times, so it
overestimates slightly; the bias shrinks as the grid gets finer.
"""
from stickycps import SimConfig, estimate_stickiness, gen_brownian, sup_abs_brownian_prob

exact = sup_abs_brownian_prob(1.0)
print(f"exact P(sup |W| < 1) = {exact:.6f}")
for n_steps in (64, 512, 4096):
    ens = gen_brownian(SimConfig(n_steps=n_steps, n_paths=20_000, seed=3))
    cell = estimate_stickiness(ens, 0, 1.0).cells[0]
    print(f"{n_steps:5d} steps: {cell.probability:.4f} +- {cell.stderr:.4f} "
          f"(bias {cell.probability - exact:+.4f})")

# geometric Brownian motion is sticky too; small radii need many paths to see it
gbm = gen_brownian(SimConfig(n_steps=256, n_paths=20_000, seed=4, volatility=0.2, s0=100.0),
                   geometric=True)
for delta in (1.0, 2.0, 5.0):
    cell = estimate_stickiness(gbm, 240, delta).cells[0]
    print(f"GBM over the last 1/16 of the horizon, radius {delta:3.1f}: "
          f"{cell.probability:.4f} ({int(cell.hits)} of {cell.n} paths)")
