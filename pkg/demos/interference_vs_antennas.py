"""
Interference and noise after receive combining
==============================================

Five users send unit-norm updates over a Rayleigh-fading MAC. The receiver
sums the conjugate channel sums across its K antennas. We split the combined
signal into its useful part, cross-user interference and noise, then watch
the interference power fall as K grows.
"""

import numpy as np

from otafl.channel import ChannelConfig, decompose, draw_channel, estimate_aggregate, transmit_and_combine
from otafl.model import pack_complex

users, N = 5, 64
rng = np.random.default_rng(0)

# unit-norm real updates, packed two reals per complex symbol
v = rng.standard_normal((users, 2 * N))
v /= np.linalg.norm(v, axis=1, keepdims=True)
x = np.array([pack_complex(row) for row in v])
target = v.mean(axis=0)

print(f"{'K':>6} {'signal':>10} {'interf.':>10} {'noise':>10} {'rel. error':>11}")
for K in (10, 40, 160, 640, 2560):
    cfg = ChannelConfig(K=K, sigma_h2=1.0, sigma_z2=0.1)
    r = draw_channel(users, N, cfg, rng_seed=[0, K])
    sig, inter, noise = decompose(x, r, cfg)
    est = estimate_aggregate(transmit_and_combine(x, r, cfg), users, cfg)
    err = np.linalg.norm(est - target) / np.linalg.norm(target)
    print(f"{K:6d} {np.mean(abs(sig)**2):10.4f} {np.mean(abs(inter)**2):10.4f} "
          f"{np.mean(abs(noise)**2):10.4f} {err:11.3f}")

# the signal term concentrates around |S| sigma_h^2 times the mean update while
# interference and noise shrink like 1/K, so the estimate sharpens with K
