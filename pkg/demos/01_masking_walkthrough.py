"""
Masks from different rounds, recovered in one shot
==================================================

Two users download the model in different rounds, so their masks are
stamped with different round numbers.  Each mask is split into U-T pieces,
padded with T random noise blocks, and encoded with a Vandermonde code; user
j keeps the share evaluated at point j+1.

When the buffer flushes, every surviving user adds up the shares it holds,
weighted by the quantized staleness of each buffered update.  Any U of those
sums decode to the weighted sum of the masks, whatever rounds they came from.
"""

import numpy as np

from basecagg.field import PrimeField
from basecagg.masking import (
    RecoveryRequest,
    ShareStore,
    aggregate_encoded_shares,
    generate_mask_package,
    recover_aggregate_mask,
)

F = PrimeField(11)  # a tiny field keeps the numbers readable
N, U, T, d = 5, 3, 1, 2
rng = np.random.default_rng(0)

# user 0 downloaded in round 4, user 3 in round 6
a = generate_mask_package(owner=0, round=4, d=d, N=N, U=U, T=T, field=F, rng=rng)
b = generate_mask_package(owner=3, round=6, d=d, N=N, U=U, T=T, field=F, rng=rng)
print("mask of user 0, round 4:", a.mask)
print("mask of user 3, round 6:", b.mask)
print("partitions of user 0 (2 mask pieces + 1 noise block):\n", a.partitions)

# share distribution: user j stores one share of every package
stores = [ShareStore(j) for j in range(N)]
for pkg in (a, b):
    for j in range(N):
        stores[j].put(pkg.owner, pkg.round, pkg.shares[j])

# round 7 flush: staleness 3 and 1, quantized weights supplied by the server
req = RecoveryRequest(round=7, members=((0, 4), (3, 6)), weights=(2, 5), c_g=8)
responses = [(j, aggregate_encoded_shares(stores[j], req, F)) for j in range(N)]

# users 1 and 3 drop out; the remaining three are enough
survivors = [r for r in responses if r[0] not in (1, 3)]
recovered = recover_aggregate_mask(survivors, U, T, d, F)
expected = F.weighted_sum([a.mask, b.mask], [2, 5])
print("recovered weighted mask sum:", recovered, "expected:", expected)
assert np.array_equal(recovered, expected)
