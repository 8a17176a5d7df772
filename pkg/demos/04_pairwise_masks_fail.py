"""
Why pairwise masks break under buffering
========================================

Classic secure aggregation has users i < j add and subtract a shared
pseudo-random mask, so the masks cancel when everyone from the same round is
summed.  A buffered server mixes updates downloaded in different rounds.
Once the masks are stamped with those rounds the pairs no longer match, and
a residue survives in the sum.
"""

from basecagg.field import PrimeField
from basecagg.masking import pairwise_residue

F = PrimeField()

same_round = [(0, 5), (1, 5), (2, 5)]
mixed = [(0, 5), (1, 4), (2, 5)]
print("residue, all from round 5:", pairwise_residue(same_round, 4, F))
print("residue, user 1 from round 4:", pairwise_residue(mixed, 4, F))
