"""Default numerical tolerances shared across the package."""

# cone membership: residual of the nonnegative least-squares fit
TAU_MEM = 1e-9
# strict interior margin
TAU_INT = 1e-9
# points closer than this (max-norm) are treated as one point
TAU_EQ = 1e-12

DEFAULT_LADDER = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
ENUMERATION_CAP = 10**6
