"""Primitive operation tags for the simulated match-action pipeline.

Every step the data plane executes is describable by one of these tags.
The whitelist is the set of integer operations a protocol-independent
packet pipeline can perform per packet: table reads, add/sub/mul, constant
shifts, comparisons, and branch selects.  Division, floating point, and
data-dependent loops are deliberately absent.

Saturating add/sub/mul count as single ADD/SUB/MUL primitives; the
rounding rescale after a multiply-accumulate is one ADD (rounding bias)
plus one SHIFT.  COMPARE/SELECT are emitted only for explicit data-path
branches (activation selects, range clamps), not for the saturation
checks folded into the arithmetic primitives.
"""

TABLE_LOOKUP = "TABLE_LOOKUP"
ADD = "ADD"
SUB = "SUB"
MUL = "MUL"
SHIFT = "SHIFT"
COMPARE = "COMPARE"
SELECT = "SELECT"

OP_WHITELIST = frozenset(
    {TABLE_LOOKUP, ADD, SUB, MUL, SHIFT, COMPARE, SELECT}
)

# Tag sequences for composite steps, so emitters stay consistent.
QMUL_TAGS = (MUL, ADD, SHIFT)  # widened product, rounding bias, rescale
RESCALE_TAGS = (ADD, SHIFT)  # rounding bias + shift of an accumulator
CLAMP_TAGS = (COMPARE, SELECT, COMPARE, SELECT)  # two-sided range clamp
