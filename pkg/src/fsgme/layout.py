"""Node field layout and reserved ids shared by the algorithm modules."""

SESSION_NONE = 0
INSTANCE_OWNED = 0

# one cell per node field, in this order
SESSION, INSTANCE, NUMBER, STATE, SIZE, PREV, NEXT, OWNER, CONDITION = range(9)
NODE_WORDS = 9
FIELD_NAMES = ("session", "instance", "number", "state", "size", "prev", "next", "owner", "condition")

# reclamation condition of a node
SAFE = 1
UNSAFE = 2
UNKNOWN = 3
