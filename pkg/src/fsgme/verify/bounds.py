"""Worst-case operation counts for the entry and exit sections.

Both figures count shared-cell operations (reads, writes, CAS, FAA) made by
one process, for the default build (helping and reclamation on, no DSM
notifications).  They are derived from the code's straight-line shape and
do not depend on ``n``; the acceptance suite checks measured counts against
them.
"""

from __future__ import annotations

from ..reclaim import QUANTUM

# read head, publish it in a hazard slot, re-read head
READ_HEAD = 3
# read + CAS, retried once: the only concurrent change is the other guard landing
GUARD = 4
# read state, read size, CAS
VACANT_TRY = 3

# acquire (read + write condition), seven field writes, publish in announce
GET_NEW_NODE = 2 + 7 + 1
# read own announce, help index, helpee slot; hazard write; re-validate; helpee instance and state
SELECT_NEXT = 7
# CAS next, read next, hazard write, test head, write prev, read + write help index, CAS head
APPEND_TAIL = 8
# announce reset, ownership write, state store
RETIRE = 3
# densest cleanup micro-step: slot read, condition, owner, condition, write
CLEANUP_STEP = 5

EXIT_OPS = {
    "read_head": READ_HEAD,
    "owner": 1,
    "guard": GUARD,
    "leave": 1,
    "vacant": VACANT_TRY,
    "release_hazard": 1,
}

# Homogeneous workload: the only session change an entry can observe is the
# initial placeholder head giving way to the common session, so an entry runs
# at most one conflicting iteration, one joining (or leading) iteration, and
# one extra head read.
ENTRY_OPS = {
    "get_new_node": GET_NEW_NODE,
    "conflict_iteration": READ_HEAD + 1 + GUARD + VACANT_TRY + 1 + 1 + SELECT_NEXT + APPEND_TAIL,
    "head_retry": READ_HEAD,
    "join_iteration": READ_HEAD + 1 + 1 + 1 + 1 + RETIRE,
    "release_hazards": 2,
    "cleanup_slice": QUANTUM * CLEANUP_STEP,
}

K_EXIT = sum(EXIT_OPS.values())
C_ENTRY = sum(ENTRY_OPS.values())
