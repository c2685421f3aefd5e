"""Simulation models of permissionless consensus on resource pools.

Processors run in timeslots against a permitter oracle that gates what may
be broadcast by the requester's resource balance.  The package provides
the execution scheduler, resource pools and permitters, example protocols
(relay broadcast on funded identifiers, longest-chain mining, stake-based
leader election), adversary constructions against them, and the
perturbation calculus that turns protocol determinism into disagreement.
"""

__version__ = "0.1.0"
