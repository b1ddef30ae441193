"""phcirc: port-Hamiltonian compilation and simulation of electrical circuits.

Netlists compile into circuit graphs, Kirchhoff-Dirac structures and
component pH systems; their interconnection yields the circuit model,
which is also emitted as (charge/flux-oriented) modified nodal analysis
and modified loop analysis and integrated implicitly with an energy
audit.
"""

__version__ = "0.1.0"

from . import assembly, components, graph, netlist, ph_core, solver  # noqa: F401
from .assembly import (  # noqa: F401
    assemble,
    circuit_blocks,
    kirchhoff_dirac,
    loop_kirchhoff_dirac,
    ph_mna_equivalence,
    to_mla,
    to_mna,
    to_mna_cf,
)
from .components import (  # noqa: F401
    ComponentModel,
    Hamiltonian,
    TransistorParams,
    Waveform,
    ebers_moll,
    pn_diode_current,
    standard_dirac,
    to_ph,
    transistor_passivity_radius,
)
from .graph import DirectedGraph, incidence_matrix  # noqa: F401
from .netlist import Netlist, build_graph, parse, serialize  # noqa: F401
from .ph_core import (  # noqa: F401
    DiracKernel,
    PHSystem,
    dirac_contains,
    interconnect,
    is_dirac,
    kernel_from_span,
    ph_residual,
    product,
)
from .solver import (  # noqa: F401
    DaeProblem,
    IntegratorConfig,
    dc_operating_point,
    energy_audit,
    simulate,
)
