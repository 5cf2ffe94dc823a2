"""PDN impedance-profile modelling and board anomaly detection."""

__version__ = "0.1.0"

from .netlist import (  # noqa: E402
    AnomalySpec,
    CapacitorSpec,
    PdnNetlist,
    PortSpec,
    RlcBranch,
    ToleranceModel,
    apply_anomalies,
    make_decap_chain_board,
    sample_variation,
    validate_netlist,
)
from .solver import BoardSignature, FrequencyGrid, ToyNetwork, s_to_z, shunt_through_z21, solve_z, z_to_s  # noqa: E402
from .frechet import FdConfig, embed_profile, fd_prime, frechet  # noqa: E402
from .detector import detect, fd_knn, fit_golden, roc  # noqa: E402
