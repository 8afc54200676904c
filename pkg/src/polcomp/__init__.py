"""polcomp: polarization compensation for wavelength-multiplexed
entanglement distribution networks.

Deterministic, seedable models of fibre birefringence and its drift,
paddle-type polarization controllers, photon-pair detection with time
tagging, coincidence/error-rate estimation, and four interchangeable
compensation schemes (manual, motorized, blinking shutters, live
error-rate minimization) with unified cost accounting.
"""

__version__ = "0.1.0"

from .analysis import (
    CoincidenceTally,
    CorrelationHistogram,
    DelayNotFound,
    Estimate,
    count_coincidences,
    cross_correlate,
    estimated_fidelity,
    expected_qber,
    fidelity_from_qber,
    find_delay,
    key_rate_positive,
    merge_histograms,
    qber,
    qber_contribution,
    visibility,
)
from .channel import (
    CompensatedPath,
    DriftProcess,
    FibreLink,
    effective_unitary,
    step_drift,
    transmission_probability,
)
from .compensate import (
    CompensationReport,
    CostModel,
    MpcConfig,
    QberAcquisition,
    compensate_blinking,
    compensate_manual,
    compensate_mpc,
    compensate_qber,
    modeled_time,
    objective_canonical,
)
from .netplan import (
    ChannelPlan,
    NetworkTopology,
    assign_channels,
    controllers_needed,
    full_mesh,
    growth_cost,
    pair_channel,
)
from .photostream import (
    DetectorModel,
    EmissionBatch,
    ShutterSchedule,
    SourceModel,
    TagStream,
    TimeTag,
    alternating_windows,
    blinking_counts,
    detect_pair_events,
    generate_pairs,
    read_ptag,
    reference_counts,
    sync_error_from_integration,
    write_ptag,
)
from .polmath import (
    DA,
    HV,
    MeasBasis,
    PaddleController,
    apply_local,
    haar_unitary,
    outcome_probs,
    paddle_unitary,
    phi_plus,
    retarder_unitary,
    single_arm_probs,
    werner_state,
)
from .scenario import Scenario, ScenarioError, build_network, parse_scenario
