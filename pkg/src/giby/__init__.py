"""Giant-step baby-step anomaly detection for industrial control system logs."""

from .core import (
    BoundEntry,
    BoundStore,
    Breach,
    TrainingDataError,
    Verdict,
    baby_step_test,
    baby_step_train,
    bounds_check,
    determine_bounds,
    giant_step_test,
    giant_step_train,
    render_explanation,
)
from .data_model import (
    ActuatorSpec,
    Dataset,
    DatasetParseError,
    DeviceId,
    DeviceKind,
    Label,
    Record,
    RecordReader,
    RelationshipGraph,
    Schema,
    SchemaViolation,
    nearest_neighbors,
    parse_dataset,
    validate_graph,
)
from .detector import Detector, train
from .extended import (
    DEFAULT_WINDOWS,
    ExtendedMonitor,
    ExtendedStore,
    FrequencyTable,
    SlidingProduct,
    WindowBounds,
    anom_probability,
    build_frequency_table,
    extended_test,
    extended_train,
    find_min_max_product,
    lookup_test_probability,
    pr_left,
    pr_right,
    sw_product,
)
from .switchboard import UNSEEN, Kind, dataset_diff, decode_state, encode_state, linearize

__version__ = "0.1.0"
