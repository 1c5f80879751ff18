"""Attribution heatmaps, region selection and occlusion-based faithfulness for CNN classifiers."""

__version__ = "0.1.0"

from .attribution import (  # noqa: E402
    AttributionMethod,
    Heatmap,
    attribute,
    gradient_saliency,
    lrp,
    normalize_heatmap,
    parse_method,
)
from .errors import (  # noqa: E402
    FormatError,
    InputError,
    NumericalError,
    RelevanceLensError,
    UndefinedMetricError,
    ValidationError,
)
from .nn import Model, backward, classify, forward, load_model, save_model  # noqa: E402
from .selection import (  # noqa: E402
    ClusterSelection,
    SelectionConfig,
    select,
    select_bins,
    select_kmeans,
    select_meanshift,
)
