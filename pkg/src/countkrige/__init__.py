"""Local-intensity prediction for point patterns by kriging of cell counts.

The workflow: regularize a point pattern into counts on a grid of equal
square cells, derive the count-field covariance from the process's
intensity and pair correlation function, and solve an ordinary-kriging
system to predict the local intensity anywhere on the grid, including in
unobserved holes.
"""

from .errors import (
    ClampWarning,
    ConfigError,
    DegenerateInputError,
    DegenerateWarning,
    InvalidMeshError,
    InvalidWindowError,
    MonotonicityWarning,
    NoClosedFormError,
    PSDViolationError,
    ResourceLimitError,
    RidgeWarning,
    SeriesDivergenceError,
    SingularSystemError,
)
from .geometry import (
    CountField,
    PointPattern,
    Rect,
    RegularGrid,
    Window,
    build_grid,
    cell_counts,
)
from .summaries import (
    CountVariogram,
    PairCorrelation,
    SummaryEstimates,
    count_variogram,
    estimate_intensity,
    estimate_K,
    estimate_pcf,
    estimate_summaries,
)
from .procsim import (
    CoxSpec,
    DrivingField,
    MaternIISpec,
    MomentOracle,
    PoissonSpec,
    SimBatch,
    ThomasSpec,
    mc_moment_oracle,
    pcf_model,
    realize_field,
    sample_given_field,
    simulate,
    simulate_batch,
)
from .covariance import (
    APPROX_DIAGONAL,
    APPROX_FINE,
    APPROX_MIDPOINT,
    CovSpec,
    KrigingSystem,
    MODE_ESTIMATION,
    MODE_PREDICTION,
    NeumannExpansion,
    assemble_system,
    build_C,
    build_Co,
    build_G,
    neumann_inverse,
    pcf_cell_average,
)
from .kriging import (
    IntensityModel,
    IntensitySurface,
    KrigingWeights,
    krige_surface,
    predict,
    solve_all_weights,
    solve_weights,
    variance_direct,
    variance_estimation_limit,
    variance_prediction_closed,
)
from .mesh import (
    ImseValue,
    MeshReport,
    OptimalMesh,
    gradient_energy,
    imse,
    mesh_recommendation,
    optimal_mesh,
    pilot_intensity_raster,
)

__version__ = "0.1.0"
