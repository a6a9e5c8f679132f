from .data import SeriesData, read_series_csv, series_to_csv, write_series_csv
from .density import ForecastDensity, quad_integral_sq
from .likelihood import (
    HAR_LAGS,
    ar1_avg_loglik,
    har_avg_loglik,
    har_filter,
    har_next_eta,
    linear_avg_loglik,
    mixture_avg_loglik,
    mixture_forecast_pdf,
    psi_weight_jacobian,
    psi_weights,
    skewt_ar1_avg_loglik,
    skewt_logpdf,
    skewt_pdf,
    skewt_ppf,
)
from .params import (
    Ar1GaussianParams,
    HansenConstants,
    HarParams,
    LinearPsiParams,
    MixtureParams,
    SkewTAr1Params,
    hansen_constants,
)
from .spec import DEFAULT_HAR_PARAMS, Family, ModelSpec, family_for, har_eta_density, make_rng, simulate
