"""Calibration transfer between spectrometers."""

from ._calxfer import (
    AffineBlend,
    DegenerateQuadError,
    DsModel,
    Error,
    FpiMap,
    LoadError,
    MfpiConfig,
    MfpiModel,
    MoebiusMap,
    PcrModel,
    PdsModel,
    SingularityError,
    TransferModel,
    bland_altman,
    cayley,
    ccw_sort,
    compose,
    ds_fit,
    fpi_apply,
    fpi_fit,
    inverse_cayley,
    kennard_stone_select,
    load_ds_model,
    load_mfpi_model,
    load_pds_model,
    loo_select_k,
    mfpi_fit,
    mrmset,
    pcr_fit,
    pds_fit,
    pds_window_search,
    rmsep,
    run_experiment,
    to_frequency,
    to_wavelength,
)

__all__ = [name for name in dir() if not name.startswith("_")]
