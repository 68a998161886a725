"""Volumetric radiotherapy dose prediction: preprocessing, DVH losses, scoring."""

from ._core import (  # noqa: F401
    DosepredError,
    Geometry,
    Grid3,
    beam_dose,
    clinical_table,
    clip_dose,
    clip_rescale_ct,
    dose_at_volume,
    dose_score,
    dvh_loss,
    dvh_loss_grad,
    dvh_score,
    exact_volume_at_dose,
    generate_case,
    gradcheck,
    hu_to_density,
    lr_at,
    mae_grad,
    mae_loss,
    normalize_ptv_mean,
    override_ptv_dose,
    read_g3,
    resample,
    soft_volume_at_dose,
    volume_at_dose_pct,
    write_g3,
)

__version__ = "0.3.0"
