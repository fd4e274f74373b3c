//! Scale-dependent verification: EOF bases and reconstruction skill, zonal
//! energy spectra and RESS.

mod eof;
mod spectrum;

pub use eof::{
    compute_eofs, compute_eofs_weighted, eof_curve_csv, eof_skill_curve, project, project_ensemble, reconstruct,
    reconstruct_field, EofBasis, EofSkillRow, Pcs,
};
pub use spectrum::{
    earth_circumference_km, ress, spectrum_csv, wavenumber_to_wavelength, zonal_spectrum, zonal_spectrum_ensemble,
    SpectrumSeries,
};
